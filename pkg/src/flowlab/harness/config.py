"""Experiment configuration: a TOML file mirrorring ExperimentConfig.

The file header pins the random-stream algorithm (``# rng: philox4x64-10``)
because the generator identity is part of the reproducibility contract.
Top-level keys mirror the dataclass field names exactly; ``[guidance]``,
``[sweep]`` and ``[train]`` are nested tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..guidance import GuidanceConfig
from ..mixture import tree_mixture_path
from ..mlp import TrainConfig
from ..streams import RNG_ALGORITHM

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

FIELD_CHOICES = ("analytic", "smoothed", "mlp")


@dataclass(frozen=True)
class SweepRanges:
    """Grid axes for a hyperparameter sweep; each axis strictly increasing."""

    alpha: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    beta: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8)
    cfg_omega: tuple[float, ...] = (1.0,)
    n_steps: tuple[int, ...] = (16,)

    def __post_init__(self):
        for name in ("alpha", "beta", "cfg_omega", "n_steps"):
            vals = tuple(getattr(self, name))
            object.__setattr__(self, name, vals)
            if len(vals) == 0:
                raise ConfigError(f"sweep axis {name} must be nonempty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"sweep axis {name} must be strictly increasing")

    def cells(self):
        """Deterministic cell order: n_steps, omega, alpha, beta."""
        for n in self.n_steps:
            for omega in self.cfg_omega:
                for alpha in self.alpha:
                    for beta in self.beta:
                        yield alpha, beta, omega, n

    def to_dict(self) -> dict:
        return {
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "cfg_omega": list(self.cfg_omega),
            "n_steps": list(self.n_steps),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run, sweep, or training job."""

    mixture: str = ""
    field: str = "analytic"
    epsilon: float = 0.0
    checkpoint: str = ""
    n_steps: int = 16
    shift: float = 1.0
    n_trajectories: int = 8192
    metric_samples: int = 8192
    metric_k: int = 3
    mmd_bandwidth: float = 0.2
    promote_top: int = 3
    save_trajectories: int = 4
    seed: int = 0
    out_dir: str = "out"
    guidance: GuidanceConfig = dc_field(default_factory=GuidanceConfig)
    sweep: SweepRanges = dc_field(default_factory=SweepRanges)
    train: TrainConfig = dc_field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.field not in FIELD_CHOICES:
            raise ConfigError(f"field must be one of {FIELD_CHOICES}, got {self.field!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.field == "mlp" and not self.checkpoint:
            raise ConfigError("field 'mlp' requires a checkpoint path")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if self.shift < 1.0:
            raise ConfigError("shift must be >= 1")
        if self.n_trajectories < 0 or self.metric_samples < 1:
            raise ConfigError("sample sizes must be positive")
        if self.metric_k < 1:
            raise ConfigError("metric_k must be >= 1")
        if self.mmd_bandwidth <= 0:
            raise ConfigError("mmd_bandwidth must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.promote_top < 0 or self.save_trajectories < 0:
            raise ConfigError("promote_top and save_trajectories must be >= 0")

    def mixture_path(self) -> Path:
        return Path(self.mixture) if self.mixture else tree_mixture_path()

    def to_dict(self) -> dict:
        return {
            "mixture": self.mixture,
            "field": self.field,
            "epsilon": self.epsilon,
            "checkpoint": self.checkpoint,
            "n_steps": self.n_steps,
            "shift": self.shift,
            "n_trajectories": self.n_trajectories,
            "metric_samples": self.metric_samples,
            "metric_k": self.metric_k,
            "mmd_bandwidth": self.mmd_bandwidth,
            "promote_top": self.promote_top,
            "save_trajectories": self.save_trajectories,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "guidance": self.guidance.to_dict(),
            "sweep": self.sweep.to_dict(),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "guidance" in doc:
                doc["guidance"] = GuidanceConfig.from_dict(doc["guidance"])
            if "sweep" in doc:
                doc["sweep"] = SweepRanges(**doc["sweep"])
            if "train" in doc:
                doc["train"] = TrainConfig(**doc["train"])
            return cls(**doc)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid config: {e}") from e


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}") from e
    return ExperimentConfig.from_dict(doc)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        r = repr(v)
        return r if any(ch in r for ch in ".einf") else r + ".0"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write the config back out as TOML (round-trips through load_config)."""
    doc = cfg.to_dict()
    lines = [f"# rng: {RNG_ALGORITHM}"]
    tables = {k: doc.pop(k) for k in ("guidance", "sweep", "train")}
    for key, val in doc.items():
        lines.append(f"{key} = {_toml_value(val)}")
    for name, table in tables.items():
        lines.append("")
        lines.append(f"[{name}]")
        for key, val in table.items():
            lines.append(f"{key} = {_toml_value(val)}")
    Path(path).write_text("\n".join(lines) + "\n")


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply CLI-style overrides; alpha/beta/omega land in the guidance table."""
    guidance_keys = {"alpha": "alpha", "beta": "beta", "omega": "cfg_omega"}
    gkwargs = {}
    ckwargs = {}
    for key, val in overrides.items():
        if val is None:
            continue
        if key in guidance_keys:
            gkwargs[guidance_keys[key]] = val
        elif key == "steps":
            ckwargs["n_steps"] = val
        elif key == "out":
            ckwargs["out_dir"] = val
        else:
            ckwargs[key] = val
    if gkwargs:
        ckwargs["guidance"] = replace(cfg.guidance, **gkwargs)
    try:
        return replace(cfg, **ckwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid override: {e}") from e
