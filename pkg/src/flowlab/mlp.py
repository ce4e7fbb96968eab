"""A small trainable velocity network (numpy, manual backprop).

The network regresses the interpolation slope x1 - x0 from the interpolated
point, giving an honestly imperfect velocity field for guidance
experiments.  Architecture: [x, t, sin(2*pi*t), cos(2*pi*t)] -> hidden ->
hidden -> velocity, tanh activations, with a per-class embedding row added
to the first pre-activation.  The embedding table carries one extra row
used when the class label is dropped, so a single set of weights serves
both the conditional and the unconditional field.

Training is plain SGD with a fixed rate; a parameter EMA is maintained as a
second, smoother checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .mixture import GaussianMixture
from .streams import training_stream

N_TIME_FEATURES = 3


@dataclass
class MlpParams:
    w1: np.ndarray  # (d + 3, hidden)
    b1: np.ndarray  # (hidden,)
    emb: np.ndarray  # (n_classes + 1, hidden); last row = unconditional
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray  # (hidden,)
    w3: np.ndarray  # (hidden, d)
    b3: np.ndarray  # (d,)

    def __post_init__(self):
        in_dim, hidden = self.w1.shape
        d = self.w3.shape[1]
        ok = (
            in_dim == d + N_TIME_FEATURES
            and self.b1.shape == (hidden,)
            and self.emb.ndim == 2
            and self.emb.shape[1] == hidden
            and self.emb.shape[0] >= 2
            and self.w2.shape == (hidden, hidden)
            and self.b2.shape == (hidden,)
            and self.w3.shape == (hidden, d)
            and self.b3.shape == (d,)
        )
        if not ok:
            raise ValueError("inconsistent parameter shapes")
        if not all(np.all(np.isfinite(getattr(self, f.name))) for f in fields(self)):
            raise ValueError("parameters must be finite")

    @property
    def dim(self) -> int:
        return self.w3.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.emb.shape[0] - 1

    def copy(self) -> "MlpParams":
        return MlpParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_params(dim: int, n_classes: int, hidden: int, rng: np.random.Generator) -> MlpParams:
    """Seeded uniform init in [-a, a] with a = 1/sqrt(fan_in) per layer."""
    in_dim = dim + N_TIME_FEATURES
    a1 = 1.0 / np.sqrt(in_dim)
    a2 = 1.0 / np.sqrt(hidden)
    return MlpParams(
        w1=rng.uniform(-a1, a1, (in_dim, hidden)),
        b1=rng.uniform(-a1, a1, hidden),
        emb=rng.uniform(-a1, a1, (n_classes + 1, hidden)),
        w2=rng.uniform(-a2, a2, (hidden, hidden)),
        b2=rng.uniform(-a2, a2, hidden),
        w3=rng.uniform(-a2, a2, (hidden, dim)),
        b3=rng.uniform(-a2, a2, dim),
    )


def zero_params_like(params: MlpParams) -> MlpParams:
    return MlpParams(**{k: np.zeros_like(v) for k, v in params.arrays().items()})


def _features(x: np.ndarray, t) -> np.ndarray:
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    two_pi_t = 2.0 * np.pi * t
    return np.column_stack([x, t, np.sin(two_pi_t), np.cos(two_pi_t)])


def _class_rows(params: MlpParams, c, B: int) -> np.ndarray:
    if c is None:
        return np.full(B, params.n_classes)
    idx = np.asarray(c)
    if idx.ndim == 0:
        idx = np.full(B, int(idx))
    if idx.shape != (B,):
        raise ValueError("condition array must have one label per row")
    if np.any(idx < 0) or np.any(idx > params.n_classes):
        raise ValueError("class label out of range for the embedding table")
    return idx


def forward(params: MlpParams, x: np.ndarray, t, c=None) -> np.ndarray:
    """Deterministic forward pass; x is (d,) or (B, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != params.dim:
        raise ValueError(f"expected {params.dim}-dimensional points")
    rows = _class_rows(params, c, X.shape[0])
    h1 = np.tanh(_features(X, t) @ params.w1 + params.b1 + params.emb[rows])
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    out = h2 @ params.w3 + params.b3
    return out[0] if single else out


def loss_and_grad(params: MlpParams, x0: np.ndarray, x1: np.ndarray, t: np.ndarray, c):
    """Mean squared velocity-regression error and its exact gradient.

    The target is x1 - x0 and the network is evaluated at the interpolated
    point t*x1 + (1-t)*x0.  Gradients come from reverse-mode accumulation
    through the two tanh layers.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    if x0.shape != x1.shape or x0.shape[0] == 0:
        raise ValueError("x0 and x1 must be matching nonempty batches")
    B = x0.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
    rows = _class_rows(params, c, B)

    xt = t[:, None] * x1 + (1.0 - t[:, None]) * x0
    y = x1 - x0
    feats = _features(xt, t)
    h1 = np.tanh(feats @ params.w1 + params.b1 + params.emb[rows])
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    out = h2 @ params.w3 + params.b3

    resid = out - y
    loss = float(np.mean(np.sum(resid**2, axis=1)))

    dout = 2.0 * resid / B
    dw3 = h2.T @ dout
    db3 = dout.sum(axis=0)
    da2 = (dout @ params.w3.T) * (1.0 - h2**2)
    dw2 = h1.T @ da2
    db2 = da2.sum(axis=0)
    da1 = (da2 @ params.w2.T) * (1.0 - h1**2)
    dw1 = feats.T @ da1
    db1 = da1.sum(axis=0)
    demb = np.zeros_like(params.emb)
    np.add.at(demb, rows, da1)

    grad = MlpParams(w1=dw1, b1=db1, emb=demb, w2=dw2, b2=db2, w3=dw3, b3=db3)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    steps: int = 20000
    time_law: str = "uniform"
    p_drop: float = 0.1
    ema_decay: float = 0.999
    seed: int = 0
    hidden: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        if self.time_law != "uniform":
            raise ValueError("only the uniform time-sampling law is supported")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def train(gmm: GaussianMixture, cfg: TrainConfig):
    """SGD on the velocity-regression loss with class dropping.

    Per step the stream draws, in order: target samples (uniform +
    normal per point), the drop mask, prior samples, and the batch times.
    Returns (params, ema_params, loss_curve).
    """
    rng = training_stream(cfg.seed)
    n_classes = gmm.classes().size
    params = init_params(gmm.dim, n_classes, cfg.hidden, rng)
    ema = params.copy()
    curve = np.empty(cfg.steps)
    lr, decay = cfg.learning_rate, cfg.ema_decay

    for step in range(cfg.steps):
        x1, labels = gmm.sample(cfg.batch_size, rng)
        drop = rng.random(cfg.batch_size) < cfg.p_drop
        rows = np.where(drop, n_classes, labels)
        x0 = rng.standard_normal((cfg.batch_size, gmm.dim))
        t = rng.random(cfg.batch_size)
        loss, grad = loss_and_grad(params, x0, x1, t, rows)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        params = MlpParams(
            **{k: v - lr * getattr(grad, k) for k, v in params.arrays().items()}
        )
        # incremental EMA form: bit-exact fixed point when params stop moving
        if decay == 0.0:
            ema = params.copy()
        else:
            ema = MlpParams(
                **{
                    k: v + (1.0 - decay) * (getattr(params, k) - v)
                    for k, v in ema.arrays().items()
                }
            )
        curve[step] = loss
    return params, ema, curve


class MlpField:
    """Trained network as a VelocityField (c=None uses the drop row)."""

    def __init__(self, params: MlpParams):
        self.params = params

    def __call__(self, x: np.ndarray, t: float, c=None) -> np.ndarray:
        return forward(self.params, x, t, c)


def save_checkpoint(path: str | Path, params: MlpParams, meta: dict | None = None) -> None:
    """Write parameters plus a JSON metadata record to an .npz file."""
    payload = {k: v for k, v in params.arrays().items()}
    payload["meta_json"] = np.array(json.dumps(meta or {}))
    np.savez(path, **payload)


def load_checkpoint(path: str | Path):
    """Load a checkpoint, validating shape consistency.  Returns (params, meta)."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {f.name: data[f.name] for f in fields(MlpParams)}
            meta = json.loads(str(data["meta_json"]))
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e
    except KeyError as e:
        raise ConfigError(f"checkpoint {path} is missing array {e}") from e
    try:
        params = MlpParams(**arrays)
    except ValueError as e:
        raise ConfigError(f"checkpoint {path} failed shape validation: {e}") from e
    return params, meta
