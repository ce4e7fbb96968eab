"""Batch orchestration: seeded sampling runs and hyperparameter sweeps.

Randomness is addressed, never sequential: trajectory i always draws from
stream (seed, i) regardless of batch size or cell order, so every sweep
cell at a fixed seed consumes the identical start batch and any subset of
cells can be reproduced in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO

import numpy as np

from ..errors import FlowLabError
from ..flow import TimeGrid, make_shifted_grid
from ..guidance import sample_mg
from ..metrics import MetricReport, SampleSet, evaluate_samples
from ..mixture import AnalyticField, GaussianMixture, load_mixture
from ..mlp import MlpField, load_checkpoint
from ..streams import RNG_ALGORITHM, reference_stream, trajectory_stream
from .config import ExperimentConfig


def build_field(cfg: ExperimentConfig, mixture: GaussianMixture):
    if cfg.field == "analytic":
        return AnalyticField(mixture)
    if cfg.field == "smoothed":
        return AnalyticField(mixture, epsilon=cfg.epsilon)
    params, _ = load_checkpoint(cfg.checkpoint)
    return MlpField(params)


def make_grid(cfg: ExperimentConfig, n_steps: int | None = None) -> TimeGrid:
    return make_shifted_grid(n_steps or cfg.n_steps, cfg.shift)


def draw_start_batch(seed: int, n: int, mixture: GaussianMixture):
    """Noise points and prior-drawn class conditions, one stream per trajectory.

    Per trajectory the stream yields the noise vector first, then one
    uniform that picks the class by inverse CDF over the class priors.
    """
    d = mixture.dim
    priors = mixture.class_priors()
    class_ids = np.array(sorted(priors))
    cum = np.cumsum([priors[int(c)] for c in class_ids])
    cum[-1] = 1.0
    z0 = np.empty((n, d))
    labels = np.empty(n, dtype=int)
    for i in range(n):
        g = trajectory_stream(seed, i)
        z0[i] = g.standard_normal(d)
        labels[i] = class_ids[np.searchsorted(cum, g.random(), side="right")]
    return z0, labels


def reference_sample(mixture: GaussianMixture, n: int, seed: int, tag: int = 0) -> SampleSet:
    """Independent draw from the target mixture on its own stream."""
    pts, labels = mixture.sample(n, reference_stream(seed, tag))
    return SampleSet(pts, labels, provenance=f"reference seed={seed} tag={tag} rng={RNG_ALGORITHM}")


def run_sample(cfg: ExperimentConfig, keep_trajectories: bool = False):
    """Sample cfg.n_trajectories endpoints under the configured guidance.

    Returns (SampleSet, TrajectoryRecord or None).  Fixed (config, seed)
    gives a bit-identical sample set.
    """
    if cfg.n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1 to draw a sample")
    mixture = load_mixture(cfg.mixture_path())
    field = build_field(cfg, mixture)
    z0, labels = draw_start_batch(cfg.seed, cfg.n_trajectories, mixture)
    record = sample_mg(
        field, make_grid(cfg), z0, labels, cfg.guidance, keep_steps=keep_trajectories
    )
    provenance = (
        f"run_sample seed={cfg.seed} field={cfg.field} eps={cfg.epsilon} "
        f"steps={cfg.n_steps} rng={RNG_ALGORITHM}"
    )
    samples = SampleSet(record.z_final, labels, provenance=provenance)
    return samples, (record if keep_trajectories else None)


def write_samples_csv(f: IO[str], samples: SampleSet) -> None:
    d = samples.dim
    f.write(",".join([f"x_{j}" for j in range(d)] + ["class"]) + "\n")
    labels = samples.labels if samples.labels is not None else np.full(len(samples), -1)
    for pt, lab in zip(samples.points, labels):
        f.write(",".join(format(v, ".17g") for v in pt) + f",{int(lab)}\n")


@dataclass
class SweepRow:
    alpha: float
    beta: float
    cfg_omega: float
    n_steps: int
    report: MetricReport | None
    error: str = ""

    def csv_row(self) -> str:
        head = [
            format(self.alpha, ".17g"),
            format(self.beta, ".17g"),
            format(self.cfg_omega, ".17g"),
            str(self.n_steps),
        ]
        if self.report is not None:
            body = self.report.csv_row()
        else:
            body = ",".join(["nan"] * 4 + ["0", "0", "0"])
        clean = self.error.replace('"', "'")
        return ",".join(head + [body, f'"{clean}"'])


@dataclass
class SweepResult:
    rows: list[SweepRow]

    CSV_HEADER = "alpha,beta,cfg_omega,n_steps," + MetricReport.CSV_HEADER + ",error"

    def write_csv(self, f: IO[str]) -> None:
        f.write(self.CSV_HEADER + "\n")
        for row in self.rows:
            f.write(row.csv_row() + "\n")

    def ok_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.report is not None]

    def best(self, top: int = 1) -> list[SweepRow]:
        return sorted(self.ok_rows(), key=lambda r: r.report.frechet)[:top]


def _cell_sample(cfg, field, z0, labels, alpha, beta, omega, n_steps):
    gcfg = replace(cfg.guidance, alpha=alpha, beta=beta, cfg_omega=omega)
    grid = make_grid(cfg, n_steps)
    record = sample_mg(field, grid, z0, labels, gcfg, keep_steps=False)
    return record.z_final


def run_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Evaluate every sweep cell against one shared reference draw.

    All cells consume the identical start batch (it depends only on the
    seed), so metric differences across cells reflect the guidance settings
    alone.  Per-cell failures are recorded in the row's error column instead
    of aborting the sweep.
    """
    mixture = load_mixture(cfg.mixture_path())
    field = build_field(cfg, mixture)
    reference = reference_sample(mixture, cfg.metric_samples, cfg.seed, tag=0)
    z0, labels = draw_start_batch(cfg.seed, cfg.n_trajectories, mixture)
    rows = []
    for alpha, beta, omega, n_steps in cfg.sweep.cells():
        try:
            endpoints = _cell_sample(cfg, field, z0, labels, alpha, beta, omega, n_steps)
            report = evaluate_samples(
                reference, endpoints, k=cfg.metric_k, mmd_bandwidth=cfg.mmd_bandwidth
            )
            rows.append(SweepRow(alpha, beta, omega, n_steps, report))
        except FlowLabError as e:
            rows.append(SweepRow(alpha, beta, omega, n_steps, None, error=str(e)))
    return SweepResult(rows)


def promote_best(cfg: ExperimentConfig, result: SweepResult) -> SweepResult:
    """Re-evaluate the top sweep cells at 4x the metric sample size."""
    top = result.best(cfg.promote_top)
    if not top:
        return SweepResult([])
    mixture = load_mixture(cfg.mixture_path())
    field = build_field(cfg, mixture)
    big_n = 4 * cfg.n_trajectories
    reference = reference_sample(mixture, 4 * cfg.metric_samples, cfg.seed, tag=1)
    z0, labels = draw_start_batch(cfg.seed, big_n, mixture)
    rows = []
    for cell in top:
        try:
            endpoints = _cell_sample(
                cfg, field, z0, labels, cell.alpha, cell.beta, cell.cfg_omega, cell.n_steps
            )
            report = evaluate_samples(
                reference, endpoints, k=cfg.metric_k, mmd_bandwidth=cfg.mmd_bandwidth
            )
            rows.append(SweepRow(cell.alpha, cell.beta, cell.cfg_omega, cell.n_steps, report))
        except FlowLabError as e:
            rows.append(
                SweepRow(cell.alpha, cell.beta, cell.cfg_omega, cell.n_steps, None, error=str(e))
            )
    return SweepResult(rows)


def write_trajectories(out_dir: Path, record, limit: int) -> list[Path]:
    """Dump up to ``limit`` per-trajectory CSV files from a batched record."""
    paths = []
    n = record.z_final.shape[0] if record.z_final.ndim == 2 else 1
    for i in range(min(limit, n)):
        single = record.single(i) if record.z.ndim == 3 else record
        path = out_dir / f"trajectory_{i}.csv"
        with open(path, "w") as f:
            single.write_csv(f)
        paths.append(path)
    return paths
