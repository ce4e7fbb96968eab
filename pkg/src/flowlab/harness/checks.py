"""Self-check battery: invariants that must hold on a fresh checkout.

Each check runs independently and may never raise; failures are collected
with their measured residuals so the CLI can report all of them at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..flow import CountingField, integrate, make_uniform_grid
from ..guidance import GuidanceConfig, MomentumState, momentum_read, sample_mg
from ..mixture import (
    AnalyticField,
    load_mixture,
    log_density_and_score,
    marginal_at,
    mc_velocity,
    optimal_velocity,
    responsibilities,
    score_velocity_identity_check,
)
from ..streams import substream
from .config import ExperimentConfig

PROBE_STREAM = 1 << 60  # scratch stream, outside the trajectory range


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _probe_points(mixture, rng, n, t_max=0.99):
    """(x, t) probes drawn from the time-t marginal so overlap is healthy."""
    ts = rng.uniform(0.0, t_max, n)
    x1, _ = mixture.sample(n, rng)
    x0 = rng.standard_normal((n, mixture.dim))
    xs = ts[:, None] * x1 + (1.0 - ts[:, None]) * x0
    return xs, ts


def _check_mixture_file(cfg):
    mixture = load_mixture(cfg.mixture_path())
    return True, f"{mixture.n_components} components, dim {mixture.dim}"


def _check_score_identity(cfg):
    mixture = load_mixture(cfg.mixture_path())
    rng = substream(cfg.seed, PROBE_STREAM)
    xs, ts = _probe_points(mixture, rng, 200)
    worst = 0.0
    for x, t in zip(xs, ts):
        _, score = log_density_and_score(marginal_at(mixture, t), x)
        resid = score_velocity_identity_check(mixture, x, t)
        worst = max(worst, resid / (1.0 + float(np.linalg.norm(score))))
    return worst < 1e-8, f"max relative residual {worst:.3e}"


def _check_responsibilities(cfg):
    mixture = load_mixture(cfg.mixture_path())
    rng = substream(cfg.seed, PROBE_STREAM + 1)
    xs, ts = _probe_points(mixture, rng, 128)
    worst = 0.0
    for x, t in zip(xs, ts):
        r = responsibilities(mixture, x, t)
        worst = max(worst, abs(float(r.sum()) - 1.0), -float(r.min()))
    return worst < 1e-12, f"worst deviation {worst:.3e}"


def _check_reduction(cfg):
    mixture = load_mixture(cfg.mixture_path())
    field = AnalyticField(mixture)
    grid = make_uniform_grid(16)
    z0 = substream(cfg.seed, PROBE_STREAM + 2).standard_normal((256, mixture.dim))
    plain = integrate(field, grid, z0)
    degenerate = GuidanceConfig(alpha=0.0, beta=0.7, cfg_omega=1.0)
    guided = sample_mg(field, grid, z0, None, degenerate)
    same = np.array_equal(plain.z_final, guided.z_final) and np.array_equal(plain.z, guided.z)
    return same, "alpha=0, omega=1 path is bit-identical to plain Euler"


def _check_inertness(cfg):
    mixture = load_mixture(cfg.mixture_path())
    field = AnalyticField(mixture)
    grid = make_uniform_grid(8)
    z0 = substream(cfg.seed, PROBE_STREAM + 3).standard_normal((64, mixture.dim))
    active = GuidanceConfig(alpha=0.7, beta=0.5)
    guided = sample_mg(field, grid, z0, None, active)
    plain = integrate(field, grid, z0)
    first_equal = np.array_equal(guided.z[1], plain.z[1])

    const = np.array([0.3, -0.2])
    constant_field = lambda x, t, c=None: np.broadcast_to(const, np.shape(x)).copy()
    g2 = sample_mg(constant_field, grid, z0, None, active)
    p2 = integrate(constant_field, grid, z0)
    const_equal = np.array_equal(g2.z_final, p2.z_final)
    return first_equal and const_equal, "step-0 and constant-field trajectories match Euler"


def _check_debias(cfg):
    beta = 0.5
    state = MomentumState(m=np.array(0.5), count=1, zero_init=True)
    first = float(momentum_read(state, beta, True, False, np.array(1.0)))
    state = MomentumState(m=np.array(0.25), count=2, zero_init=True)
    second = float(momentum_read(state, beta, True, False, np.array(1.0)))
    ok = first == 1.0 and second == 0.25 / 0.75
    return ok, f"debiased reads {first:.6f}, {second:.6f} (want 1, 1/3)"


def _check_eval_budget(cfg):
    mixture = load_mixture(cfg.mixture_path())
    n_steps = 16
    grid = make_uniform_grid(n_steps)
    z0 = substream(cfg.seed, PROBE_STREAM + 4).standard_normal((32, mixture.dim))
    labels = np.zeros(32, dtype=int)

    counter = CountingField(AnalyticField(mixture))
    sample_mg(counter, grid, z0, labels, GuidanceConfig(alpha=0.8, beta=0.5))
    per_traj = counter.count / len(z0)
    if per_traj != n_steps:
        return False, f"omega=1 used {per_traj} evaluations per trajectory, want {n_steps}"

    counter = CountingField(AnalyticField(mixture))
    cfg_gate = GuidanceConfig(alpha=0.8, beta=0.5, cfg_omega=2.0, cfg_interval=(0.125, 1.0))
    sample_mg(counter, grid, z0, labels, cfg_gate)
    gated = int(np.sum(grid.nodes[:-1] >= 0.125))
    want = n_steps + gated
    per_traj = counter.count / len(z0)
    if per_traj != want:
        return False, f"gated CFG used {per_traj} evaluations per trajectory, want {want}"
    return True, f"{n_steps} evals/trajectory at omega=1, {want} with gated CFG"


def _check_oracle_agreement(cfg):
    mixture = load_mixture(cfg.mixture_path())
    rng = substream(cfg.seed, PROBE_STREAM + 5)
    hits = 0
    for i in range(20):
        t = float(rng.uniform(0.2, 0.8))
        x1, _ = mixture.sample(1, rng)
        x = (t * x1 + (1.0 - t) * rng.standard_normal((1, mixture.dim)))[0]
        v = optimal_velocity(mixture, x, t)
        est, se = mc_velocity(
            mixture, x, t, None, 200000, 0.05, substream(cfg.seed, PROBE_STREAM + 6 + i)
        )
        hits += bool(np.all(np.abs(est - v) <= 3.0 * se))
    return hits >= 19, f"{hits}/20 probes within 3 standard errors"


CHECKS = (
    ("mixture file validation", _check_mixture_file),
    ("velocity-score identity", _check_score_identity),
    ("responsibility normalization", _check_responsibilities),
    ("alpha=0 reduction to Euler", _check_reduction),
    ("step-0 / constant-field inertness", _check_inertness),
    ("unbiased EMA arithmetic", _check_debias),
    ("field evaluation budget", _check_eval_budget),
    ("Monte-Carlo oracle agreement", _check_oracle_agreement),
)


def run_checks(cfg: ExperimentConfig) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            passed, detail = fn(cfg)
        except Exception as e:  # report, never raise
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        results.append(CheckResult(name, bool(passed), detail))
    return results


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.passed for r in results)
