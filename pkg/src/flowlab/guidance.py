"""Guidance mechanisms for Euler flow sampling.

Three velocity-level combinators plus the momentum-guided sampler loop:

* classifier-free guidance: extrapolate the conditional velocity away from
  the unconditional one, ``omega*v_c + (1-omega)*v_u``; at omega=1 the
  unconditional branch is never evaluated.
* autoguidance: the same extrapolation against a weaker field's velocity.
* momentum guidance: extrapolate the current velocity away from an
  exponential moving average of the trajectory's own past velocities,
  ``v + alpha*(v - m)``.  The EMA reuses velocities that were already
  computed, so the per-step evaluation budget is unchanged.

The momentum state starts from the step-0 velocity and is updated as
``m <- (1-beta)*v + beta*m`` after every step, whether or not the
extrapolation is active at that step.  Optional refinements: a
zero-initialized EMA read through the debias factor 1/(1-beta^s), and a
rescaling of the read momentum to the current velocity's L2 norm.

Both guidance terms can be restricted to closed sub-intervals of flow time;
gating compares each step's left endpoint t_i against the interval.  With
alpha=0 and omega=1 the sampler reproduces plain Euler integration bit for
bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidStateError, NumericError
from .flow import Condition, TimeGrid, TrajectoryRecord, VelocityField

NORM_EPS = 1e-12


def ema_update(m: np.ndarray, v: np.ndarray, beta: float) -> np.ndarray:
    """One decay step of the velocity EMA, (1-beta)*v + beta*m.

    Evaluated in the incremental form m + (1-beta)*(v - m) (identical in
    exact arithmetic) so that v == m leaves the state bit-for-bit unchanged;
    plain Euler reductions and constant-field trajectories stay exact.
    """
    if beta == 0.0:
        return np.array(v, dtype=float, copy=True)
    return m + (1.0 - beta) * (v - m)


def _check_interval(name: str, iv) -> tuple[float, float]:
    lo, hi = float(iv[0]), float(iv[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1")
    return lo, hi


@dataclass(frozen=True)
class GuidanceConfig:
    """One record fully determines a guided sampler."""

    alpha: float = 0.0
    beta: float = 0.0
    mg_interval: tuple[float, float] = (0.0, 1.0)
    cfg_omega: float = 1.0
    cfg_interval: tuple[float, float] = (0.0, 1.0)
    unbiased: bool = False
    normalize: bool = False
    auto_weight: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.cfg_omega < 1.0:
            raise ValueError("cfg_omega must be >= 1")
        object.__setattr__(self, "mg_interval", _check_interval("mg_interval", self.mg_interval))
        object.__setattr__(self, "cfg_interval", _check_interval("cfg_interval", self.cfg_interval))
        if self.auto_weight is not None and self.auto_weight <= 1.0:
            raise ValueError("auto_weight must be > 1")

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "beta": self.beta,
            "mg_interval": list(self.mg_interval),
            "cfg_omega": self.cfg_omega,
            "cfg_interval": list(self.cfg_interval),
            "unbiased": self.unbiased,
            "normalize": self.normalize,
        }
        if self.auto_weight is not None:
            out["auto_weight"] = self.auto_weight
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceConfig":
        known = {
            "alpha", "beta", "mg_interval", "cfg_omega", "cfg_interval",
            "unbiased", "normalize", "auto_weight",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown guidance keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("mg_interval", "cfg_interval"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class MomentumState:
    """Raw velocity EMA plus its update count.

    ``m`` is the biased (raw) accumulator; debiasing happens at read time.
    ``count`` increments by exactly one per sampler step; initialization
    from the step-0 velocity counts as the first update.
    """

    m: np.ndarray
    count: int
    zero_init: bool

    @classmethod
    def from_first_velocity(cls, v0: np.ndarray, beta: float, zero_init: bool) -> "MomentumState":
        v0 = np.asarray(v0, dtype=float)
        m = ema_update(np.zeros_like(v0), v0, beta) if zero_init else v0.copy()
        return cls(m=m, count=1, zero_init=zero_init)


@dataclass(frozen=True)
class EffectiveVelocity:
    """Per-step decomposition of the velocity actually applied."""

    v_eff: np.ndarray
    v_raw: np.ndarray
    m: np.ndarray  # momentum as read (debiased / normalized if enabled)
    g: np.ndarray  # extrapolation term v_raw - m
    v_uncond: np.ndarray | None = None


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray | None, omega: float) -> np.ndarray:
    """Classifier-free extrapolation; omega=1 returns v_cond untouched."""
    if omega < 1.0:
        raise ValueError("omega must be >= 1")
    if omega == 1.0:
        return v_cond
    if v_uncond is None:
        raise ValueError("omega > 1 requires the unconditional velocity")
    return omega * v_cond + (1.0 - omega) * v_uncond


def auto_velocity(v_main: np.ndarray, v_weak: np.ndarray, w: float) -> np.ndarray:
    """Extrapolate the main velocity away from a weaker field's velocity."""
    if w <= 1.0:
        raise ValueError("autoguidance weight must be > 1")
    return w * v_main + (1.0 - w) * v_weak


class AutoguidedField:
    """VelocityField combining a main and a weaker field via auto_velocity.

    Composes with the momentum sampler by acting as its velocity source.
    """

    def __init__(self, main: VelocityField, weak: VelocityField, w: float):
        if w <= 1.0:
            raise ValueError("autoguidance weight must be > 1")
        self.main = main
        self.weak = weak
        self.w = float(w)

    def __call__(self, x: np.ndarray, t: float, c: Condition = None) -> np.ndarray:
        return auto_velocity(self.main(x, t, c), self.weak(x, t, c), self.w)


def momentum_read(
    state: MomentumState,
    beta: float,
    unbiased: bool,
    normalize: bool,
    v_ref: np.ndarray,
) -> np.ndarray:
    """Momentum value used for extrapolation at the current step.

    Unbiased mode requires a zero-initialized EMA with at least one update
    and divides by (1 - beta**count); normalization rescales to the L2 norm
    of ``v_ref`` per sample.
    """
    if unbiased:
        if not state.zero_init:
            raise InvalidStateError("unbiased read requires a zero-initialized EMA")
        if state.count < 1:
            raise InvalidStateError("unbiased read requires at least one EMA update")
        m_hat = state.m / (1.0 - beta**state.count)
    else:
        m_hat = state.m
    if normalize:
        v_norm = np.linalg.norm(v_ref, axis=-1, keepdims=True)
        m_norm = np.linalg.norm(m_hat, axis=-1, keepdims=True)
        m_hat = m_hat * (v_norm / (m_norm + NORM_EPS))
    return m_hat


def mg_step(
    z: np.ndarray,
    v_guided: np.ndarray,
    state: MomentumState,
    dt: float,
    cfg: GuidanceConfig,
    t: float,
) -> tuple[np.ndarray, MomentumState, EffectiveVelocity]:
    """One guided Euler step plus the EMA update.

    The extrapolation is applied only for t inside mg_interval (and alpha >
    0); the EMA update happens unconditionally.  The ungated branch uses the
    plain ``z + dt*v`` expression so it matches unguided Euler bit for bit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    m_hat = momentum_read(state, cfg.beta, cfg.unbiased, cfg.normalize, v_guided)
    g = v_guided - m_hat
    lo, hi = cfg.mg_interval
    if cfg.alpha > 0.0 and lo <= t <= hi:
        v_eff = v_guided + cfg.alpha * g
        z_next = z + dt * v_eff
    else:
        v_eff = v_guided
        z_next = z + dt * v_guided
    if not np.all(np.isfinite(z_next)):
        raise NumericError("non-finite state after guided step")
    state_next = replace(
        state, m=ema_update(state.m, v_guided, cfg.beta), count=state.count + 1
    )
    return z_next, state_next, EffectiveVelocity(v_eff=v_eff, v_raw=v_guided, m=m_hat, g=g)


def _cfg_active(cfg: GuidanceConfig, t: float) -> bool:
    lo, hi = cfg.cfg_interval
    return cfg.cfg_omega > 1.0 and lo <= t <= hi


def _guided_velocity(field, z, t, c, cfg: GuidanceConfig):
    """(v_guided, v_uncond) at one step; single field call unless CFG fires."""
    if _cfg_active(cfg, t):
        v_cond = np.asarray(field(z, t, c), dtype=float)
        v_uncond = np.asarray(field(z, t, None), dtype=float)
        return cfg_velocity(v_cond, v_uncond, cfg.cfg_omega), v_uncond
    return np.asarray(field(z, t, c), dtype=float), None


def sample_mg(
    field: VelocityField,
    grid: TimeGrid,
    z0: np.ndarray,
    c: Condition,
    cfg: GuidanceConfig,
    keep_steps: bool = True,
) -> TrajectoryRecord:
    """Momentum-guided sampling over the grid (CFG-adjusted when enabled).

    The momentum is initialized from the step-0 guided velocity, and that
    evaluation is reused for the first step, so the per-trajectory budget is
    exactly one conditional evaluation per step plus one unconditional
    evaluation per step with CFG active.

    ``keep_steps=False`` skips the per-step logs (the returned record then
    has empty step arrays) and is intended for large endpoint-only batches.
    """
    z = np.asarray(z0, dtype=float).copy()
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite initial state")

    t0 = grid.nodes[0]
    v0, _ = _guided_velocity(field, z, t0, c, cfg)
    if not np.all(np.isfinite(v0)):
        raise NumericError("velocity field returned non-finite values", step=0)
    state = MomentumState.from_first_velocity(v0, cfg.beta, zero_init=cfg.unbiased)

    ts, zs, vs, ms, gs, xs = [], [], [], [], [], []
    for i in range(grid.n_steps):
        t = grid.nodes[i]
        dt = grid.dt(i)
        if i == 0:
            v = v0
        else:
            v, _ = _guided_velocity(field, z, t, c, cfg)
            if not np.all(np.isfinite(v)):
                raise NumericError("velocity field returned non-finite values", step=i)
        try:
            z_next, state, rec = mg_step(z, v, state, dt, cfg, t)
        except NumericError as e:
            raise NumericError(str(e), step=i) from None
        if keep_steps:
            ts.append(t)
            zs.append(z)
            vs.append(v)
            ms.append(rec.m)
            gs.append(rec.g)
            xs.append(z + (1.0 - t) * v)
        z = z_next

    if keep_steps:
        return TrajectoryRecord(
            t=np.array(ts),
            z=np.stack(zs),
            v=np.stack(vs),
            m=np.stack(ms),
            g=np.stack(gs),
            xhat=np.stack(xs),
            z_final=z,
        )
    empty = np.zeros((0,) + z.shape)
    return TrajectoryRecord(
        t=np.zeros(0), z=empty, v=empty.copy(), m=empty.copy(), g=empty.copy(),
        xhat=empty.copy(), z_final=z,
    )
