"""Time grids, the Euler integrator, and the velocity-field contract.

A velocity field is any callable ``field(x, t, c) -> velocity`` that is
deterministic and finite for ``t in [0, 1)``.  ``x`` may be a single point
``(d,)`` or a batch ``(n, d)``; the output has the same shape.  ``c`` is an
optional condition: ``None`` for unconditional, an integer class label, or an
integer array with one label per batch row.

Sampling integrates ``dz/dt = field(z, t, c)`` forward from t=0 noise to
t=1 data with explicit Euler steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Protocol

import numpy as np

from .errors import NumericError

Condition = int | np.ndarray | None


class VelocityField(Protocol):
    def __call__(self, x: np.ndarray, t: float, c: Condition = None) -> np.ndarray: ...


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes from 0 to 1 (N steps, N+1 nodes)."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    def dt(self, i: int) -> float:
        return self.nodes[i + 1] - self.nodes[i]


def make_uniform_grid(n_steps: int) -> TimeGrid:
    """Uniform grid with nodes i/n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return TimeGrid(np.arange(n_steps + 1) / n_steps)


def make_shifted_grid(n_steps: int, shift: float) -> TimeGrid:
    """Rational-shift grid u -> shift*u / (1 + (shift-1)*u).

    shift=1 reproduces the uniform grid exactly; shift>1 concentrates nodes
    toward t=1 in the image of the uniform grid.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if shift < 1.0:
        raise ValueError("shift must be >= 1")
    u = np.arange(n_steps + 1) / n_steps
    return TimeGrid(shift * u / (1.0 + (shift - 1.0) * u))


def euler_step(z: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler update z + dt*v."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(v)) and np.isfinite(dt)):
        raise NumericError("non-finite input to euler_step")
    return z + dt * v


def data_estimate(z: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Implied clean-sample prediction z + (1-t)*v at time t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return np.asarray(z, dtype=float) + (1.0 - t) * np.asarray(v, dtype=float)


@dataclass
class TrajectoryRecord:
    """Per-step log of an integrated trajectory (or batch of trajectories).

    Arrays have shape (N, d) for a single trajectory or (N, n, d) for a
    batch; ``z_final`` is the endpoint.  ``xhat`` is always exactly
    ``z + (1-t)*v`` for the logged z and v.
    """

    t: np.ndarray
    z: np.ndarray
    v: np.ndarray
    m: np.ndarray
    g: np.ndarray
    xhat: np.ndarray
    z_final: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.t.size

    @property
    def dim(self) -> int:
        return self.z.shape[-1]

    def single(self, i: int) -> "TrajectoryRecord":
        """Extract trajectory i from a batched record."""
        if self.z.ndim != 3:
            raise ValueError("record is not batched")
        return TrajectoryRecord(
            t=self.t,
            z=self.z[:, i],
            v=self.v[:, i],
            m=self.m[:, i],
            g=self.g[:, i],
            xhat=self.xhat[:, i],
            z_final=self.z_final[i],
        )

    def write_csv(self, f: IO[str]) -> None:
        """Serialize one trajectory: step,t,z_*,v_*,m_*,g_*,xhat_* per step."""
        if self.z.ndim != 2:
            raise ValueError("write_csv needs a single (unbatched) trajectory")
        d = self.dim
        cols = ["step", "t"]
        for name in ("z", "v", "m", "g", "xhat"):
            cols += [f"{name}_{j}" for j in range(d)]
        f.write(",".join(cols) + "\n")
        for i in range(self.n_steps):
            row = [str(i), format(self.t[i], ".17g")]
            for arr in (self.z, self.v, self.m, self.g, self.xhat):
                row += [format(val, ".17g") for val in arr[i]]
            f.write(",".join(row) + "\n")


@dataclass
class CountingField:
    """Wrap a field and count per-point evaluations (one per batch row)."""

    inner: VelocityField
    count: int = 0
    calls: int = 0

    def __call__(self, x: np.ndarray, t: float, c: Condition = None) -> np.ndarray:
        x = np.asarray(x)
        self.count += 1 if x.ndim == 1 else x.shape[0]
        self.calls += 1
        return self.inner(x, t, c)


def integrate(
    field: VelocityField,
    grid: TimeGrid,
    z0: np.ndarray,
    c: Condition = None,
) -> TrajectoryRecord:
    """Plain Euler integration over the grid; m and g are logged as zeros."""
    z = np.asarray(z0, dtype=float).copy()
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite initial state")
    ts, zs, vs, xs = [], [], [], []
    for i in range(grid.n_steps):
        t = grid.nodes[i]
        dt = grid.dt(i)
        v = np.asarray(field(z, t, c), dtype=float)
        if not np.all(np.isfinite(v)):
            raise NumericError("velocity field returned non-finite values", step=i)
        ts.append(t)
        zs.append(z)
        vs.append(v)
        xs.append(z + (1.0 - t) * v)
        z = z + dt * v
    zeros = np.zeros_like(np.stack(vs))
    return TrajectoryRecord(
        t=np.array(ts),
        z=np.stack(zs),
        v=np.stack(vs),
        m=zeros,
        g=zeros.copy(),
        xhat=np.stack(xs),
        z_final=z,
    )
