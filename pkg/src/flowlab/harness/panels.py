"""Hand-rolled SVG panels for the 2D toy setup (no plotting library).

Every file is a fixed 800x800 viewBox with the axis range auto-fitted to
the drawn data plus a 5% margin.  Class color mapping: class 0 gray
(#7f7f7f), class 1 orange (#e69f00), further classes from CLASS_COLORS in
order.  Emitted panels: baseline trajectories, guided trajectories, a
velocity-field view at one step (background arrows: unconditional velocity
on a regular grid; overlay: each trajectory's extrapolation term v - m at
its current position), and a scatter sequence of the implied clean-sample
estimates along the trajectory.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..flow import TrajectoryRecord
from ..guidance import sample_mg
from ..mixture import load_mixture, unconditional_velocity
from .config import ExperimentConfig
from .runner import build_field, draw_start_batch, make_grid

CLASS_COLORS = ("#7f7f7f", "#e69f00", "#56b4e9", "#009e73", "#cc79a7")
VIEW = 800.0
MARGIN = 0.05


def class_color(label: int) -> str:
    return CLASS_COLORS[int(label) % len(CLASS_COLORS)]


class SvgCanvas:
    """Minimal SVG writer mapping data coordinates to an 800x800 viewBox."""

    def __init__(self, xlim: tuple[float, float], ylim: tuple[float, float]):
        spans = [max(hi - lo, 1e-9) for lo, hi in (xlim, ylim)]
        pad = [MARGIN * s for s in spans]
        self.x0, self.x1 = xlim[0] - pad[0], xlim[1] + pad[0]
        self.y0, self.y1 = ylim[0] - pad[1], ylim[1] + pad[1]
        self.elements: list[str] = []

    def px(self, p) -> tuple[float, float]:
        x = (p[0] - self.x0) / (self.x1 - self.x0) * VIEW
        y = VIEW - (p[1] - self.y0) / (self.y1 - self.y0) * VIEW
        return x, y

    def polyline(self, pts, color: str, width: float = 1.0, opacity: float = 1.0) -> None:
        coords = " ".join("%.2f,%.2f" % self.px(p) for p in pts)
        self.elements.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}" stroke-opacity="{opacity:.2f}"/>'
        )

    def circle(self, p, radius_px: float, color: str, opacity: float = 1.0) -> None:
        x, y = self.px(p)
        self.elements.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius_px:.2f}" '
            f'fill="{color}" fill-opacity="{opacity:.2f}"/>'
        )

    def arrow(self, p, q, color: str, width: float = 1.0, opacity: float = 1.0) -> None:
        (x0, y0), (x1, y1) = self.px(p), self.px(q)
        dx, dy = x1 - x0, y1 - y0
        length = max(np.hypot(dx, dy), 1e-9)
        ux, uy = dx / length, dy / length
        head = min(6.0, 0.4 * length)
        hx0 = x1 - head * (ux + 0.5 * -uy)
        hy0 = y1 - head * (uy + 0.5 * ux)
        hx1 = x1 - head * (ux - 0.5 * -uy)
        hy1 = y1 - head * (uy - 0.5 * ux)
        attrs = f'stroke="{color}" stroke-width="{width:.2f}" stroke-opacity="{opacity:.2f}"'
        self.elements.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" {attrs}/>')
        self.elements.append(
            f'<polyline points="{hx0:.2f},{hy0:.2f} {x1:.2f},{y1:.2f} {hx1:.2f},{hy1:.2f}" '
            f'fill="none" {attrs}/>'
        )

    def text(self, p, s: str, size_px: float = 18.0, color: str = "#222222") -> None:
        x, y = self.px(p)
        self.elements.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size_px:.0f}" '
            f'font-family="sans-serif" fill="{color}">{s}</text>'
        )

    def title(self, s: str) -> None:
        self.elements.append(
            f'<text x="20.00" y="34.00" font-size="22" font-family="sans-serif" '
            f'fill="#222222">{s}</text>'
        )

    def tostring(self) -> str:
        body = "\n".join(self.elements)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW:.0f} {VIEW:.0f}">\n'
            f'<rect width="{VIEW:.0f}" height="{VIEW:.0f}" fill="#ffffff"/>\n'
            f"{body}\n</svg>\n"
        )

    def write(self, path: Path) -> None:
        Path(path).write_text(self.tostring())


def _bounds(*arrays):
    allpts = np.concatenate([np.asarray(a).reshape(-1, 2) for a in arrays])
    return (allpts[:, 0].min(), allpts[:, 0].max()), (allpts[:, 1].min(), allpts[:, 1].max())


def _trajectory_panel(record: TrajectoryRecord, labels, mixture, title: str) -> SvgCanvas:
    paths = np.concatenate([record.z, record.z_final[None]], axis=0)  # (N+1, n, d)
    canvas = SvgCanvas(*_bounds(paths, mixture.means))
    for i in range(paths.shape[1]):
        canvas.polyline(paths[:, i], class_color(labels[i]), width=1.0, opacity=0.3)
    for i in range(paths.shape[1]):
        canvas.circle(paths[-1, i], 2.0, class_color(labels[i]), opacity=0.8)
    for mean, lab in zip(mixture.means, mixture.labels):
        canvas.circle(mean, 4.0, "#222222")
        canvas.circle(mean, 2.5, class_color(lab))
    canvas.title(title)
    return canvas


def _field_panel(record, labels, mixture, step: int, grid_side: int = 14) -> SvgCanvas:
    t = float(record.t[step])
    z = record.z[step]
    g = record.g[step]
    (xlo, xhi), (ylo, yhi) = _bounds(z, mixture.means)
    canvas = SvgCanvas((xlo, xhi), (ylo, yhi))

    xs = np.linspace(xlo, xhi, grid_side)
    ys = np.linspace(ylo, yhi, grid_side)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    v = unconditional_velocity(mixture, pts, t)
    vmax = max(np.linalg.norm(v, axis=1).max(), 1e-9)
    scale = 0.6 * (xhi - xlo) / grid_side / vmax
    for p, vi in zip(pts, v):
        canvas.arrow(p, p + scale * vi, "#bbbbbb", width=1.0)

    gmax = max(np.linalg.norm(g, axis=1).max(), 1e-9)
    gscale = 0.9 * (xhi - xlo) / grid_side / gmax
    for i in range(z.shape[0]):
        canvas.arrow(z[i], z[i] + gscale * g[i], class_color(labels[i]), width=1.2, opacity=0.8)
    canvas.title(f"velocity field (gray) and extrapolation v - m at step {step}, t={t:.3f}")
    return canvas


def _xhat_panel(record, labels, mixture, step: int) -> SvgCanvas:
    canvas = SvgCanvas(*_bounds(record.xhat[step], mixture.means))
    for p, lab in zip(record.xhat[step], labels):
        canvas.circle(p, 2.0, class_color(lab), opacity=0.6)
    for mean in mixture.means:
        canvas.circle(mean, 3.0, "#222222", opacity=0.9)
    canvas.title(f"implied clean-sample estimates at step {step}, t={record.t[step]:.3f}")
    return canvas


def emit_toy_panels(cfg: ExperimentConfig, step_index: int | None = None) -> list[Path]:
    """Render the toy panels into cfg.out_dir; returns the written paths.

    Requires a 2D mixture.  Uses at most 256 trajectories for readability.
    """
    mixture = load_mixture(cfg.mixture_path())
    if mixture.dim != 2:
        raise ConfigError("toy panels require a 2-dimensional mixture")
    n = min(cfg.n_trajectories, 256)
    if n < 1:
        raise ValueError("n_trajectories must be >= 1")
    grid = make_grid(cfg)
    if step_index is None:
        step_index = grid.n_steps // 2
    if not 0 <= step_index < grid.n_steps:
        raise ConfigError(f"step index must lie in [0, {grid.n_steps - 1}]")

    field = build_field(cfg, mixture)
    z0, labels = draw_start_batch(cfg.seed, n, mixture)
    baseline_cfg = replace(cfg.guidance, alpha=0.0)
    baseline = sample_mg(field, grid, z0, labels, baseline_cfg, keep_steps=True)
    guided = sample_mg(field, grid, z0, labels, cfg.guidance, keep_steps=True)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    panel = _trajectory_panel(baseline, labels, mixture, "baseline trajectories (alpha=0)")
    path = out / "panel_trajectories_baseline.svg"
    panel.write(path)
    written.append(path)

    panel = _trajectory_panel(
        guided, labels, mixture,
        f"momentum-guided trajectories (alpha={cfg.guidance.alpha}, beta={cfg.guidance.beta})",
    )
    path = out / "panel_trajectories_mg.svg"
    panel.write(path)
    written.append(path)

    panel = _field_panel(guided, labels, mixture, step_index)
    path = out / f"panel_field_step{step_index}.svg"
    panel.write(path)
    written.append(path)

    n_shots = min(6, grid.n_steps)
    shots = sorted(set(np.linspace(0, grid.n_steps - 1, n_shots).astype(int)))
    for j in shots:
        panel = _xhat_panel(guided, labels, mixture, int(j))
        path = out / f"panel_xhat_step{int(j)}.svg"
        panel.write(path)
        written.append(path)
    return written
