"""Synthetic datasets and CSV point-cloud I/O."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, RaggedRows
from .manifolds import QuadraticSurface, random_orthogonal

log = logging.getLogger(__name__)


@dataclass
class CircleArcConfig:
    """Noisy circular arc ``t (sin z, -cos z)`` plus angle-dependent noise.

    ``noise="radial"`` displaces each point along the circle normal by
    ``noise_scale * cos(z) * eps``; ``noise="scalar"`` adds that same scalar
    to both coordinates.
    """

    n_points: int = 400
    radius: float = 1.0
    noise_scale: float = 1.5
    noise: str = "radial"
    arc_start: float = 0.0
    arc_end: float = 1.5 * np.pi
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.noise not in ("radial", "scalar"):
            raise ValueError("noise must be 'radial' or 'scalar'")
        if not self.arc_end > self.arc_start:
            raise ValueError("empty arc interval")


def gen_circle_arc(cfg: CircleArcConfig | None = None):
    """Points scattered around a circular arc; returns an ``(n, 2)`` array."""
    cfg = cfg or CircleArcConfig()
    rng = np.random.default_rng(cfg.seed)
    z = rng.uniform(cfg.arc_start, cfg.arc_end, size=cfg.n_points)
    eps = rng.standard_normal(cfg.n_points)
    direction = np.stack([np.sin(z), -np.cos(z)], axis=1)
    amplitude = cfg.noise_scale * np.cos(z) * eps
    if cfg.noise == "radial":
        pts = (cfg.radius + amplitude)[:, None] * direction
    else:
        pts = cfg.radius * direction + amplitude[:, None]
    log.info("circle arc: n=%d radius=%g noise=%s(%g) seed=%d", cfg.n_points, cfg.radius, cfg.noise, cfg.noise_scale, cfg.seed)
    return pts


def gen_quadratic_surface_samples(n_ambient, m_samples, domain_radius, seed=0, identity=False):
    """Samples of the paraboloid isometrically embedded in ``R^n_ambient``.

    Latent points are uniform on the disk of ``domain_radius``.  Returns
    ``(surface, points, jacobian_at_origin)``.
    """
    if n_ambient < 3:
        raise ValueError("n_ambient must be >= 3")
    rng = np.random.default_rng(seed)
    U = np.eye(n_ambient) if identity else random_orthogonal(n_ambient, rng)
    surface = QuadraticSurface(n_ambient, 2, U)
    angle = rng.uniform(0.0, 2.0 * np.pi, m_samples)
    r = domain_radius * np.sqrt(rng.random(m_samples))
    latent = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    return surface, surface.decode(latent), surface.jacobian(np.zeros(2))


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_point_cloud(path):
    """Read a rectangular numeric CSV (optional header) into an ``(n, D)`` array."""
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    data = []
    width = len(rows[0][1]) if rows else 0
    for lineno, row in rows:
        if len(row) != width:
            raise RaggedRows(f"{path}: expected {width} columns, found {len(row)}", row=lineno)
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: not a number: {cell!r}", row=lineno, column=col) from None
        data.append(vals)
    if not data:
        raise ParseError(f"{path}: header only")
    return np.array(data, dtype=float)


def save_point_cloud(path, points, header=None):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in points:
            w.writerow([repr(float(v)) for v in row])
