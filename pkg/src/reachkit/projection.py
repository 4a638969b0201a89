"""Brute-force nearest-point projection onto a decoded manifold.

``project`` minimises ``h(z) = ||x - f(z)||^2`` from many starting points and
reports every distinct local minimum.  A "unique" verdict only means that no
second global minimiser was found.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence

CLUSTER_TOL = 1e-6  # relative, on distances
SPATIAL_TOL = 1e-4  # absolute, on decoded points


@dataclass
class Minimum:
    z: np.ndarray
    point: np.ndarray
    distance: float
    converged: bool
    on_boundary: bool


@dataclass
class ProjectionResult:
    minima: list = field(default_factory=list)  # Minimum, sorted by distance
    unique: bool = True
    distance_gap: float = float("inf")
    converged: bool = True

    @property
    def best(self):
        return self.minima[0]


def _initial_points(x, model, restarts, box, rng):
    d = model.latent_dim
    starts = []
    if hasattr(model, "encode"):
        z0 = np.asarray(model.encode(x), dtype=float).reshape(d)
        starts.append(z0)
        scale = 0.1 * (1.0 + np.abs(z0))
        for _ in range(max(0, restarts // 4 - 1)):
            starts.append(z0 + scale * rng.standard_normal(d))
    while len(starts) < restarts:
        starts.append(rng.uniform(-box, box, size=d))
    return np.clip(np.array(starts[:restarts]), -box, box)


def _descend(x, model, Z, box, max_iters, tol):
    k = Z.shape[0]
    F = model.decode(Z)
    R = F - x
    h = np.sum(R**2, axis=1)
    G = 2.0 * np.einsum("kDd,kD->kd", model.jacobian(Z), R)
    step = np.ones(k)
    done = np.zeros(k, dtype=bool)
    converged = np.zeros(k, dtype=bool)
    for _ in range(max_iters):
        pg = np.linalg.norm(Z - np.clip(Z - G, -box, box), axis=1)
        newly = ~done & (pg <= tol * (1.0 + h))
        converged |= newly
        done |= newly
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        Za = Z[active]
        trial = np.clip(Za - step[active, None] * G[active], -box, box)
        Ft = model.decode(trial)
        ht = np.sum((Ft - x) ** 2, axis=1)
        Gt = 2.0 * np.einsum("kDd,kD->kd", model.jacobian(trial), Ft - x)
        decrease = np.einsum("kd,kd->k", G[active], Za - trial)
        armijo = ht <= h[active] - 1e-4 * decrease
        # near a minimum h stops resolving the decrease; judge the step by the
        # projected gradient instead so the last digits of z still converge
        flat = np.abs(ht - h[active]) <= 16 * np.finfo(float).eps * (1.0 + h[active])
        pgt = np.linalg.norm(trial - np.clip(trial - Gt, -box, box), axis=1)
        accept = np.where(flat, pgt < 0.9 * pg[active], armijo)
        acc = active[accept]
        if acc.size:
            Z[acc] = trial[accept]
            h[acc] = ht[accept]
            G[acc] = Gt[accept]
            step[acc] = np.minimum(step[acc] * 2.0, 1e8)
        rej = active[~accept]
        step[rej] *= 0.5
        # a vanished step cannot make progress any more
        done[rej[step[rej] < 1e-30]] = True
    return Z, h, converged


def project(
    x,
    model,
    restarts=32,
    seed=0,
    latent_box=4.0,
    max_iters=10_000,
    grad_tol=1e-10,
):
    """Find the nearest points of ``model``'s manifold to ``x``.

    Restarts combine the encoder output, perturbations of it, and uniform draws
    from the latent box ``[-latent_box, latent_box]^d`` to which the search is
    confined.  Minima touching the box are flagged ``on_boundary``.
    """
    x = np.asarray(x, dtype=float)
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    Z = _initial_points(x, model, restarts, latent_box, rng)
    Z, h, conv = _descend(x, model, Z, latent_box, max_iters, grad_tol)
    dist = np.sqrt(np.maximum(h, 0.0))
    points = model.decode(Z)
    order = np.argsort(dist, kind="stable")
    kept = []
    for i in order:
        if any(np.linalg.norm(points[i] - m.point) <= SPATIAL_TOL for m in kept):
            continue
        kept.append(
            Minimum(
                z=Z[i].copy(),
                point=points[i].copy(),
                distance=float(dist[i]),
                converged=bool(conv[i]),
                on_boundary=bool(np.any(np.abs(Z[i]) >= latent_box)),
            )
        )
    best = kept[0].distance
    cutoff = best * (1.0 + CLUSTER_TOL) + 1e-15
    n_optimal = sum(m.distance <= cutoff for m in kept)
    gap = kept[1].distance - best if len(kept) > 1 else float("inf")
    result = ProjectionResult(kept, n_optimal == 1, gap, bool(np.any(conv)))
    if not result.converged:
        warnings.warn(NoConvergence("no restart met the gradient stopping rule"), stacklevel=2)
    return result
