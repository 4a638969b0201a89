"""Uniform ball sampling and the iterative radius-shrinking reach estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .geometry import ReachEstimate, batched_reach_ratios, gram_cholesky


@dataclass
class SamplerConfig:
    """Settings for :func:`estimate_reach`.

    ``r0=None`` means "derive the initial radius per query", which diagnosis
    and training do as twice the reconstruction distance.  After each batch
    the radius becomes twice the running reach estimate, which may exceed
    ``r0``; ``clamp_radius=True`` forbids growth past the previous radius.
    """

    r0: float | None = None
    batch_size: int = 100
    num_batches: int = 10
    seed: int = 0
    clamp_radius: bool = False

    def __post_init__(self):
        if self.r0 is not None and not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if self.batch_size < 1 or self.num_batches < 1:
            raise ValueError("batch_size and num_batches must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def point_rng(seed, index, stream=()):
    """Independent generator for query ``index``; reproducible in any order."""
    return np.random.default_rng([int(seed), *map(int, stream), int(index)])


def sample_ball(center, radius, n, rng):
    """``n`` points drawn uniformly from the open ball ``B_radius(center)``."""
    center = np.asarray(center, dtype=float)
    if not radius > 0:
        raise ValueError("radius must be positive")
    D = center.shape[-1]
    directions = rng.standard_normal((n, D))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / D)
    return center + radii[:, None] * directions


def estimate_reach(
    model,
    points,
    jacobians,
    cfg: SamplerConfig,
    r0=None,
    indices=None,
    stream=(),
    prior=None,
):
    """Run the sampling estimator for many base points at once.

    Each iteration samples ``cfg.batch_size`` points uniformly in a ball around
    every base point, maps them onto the manifold with
    ``model.decode(model.encode(.))``, lowers the running minimum of the reach
    ratio and resets the radius to twice the current estimate.  Any sample
    that could lower the estimate lies within that distance of the base point,
    so a small ``r0`` only delays convergence.

    Parameters
    ----------
    model : object with ``encode``/``decode`` (autoencoder or analytic manifold)
    points : (m, D) base points on the manifold
    jacobians : (m, D, d) decoder Jacobians at the base points
    r0 : scalar or (m,) initial radii; defaults to ``cfg.r0``
    indices : RNG stream index per point (default ``0..m-1``)
    stream : extra integers mixed into every point's seed (e.g. a step count)
    prior : optional ``(reach, witness[, witness_latent])`` arrays seeding the
        running minimum

    Returns a list of :class:`ReachEstimate`.  Points with rank-deficient
    Jacobians get ``r_hat = nan`` and an empty history.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    Js = np.asarray(jacobians, dtype=float).reshape(X.shape[0], X.shape[1], -1)
    m, D = X.shape
    if r0 is None:
        r0 = cfg.r0
    if r0 is None:
        raise ValueError("an initial radius is required")
    radius = np.broadcast_to(np.asarray(r0, dtype=float), (m,)).copy()
    if np.any(~(radius > 0)):
        raise ValueError("initial radii must be positive")
    indices = np.arange(m) if indices is None else np.asarray(indices)
    rngs = [point_rng(cfg.seed, i, stream) for i in indices]

    L, deficient = gram_cholesky(Js)
    ok = ~deficient
    reach = np.full(m, np.inf)
    witness = np.full((m, D), np.nan)
    witness_z = None
    if prior is not None:
        reach = np.minimum(reach, np.asarray(prior[0], dtype=float))
        witness = np.array(prior[1], dtype=float, copy=True)
        if len(prior) > 2:
            witness_z = np.array(prior[2], dtype=float, copy=True)
        fin = np.isfinite(reach)
        if cfg.clamp_radius:
            radius[fin] = np.minimum(radius[fin], 2.0 * reach[fin])
    n_used = np.zeros(m, dtype=int)
    reach_hist = [[] for _ in range(m)]
    radius_hist = [[] for _ in range(m)]

    idx = np.flatnonzero(ok)
    n = cfg.batch_size
    for _ in range(cfg.num_batches):
        if idx.size == 0:
            break
        samples = np.stack([sample_ball(X[i], radius[i], n, rngs[i]) for i in idx])
        codes = model.encode(samples.reshape(-1, D))
        projected = model.decode(codes).reshape(idx.size, n, D)
        codes = codes.reshape(idx.size, n, -1)
        if witness_z is None:
            witness_z = np.full((m, codes.shape[-1]), np.nan)
        ratios, dup = batched_reach_ratios(X[idx], Js[idx], projected, L=L[idx])
        n_used[idx] += np.count_nonzero(~dup, axis=1)
        best = np.argmin(ratios, axis=1)
        batch_min = ratios[np.arange(idx.size), best]
        improved = batch_min < reach[idx]
        sel = idx[improved]
        reach[sel] = batch_min[improved]
        witness[sel] = projected[np.flatnonzero(improved), best[improved]]
        witness_z[sel] = codes[np.flatnonzero(improved), best[improved]]
        fin = np.isfinite(reach[idx])
        target = 2.0 * reach[idx]
        if cfg.clamp_radius:
            target = np.minimum(radius[idx], target)
        radius[idx] = np.where(fin, target, radius[idx])
        for k, i in enumerate(idx):
            reach_hist[i].append(float(reach[i]))
            radius_hist[i].append(float(radius[i]))

    out = []
    for i in range(m):
        if deficient[i]:
            out.append(ReachEstimate(X[i].copy(), float("nan"), 0, float(radius[i])))
            continue
        r = float(reach[i])
        out.append(
            ReachEstimate(
                base_point=X[i].copy(),
                r_hat=r,
                n_samples_used=int(n_used[i]),
                search_radius_final=float(radius[i]),
                reach_history=reach_hist[i],
                radius_history=radius_hist[i],
                witness=witness[i].copy() if np.isfinite(r) else None,
                witness_latent=(
                    witness_z[i].copy()
                    if np.isfinite(r) and witness_z is not None and np.all(np.isfinite(witness_z[i]))
                    else None
                ),
            )
        )
    return out


def estimate_reach_at(x, J, model, cfg: SamplerConfig, index=0):
    """Single-point form of :func:`estimate_reach`; raises on rank deficiency."""
    J = np.asarray(J, dtype=float)
    est = estimate_reach(model, np.asarray(x, dtype=float)[None, :], J[None], cfg, indices=[index])[0]
    if np.isnan(est.r_hat):
        raise RankDeficient("Jacobian at the base point is rank deficient")
    return est
