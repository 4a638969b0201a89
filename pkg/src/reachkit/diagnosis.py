"""Per-observation within-reach classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import batched_reach_ratios, gram_cholesky
from .sampling import SamplerConfig, estimate_reach

# initial search radius for observations reconstructed exactly
FALLBACK_R0 = 1.0


@dataclass
class ReachDiagnosis:
    index: int
    recon_distance: float
    r_hat: float
    within_reach: bool
    margin: float  # r_hat - recon_distance
    n_samples: int = 0
    status: str = "ok"

    def as_row(self):
        return {
            "index": self.index,
            "recon_distance": self.recon_distance,
            "r_hat": self.r_hat,
            "within_reach": int(self.within_reach),
            "margin": self.margin,
            "n_samples": self.n_samples,
            "status": self.status,
        }


def data_sample_prior(points, jacobians, block=256):
    """Reach of each reconstruction against all the other reconstructions.

    Returns ``(reach, witness)`` suitable for the ``prior`` argument of
    :func:`reachkit.sampling.estimate_reach`.  Rank-deficient rows get ``inf``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    Js = np.asarray(jacobians, dtype=float)
    m = X.shape[0]
    L, deficient = gram_cholesky(Js)
    reach = np.full(m, np.inf)
    witness = np.full_like(X, np.nan)
    for start in range(0, m, block):
        stop = min(start + block, m)
        Y = np.broadcast_to(X, (stop - start,) + X.shape)
        ratios, _ = batched_reach_ratios(X[start:stop], Js[start:stop], Y, L=L[start:stop])
        ratios[deficient[start:stop]] = np.inf
        k = np.argmin(ratios, axis=1)
        reach[start:stop] = ratios[np.arange(stop - start), k]
        fin = np.isfinite(reach[start:stop])
        witness[start:stop][fin] = X[k[fin]]
    return reach, witness


def diagnose(model, X, cfg: SamplerConfig, r0=None, use_data_samples=False, indices=None, stream=()):
    """Classify each observation as within or outside the estimated reach.

    The reach is estimated at the reconstruction ``f(g(x))``.  Unless ``r0``
    (or ``cfg.r0``) is given, the search starts from a ball of radius
    ``2 * ||x - f(g(x))||``, which suffices to decide the comparison.  An
    observation is within reach iff ``recon_distance < r_hat``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = model.encode(X)
    X0 = model.decode(Z)
    J = model.jacobian(Z)
    dist = np.linalg.norm(X - X0, axis=1)
    if r0 is None:
        r0 = cfg.r0
    if r0 is None:
        radius = np.where(dist > 0, 2.0 * dist, FALLBACK_R0)
    else:
        radius = np.broadcast_to(np.asarray(r0, dtype=float), dist.shape)
    prior = data_sample_prior(X0, J) if use_data_samples else None
    ests = estimate_reach(model, X0, J, cfg, r0=radius, indices=indices, stream=stream, prior=prior)
    idx = np.arange(len(X)) if indices is None else indices
    out = []
    for i, (d, est) in enumerate(zip(dist, ests)):
        if np.isnan(est.r_hat):
            out.append(ReachDiagnosis(int(idx[i]), float(d), float("nan"), False, float("nan"), 0, "rank_deficient"))
            continue
        out.append(
            ReachDiagnosis(
                index=int(idx[i]),
                recon_distance=float(d),
                r_hat=est.r_hat,
                within_reach=bool(d < est.r_hat),
                margin=est.r_hat - float(d),
                n_samples=est.n_samples_used,
            )
        )
    return out


def pct_within_reach(diagnoses):
    if not diagnoses:
        return 0.0
    return 100.0 * sum(d.within_reach for d in diagnoses) / len(diagnoses)
