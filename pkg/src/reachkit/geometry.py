"""Reach ratio, normal-space projection and sample-based reach estimators.

Everything here is a pure function of its array arguments.  Points are rows
(``(..., D)``), Jacobians are ``(..., D, d)`` with one column per latent
direction.  Leading axes broadcast, so one call can handle many base points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicatePoint, EmptySampleSet, InsufficientSamples, RankDeficient

# ||P_N(y - x)|| / ||y - x|| at or below this counts as tangent (ratio = inf).
TANGENCY_TOL = 1e-9
# smallest eigenvalue of J^T J below RANK_TOL * largest -> not an immersion.
RANK_TOL = 1e-10
# ||y - x|| <= DUPLICATE_TOL * (1 + ||x||) -> y is x.
DUPLICATE_TOL = 1e-12


@dataclass
class ReachEstimate:
    """Pointwise normal reach estimate at one base point on the manifold."""

    base_point: np.ndarray
    r_hat: float
    n_samples_used: int
    search_radius_final: float
    reach_history: list = field(default_factory=list)
    radius_history: list = field(default_factory=list)
    # manifold sample attaining r_hat; None while r_hat is infinite
    witness: np.ndarray | None = None
    # latent code of the witness when it was produced by decoding
    witness_latent: np.ndarray | None = None


def gram_cholesky(J):
    """Cholesky factors of ``J^T J`` plus a mask of rank-deficient Jacobians.

    Returns ``(L, deficient)`` where ``L`` has shape ``(..., d, d)``.  Entries
    flagged as deficient carry an identity factor so downstream batched solves
    stay finite; callers must mask their results.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim < 2:
        raise ValueError("Jacobian must have at least 2 dimensions (D, d)")
    if not np.all(np.isfinite(J)):
        raise RankDeficient("Jacobian has non-finite entries")
    G = np.swapaxes(J, -1, -2) @ J
    eig = np.linalg.eigvalsh(G)
    deficient = ~(eig[..., 0] >= RANK_TOL * eig[..., -1]) | ~(eig[..., -1] > 0)
    d = G.shape[-1]
    G = np.where(deficient[..., None, None], np.eye(d), G)
    return np.linalg.cholesky(G), deficient


def _tangent_coefficients(J, L, V):
    # solves (J^T J) c = J^T v for each row v of V; V is (..., n, D)
    rhs = np.swapaxes(J, -1, -2) @ np.swapaxes(V, -1, -2)
    c = np.linalg.solve(L, rhs)
    c = np.linalg.solve(np.swapaxes(L, -1, -2), c)
    return np.swapaxes(c, -1, -2)  # (..., n, d)


def _normal_rows(J, L, V):
    c = _tangent_coefficients(J, L, V)
    return V - c @ np.swapaxes(J, -1, -2)


def normal_projection(J, v):
    """Project ``v`` onto the orthogonal complement of the columns of ``J``.

    Computes ``(I - J (J^T J)^{-1} J^T) v`` with a Cholesky solve.  ``v`` may
    be a single vector of length D or a stack of row vectors ``(n, D)``.

    >>> normal_projection([[1.0], [0.0]], [3.0, 4.0])
    array([0., 4.])
    """
    J = np.asarray(J, dtype=float)
    v = np.asarray(v, dtype=float)
    if J.ndim != 2:
        raise ValueError("normal_projection expects a single (D, d) Jacobian")
    if v.shape[-1] != J.shape[0]:
        raise ValueError(f"vector length {v.shape[-1]} != ambient dim {J.shape[0]}")
    L, deficient = gram_cholesky(J)
    if deficient:
        raise RankDeficient("J^T J is numerically singular")
    single = v.ndim == 1
    out = _normal_rows(J, L, np.atleast_2d(v))
    return out[0] if single else out


def tangent_projection(J, v):
    """Complement of :func:`normal_projection`: ``J (J^T J)^{-1} J^T v``."""
    v = np.asarray(v, dtype=float)
    return v - normal_projection(J, v)


def batched_reach_ratios(x, J, Y, L=None):
    """Reach ratios of many samples against one or more base points.

    Parameters
    ----------
    x : (..., D) base points
    J : (..., D, d) Jacobians at the base points
    Y : (..., n, D) samples for each base point
    L : optional precomputed Cholesky factors from :func:`gram_cholesky`

    Returns
    -------
    ratios : (..., n) array; ``inf`` for tangent samples and for duplicates
    duplicate : (..., n) bool mask of samples coinciding with their base point

    Rank deficiency is not checked when ``L`` is supplied.
    """
    x = np.asarray(x, dtype=float)
    J = np.asarray(J, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if L is None:
        L, deficient = gram_cholesky(J)
        if np.any(deficient):
            raise RankDeficient("J^T J is numerically singular")
    V = Y - x[..., None, :]
    vnorm2 = np.einsum("...i,...i->...", V, V)
    vnorm = np.sqrt(vnorm2)
    nnorm = np.linalg.norm(_normal_rows(J, L, V), axis=-1)
    xnorm = np.linalg.norm(x, axis=-1)[..., None]
    duplicate = vnorm <= DUPLICATE_TOL * (1.0 + xnorm)
    tangent = nnorm <= TANGENCY_TOL * vnorm
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = vnorm2 / (2.0 * nnorm)
    ratios = np.where(tangent | duplicate, np.inf, ratios)
    return ratios, duplicate


def reach_ratio(x, J, y):
    """``||x - y||^2 / (2 ||P_N(y - x)||)``, or ``inf`` if ``y - x`` is tangent.

    Raises :class:`DuplicatePoint` if ``y`` coincides with ``x``.
    """
    ratios, dup = batched_reach_ratios(x, J, np.asarray(y, dtype=float)[None, :])
    if dup[0]:
        raise DuplicatePoint("reach ratio undefined for y == x")
    return float(ratios[0])


def pointwise_reach_over_samples(x, J, samples):
    """Minimum reach ratio over a finite sample set (an upper bound on r_N(x))."""
    x = np.asarray(x, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise EmptySampleSet("no samples given")
    ratios, dup = batched_reach_ratios(x, J, samples)
    n_used = int(np.count_nonzero(~dup))
    if n_used == 0:
        raise EmptySampleSet("every sample coincides with the base point")
    k = int(np.argmin(ratios))
    r_hat = float(ratios[k])
    witness = samples[k].copy() if np.isfinite(r_hat) else None
    radius = float(np.max(np.linalg.norm(samples[~dup] - x, axis=1)))
    return ReachEstimate(
        base_point=x.copy(),
        r_hat=r_hat,
        n_samples_used=n_used,
        search_radius_final=radius,
        reach_history=[r_hat],
        radius_history=[radius],
        witness=witness,
    )


def global_reach_over_samples(points, jacobians, block=256):
    """Minimum reach ratio over all ordered pairs of distinct sample points.

    ``points`` is ``(m, D)`` and ``jacobians`` ``(m, D, d)``.  Returns ``inf``
    when every pair is tangent (a flat sample).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    Js = np.asarray(jacobians, dtype=float)
    if X.shape[0] < 2:
        raise InsufficientSamples("global reach needs at least 2 points")
    if Js.shape[0] != X.shape[0]:
        raise ValueError("one Jacobian per point required")
    L, deficient = gram_cholesky(Js)
    if np.any(deficient):
        raise RankDeficient(f"rank-deficient Jacobian at point {int(np.argmax(deficient))}")
    best = np.inf
    for start in range(0, X.shape[0], block):
        stop = min(start + block, X.shape[0])
        Y = np.broadcast_to(X, (stop - start,) + X.shape)
        ratios, _ = batched_reach_ratios(X[start:stop], Js[start:stop], Y, L=L[start:stop])
        best = min(best, float(ratios.min()))
    return best


def lemma_lower_bound_check(x, J, y, slack=1e-12):
    """True iff ``reach_ratio(x, J, y) >= ||x - y|| / 2`` up to relative slack."""
    r = reach_ratio(x, J, y)
    half = 0.5 * float(np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float)))
    return bool(r >= half * (1.0 - slack))


def reach_ratio_and_grad(x, J, y):
    """Batched reach ratio with its gradients w.r.t. the base point and Jacobian.

    ``x`` is ``(m, D)``, ``J`` ``(m, D, d)``, ``y`` ``(m, D)``.  Returns
    ``(R, dR/dx, dR/dJ)``.  Rows where the ratio is infinite get zero
    gradients.  The sample ``y`` is treated as a constant.

    With ``v = y - x``, ``c = (J^T J)^{-1} J^T v`` and ``n = v - J c``:
    ``dR/dv = v/|n| - |v|^2 n / (2|n|^3)`` and, since ``|n|^2`` is the
    minimum of ``|v - J c|^2`` over ``c``, ``dR/dJ = |v|^2 n c^T / (2|n|^3)``.
    """
    x = np.asarray(x, dtype=float)
    J = np.asarray(J, dtype=float)
    y = np.asarray(y, dtype=float)
    L, deficient = gram_cholesky(J)
    if np.any(deficient):
        raise RankDeficient("J^T J is numerically singular")
    v = (y - x)[:, None, :]
    c = _tangent_coefficients(J, L, v)[:, 0, :]
    n = v[:, 0, :] - np.einsum("mij,mj->mi", J, c)
    v = v[:, 0, :]
    vn2 = np.einsum("mi,mi->m", v, v)
    q = np.linalg.norm(n, axis=1)
    ok = (q > TANGENCY_TOL * np.sqrt(vn2)) & (np.sqrt(vn2) > 0)
    qs = np.where(ok, q, 1.0)
    R = np.where(ok, vn2 / (2.0 * qs), np.inf)
    coef = np.where(ok, vn2 / (2.0 * qs**3), 0.0)
    dR_dv = np.where(ok[:, None], v / qs[:, None], 0.0) - coef[:, None] * n
    dR_dJ = coef[:, None, None] * n[:, :, None] * c[:, None, :]
    return R, -dR_dv, dR_dJ
