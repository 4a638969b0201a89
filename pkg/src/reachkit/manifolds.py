"""Closed-form manifolds with the same interface as :class:`Autoencoder`.

Each class provides ``decode``, ``encode`` (an analytic stand-in for the
encoder), ``jacobian``, ``latent_dim`` and ``ambient_dim``.  Inputs are a
single point or a batch of row vectors, mirroring :class:`reachkit.network.MLP`.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, ParseError


def _rows(A, width, what):
    A = np.asarray(A, dtype=float)
    if A.shape[-1] != width:
        raise DimensionMismatch(f"{what}: expected width {width}, got {A.shape[-1]}")
    return A, A.ndim == 1


def random_orthogonal(n, rng):
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


class Circle:
    """``theta -> radius * (cos theta, sin theta)``; reach equals the radius."""

    kind = "circle"
    latent_dim = 1
    ambient_dim = 2

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def decode(self, Z):
        Z, single = _rows(Z, 1, "latent")
        t = np.atleast_2d(Z)[:, 0]
        out = self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        return out[0] if single else out

    def encode(self, X):
        X, single = _rows(X, 2, "ambient")
        X2 = np.atleast_2d(X)
        out = np.arctan2(X2[:, 1], X2[:, 0])[:, None]
        return out[0] if single else out

    def jacobian(self, Z):
        Z, single = _rows(Z, 1, "latent")
        t = np.atleast_2d(Z)[:, 0]
        out = self.radius * np.stack([-np.sin(t), np.cos(t)], axis=1)[:, :, None]
        return out[0] if single else out

    def to_dict(self):
        return {"type": "analytic", "kind": self.kind, "radius": self.radius}


class FlatAffine:
    """``z -> offset + basis @ z``; a flat manifold with infinite reach."""

    kind = "flat"

    def __init__(self, basis, offset=None):
        self.basis = np.atleast_2d(np.asarray(basis, dtype=float))
        D, d = self.basis.shape
        if d > D:
            raise ValueError("basis must have at most as many columns as rows")
        self.offset = np.zeros(D) if offset is None else np.asarray(offset, dtype=float)
        self.latent_dim, self.ambient_dim = d, D

    def decode(self, Z):
        Z, single = _rows(Z, self.latent_dim, "latent")
        out = np.atleast_2d(Z) @ self.basis.T + self.offset
        return out[0] if single else out

    def encode(self, X):
        X, single = _rows(X, self.ambient_dim, "ambient")
        rhs = (np.atleast_2d(X) - self.offset).T
        out = np.linalg.lstsq(self.basis, rhs, rcond=None)[0].T
        return out[0] if single else out

    def jacobian(self, Z):
        Z, single = _rows(Z, self.latent_dim, "latent")
        if single:
            return self.basis.copy()
        return np.broadcast_to(self.basis, (Z.shape[0],) + self.basis.shape).copy()

    def to_dict(self):
        return {
            "type": "analytic",
            "kind": self.kind,
            "basis": self.basis.tolist(),
            "offset": self.offset.tolist(),
        }


class QuadraticSurface:
    """Graph of ``u -> |u|^2`` rotated into ``R^n``: ``u -> U (u, |u|^2, 0, ..., 0)``.

    With ``latent_dim=2`` this is the paraboloid used for the ambient
    dimension sweep; ``latent_dim=1, ambient_dim=2`` gives the parabola
    ``z -> (z, z^2)``.  The pointwise normal reach at the vertex is 1/2.
    The analytic encoder is the orthogonal projection onto the first
    ``latent_dim`` rotated axes, i.e. it drops the height coordinate.
    """

    kind = "quadratic"

    def __init__(self, ambient_dim=3, latent_dim=2, rotation=None):
        if ambient_dim < latent_dim + 1:
            raise ValueError("ambient_dim must exceed latent_dim")
        self.latent_dim, self.ambient_dim = latent_dim, ambient_dim
        U = np.eye(ambient_dim) if rotation is None else np.asarray(rotation, dtype=float)
        if U.shape != (ambient_dim, ambient_dim):
            raise ValueError("rotation must be ambient_dim x ambient_dim")
        self.rotation = U

    @classmethod
    def random(cls, ambient_dim, latent_dim=2, seed=0):
        rng = np.random.default_rng(seed)
        return cls(ambient_dim, latent_dim, random_orthogonal(ambient_dim, rng))

    def lift(self, Z):
        """Unrotated point ``(u, |u|^2, 0, ..., 0)``."""
        Z, single = _rows(Z, self.latent_dim, "latent")
        Z2 = np.atleast_2d(Z)
        out = np.zeros((Z2.shape[0], self.ambient_dim))
        out[:, : self.latent_dim] = Z2
        out[:, self.latent_dim] = np.sum(Z2**2, axis=1)
        return out[0] if single else out

    def decode(self, Z):
        return self.lift(Z) @ self.rotation.T

    def encode(self, X):
        X, single = _rows(X, self.ambient_dim, "ambient")
        out = (np.atleast_2d(X) @ self.rotation)[:, : self.latent_dim]
        return out[0] if single else out

    def jacobian(self, Z):
        Z, single = _rows(Z, self.latent_dim, "latent")
        Z2 = np.atleast_2d(Z)
        d = self.latent_dim
        J0 = np.zeros((Z2.shape[0], self.ambient_dim, d))
        J0[:, :d, :] = np.eye(d)
        J0[:, d, :] = 2.0 * Z2
        out = self.rotation @ J0
        return out[0] if single else out

    def to_dict(self):
        return {
            "type": "analytic",
            "kind": self.kind,
            "ambient_dim": self.ambient_dim,
            "latent_dim": self.latent_dim,
            "rotation": [[float(v).hex() for v in row] for row in self.rotation],
        }


def manifold_from_dict(data):
    """Inverse of the analytic ``to_dict`` methods."""
    try:
        kind = data["kind"]
        if kind == "circle":
            return Circle(data.get("radius", 1.0))
        if kind == "flat":
            return FlatAffine(data["basis"], data.get("offset"))
        if kind == "quadratic":
            rot = data.get("rotation")
            if rot is not None:
                rot = [[float.fromhex(v) if isinstance(v, str) else float(v) for v in row] for row in rot]
            return QuadraticSurface(data.get("ambient_dim", 3), data.get("latent_dim", 2), rot)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed analytic manifold: {exc}") from exc
    raise ParseError(f"unknown analytic manifold kind {data.get('kind')!r}")
