"""Small feed-forward networks with exact Jacobians and hand-written backprop.

A layer computes ``act(W @ h + b)`` with ``W`` stored ``(out, in)``.  Besides
the primal pass, :meth:`MLP.forward_tangent` pushes a stack of tangent
vectors through the network (forward-mode differentiation).  With an identity
seed this yields the Jacobian in ``d`` passes.  :meth:`MLP.backward` accepts
gradients for both the outputs and the propagated tangents, which is what a
loss depending on the decoder Jacobian needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteLoss, ParseError
from .geometry import reach_ratio_and_grad

FORMAT_VERSION = 1
ACTIVATIONS = ("elu", "identity", "softplus")


def elu(t):
    """ELU with alpha = 1: ``t`` for ``t >= 0``, ``exp(t) - 1`` otherwise."""
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, t, np.expm1(np.minimum(t, 0.0)))


def elu_grad(t):
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, 1.0, np.exp(np.minimum(t, 0.0)))


def elu_grad2(t):
    t = np.asarray(t, dtype=float)
    return np.where(t >= 0, 0.0, np.exp(np.minimum(t, 0.0)))


def softplus(t):
    """``log(1 + exp(t))`` without overflow; ``softplus(-inf) == 0``."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _act(name, a):
    if name == "elu":
        return elu(a), elu_grad(a), elu_grad2(a)
    if name == "softplus":
        s = sigmoid(a)
        return softplus(a), s, s * (1.0 - s)
    one = np.ones_like(a)
    return a, one, np.zeros_like(a)


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "elu"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class MLP:
    """Dense feed-forward network in float64.

    Used both as decoder (``R^d -> R^D``) and encoder (``R^D -> R^d``).
    """

    def __init__(self, layers, weights, biases):
        layers = [l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in layers]
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        if len(weights) != len(layers) or len(biases) != len(layers):
            raise ValueError("one weight matrix and bias per layer required")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_width != nxt.in_width:
                raise ValueError("layer widths do not chain")
        self.layers = layers
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for spec, W, b in zip(layers, self.weights, self.biases):
            if W.shape != (spec.out_width, spec.in_width) or b.shape != (spec.out_width,):
                raise ValueError("parameter shapes do not match layer specs")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite weights")

    @classmethod
    def create(cls, widths, seed=0, hidden_activation="elu"):
        """Glorot-uniform weights, zero biases, identity output layer."""
        rng = np.random.default_rng(seed)
        layers, weights, biases = [], [], []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            layers.append(LayerSpec(a, b, "identity" if last else hidden_activation))
            bound = np.sqrt(6.0 / (a + b))
            weights.append(rng.uniform(-bound, bound, size=(b, a)))
            biases.append(np.zeros(b))
        return cls(layers, weights, biases)

    @property
    def in_dim(self):
        return self.layers[0].in_width

    @property
    def out_dim(self):
        return self.layers[-1].out_width

    # decoder-facing names
    latent_dim = in_dim
    ambient_dim = out_dim

    def copy(self):
        return MLP(self.layers, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def params(self):
        """Flat list of parameter arrays (W0, b0, W1, b1, ...), shared not copied."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params)

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        pos = 0
        for p in self.params:
            p[...] = theta[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"expected input of width {self.in_dim}, got {X.shape[-1]}")
        return X

    def __call__(self, X):
        X = self._check(X)
        single = X.ndim == 1
        H = np.atleast_2d(X)
        for spec, W, b in zip(self.layers, self.weights, self.biases):
            H = H @ W.T + b
            if spec.activation != "identity":
                H = _act(spec.activation, H)[0]
        return H[0] if single else H

    def forward_tangent(self, X, T=None):
        """Forward pass that also propagates tangents.

        ``X`` is ``(n, in)``; ``T`` is ``(n, in, k)`` (default: identity, so the
        returned tangents are the Jacobian).  Returns ``(Y, TY, cache)`` with
        ``TY`` of shape ``(n, out, k)``.
        """
        X = np.atleast_2d(self._check(X))
        if T is None:
            T = np.broadcast_to(np.eye(self.in_dim), (X.shape[0], self.in_dim, self.in_dim))
        H, cache = X, []
        for spec, W, b in zip(self.layers, self.weights, self.biases):
            A = H @ W.T + b
            TA = W @ T
            act, g1, g2 = _act(spec.activation, A)
            cache.append((H, T, TA, g1, g2))
            H = act
            T = g1[:, :, None] * TA
        return H, T, cache

    def jacobian(self, Z):
        """Exact Jacobian ``(D, d)`` at ``Z``, or ``(n, D, d)`` for a batch."""
        Z = self._check(Z)
        _, T, _ = self.forward_tangent(np.atleast_2d(Z))
        return T[0] if Z.ndim == 1 else T

    def backward(self, cache, grad_out, grad_tangent=None):
        """Reverse pass through :meth:`forward_tangent`.

        Returns ``(param_grads, grad_input)``; ``param_grads`` aligns with
        :attr:`params`.  ``grad_input`` only covers the primal input (the
        tangent seed is treated as a constant).
        """
        gH = np.asarray(grad_out, dtype=float)
        gT = None if grad_tangent is None else np.asarray(grad_tangent, dtype=float)
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            H, T, TA, g1, g2 = cache[i]
            W = self.weights[i]
            gA = gH * g1
            if gT is not None:
                gA = gA + g2 * np.einsum("nok,nok->no", gT, TA)
                gTA = g1[:, :, None] * gT
                gW = gA.T @ H + np.einsum("nok,nik->oi", gTA, T)
                gT = np.swapaxes(W, 0, 1) @ gTA
            else:
                gW = gA.T @ H
            grads[2 * i] = gW
            grads[2 * i + 1] = gA.sum(axis=0)
            gH = gA @ W
        return grads, gH

    # persistence -----------------------------------------------------------

    def to_dict(self):
        return {
            "layers": [
                {"in_width": l.in_width, "out_width": l.out_width, "activation": l.activation}
                for l in self.layers
            ],
            "weights": [[float(v).hex() for v in W.ravel()] for W in self.weights],
            "biases": [[float(v).hex() for v in b] for b in self.biases],
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            layers = [LayerSpec(l["in_width"], l["out_width"], l["activation"]) for l in data["layers"]]
            weights = [
                np.array([float.fromhex(v) for v in w]).reshape(l.out_width, l.in_width)
                for l, w in zip(layers, data["weights"])
            ]
            biases = [np.array([float.fromhex(v) for v in b]) for b in data["biases"]]
            model = cls(layers, weights, biases)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed network description: {exc}") from exc
        if model.in_dim != data.get("in_dim", model.in_dim) or model.out_dim != data.get(
            "out_dim", model.out_dim
        ):
            raise ParseError("declared dims do not match layers")
        return model


class Autoencoder:
    """Encoder/decoder pair exposing the manifold interface used everywhere."""

    kind = "mlp"

    def __init__(self, encoder: MLP, decoder: MLP):
        if encoder.out_dim != decoder.in_dim or encoder.in_dim != decoder.out_dim:
            raise DimensionMismatch("encoder and decoder dimensions disagree")
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def create(cls, ambient_dim, latent_dim, hidden=(128, 128, 128), seed=0):
        rng = np.random.default_rng(seed)
        s_enc, s_dec = rng.integers(0, 2**63 - 1, size=2)
        enc = MLP.create([ambient_dim, *hidden, latent_dim], seed=int(s_enc))
        dec = MLP.create([latent_dim, *hidden[::-1], ambient_dim], seed=int(s_dec))
        return cls(enc, dec)

    @property
    def latent_dim(self):
        return self.decoder.in_dim

    @property
    def ambient_dim(self):
        return self.decoder.out_dim

    def encode(self, X):
        return self.encoder(X)

    def decode(self, Z):
        return self.decoder(Z)

    def jacobian(self, Z):
        return self.decoder.jacobian(Z)

    def reconstruct(self, X):
        return self.decoder(self.encoder(X))

    def copy(self):
        return Autoencoder(self.encoder.copy(), self.decoder.copy())

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "type": "autoencoder",
            "latent_dim": self.latent_dim,
            "ambient_dim": self.ambient_dim,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"unsupported format_version {data.get('format_version')!r}")
        model = cls(MLP.from_dict(data["encoder"]), MLP.from_dict(data["decoder"]))
        if (model.latent_dim, model.ambient_dim) != (data.get("latent_dim"), data.get("ambient_dim")):
            raise ParseError("declared latent/ambient dims do not match networks")
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class LossParts:
    total: float
    recon: float
    reach: float


def loss_gradients(model: Autoencoder, X, lam=0.0, witnesses=None, witness_latents=None):
    """Loss and exact parameter gradients of the reach-regularized objective.

    The objective is the batch mean of
    ``||f(g(x)) - x||^2 + lam * softplus(||f(g(x)) - x|| - R(f(g(x)), y*))``
    where ``y*`` is the sample attaining the reach estimate for ``x``.  Pass
    either ``witnesses`` (points, held constant) or ``witness_latents`` (codes
    ``z*`` with ``y* = f(z*)`` re-decoded, so the penalty sees the witness
    move with the decoder).  NaN rows mean infinite reach, hence no penalty.
    The penalty only reaches the decoder: latent codes inside it are detached
    from the encoder.

    Returns ``(LossParts, encoder_grads, decoder_grads)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if witnesses is not None and witness_latents is not None:
        raise ValueError("pass witnesses or witness_latents, not both")
    enc, dec = model.encoder, model.decoder
    Z, _, enc_cache = enc.forward_tangent(X, T=np.zeros((n, enc.in_dim, 0)))
    regularize = lam != 0.0 and (witnesses is not None or witness_latents is not None)
    if regularize:
        Xr, Jr, dec_cache = dec.forward_tangent(Z)
    else:
        Xr, _, dec_cache = dec.forward_tangent(Z, T=np.zeros((n, dec.in_dim, 0)))
    if not np.all(np.isfinite(Xr)):
        raise NonFiniteLoss("non-finite reconstruction")
    resid = Xr - X
    recon = float(np.sum(resid**2) / n)
    g_recon = 2.0 * resid / n

    dec_grads, gZ = dec.backward(dec_cache, g_recon)
    enc_grads, _ = enc.backward(enc_cache, gZ)
    reach = 0.0
    if regularize:
        live = witness_latents is not None
        if live:
            Zw = np.asarray(witness_latents, dtype=float).reshape(n, dec.in_dim)
            active = np.all(np.isfinite(Zw), axis=1)
            Y = np.zeros_like(Xr)
            if np.any(active):
                Ya, _, w_cache = dec.forward_tangent(Zw[active], T=np.zeros((int(active.sum()), dec.in_dim, 0)))
                Y[active] = Ya
        else:
            Y = np.asarray(witnesses, dtype=float)
            active = np.all(np.isfinite(Y), axis=1)
        gX = np.zeros_like(Xr)
        gJ = np.zeros_like(Jr)
        if np.any(active):
            R, dR_dx, dR_dJ = reach_ratio_and_grad(Xr[active], Jr[active], Y[active])
            dist = np.linalg.norm(resid[active], axis=1)
            margin = dist - R
            reach = float(np.sum(softplus(margin)) / n)
            s = np.where(np.isfinite(R), sigmoid(margin) * lam / n, 0.0)
            safe = np.where(dist > 0, dist, 1.0)
            ddist = np.where(dist[:, None] > 0, resid[active] / safe[:, None], 0.0)
            gX[active] = s[:, None] * (ddist - dR_dx)
            gJ[active] = -s[:, None, None] * dR_dJ
        reg_grads, _ = dec.backward(dec_cache, gX, gJ)
        dec_grads = [a + b for a, b in zip(dec_grads, reg_grads)]
        if live and np.any(active):
            # R depends on the witness through v = y - x, so dR/dy = -dR/dx
            w_grads, _ = dec.backward(w_cache, s[:, None] * dR_dx)
            dec_grads = [a + b for a, b in zip(dec_grads, w_grads)]
    total = recon + lam * reach
    if not np.isfinite(total):
        raise NonFiniteLoss("non-finite loss")
    return LossParts(total, recon, reach), enc_grads, dec_grads
