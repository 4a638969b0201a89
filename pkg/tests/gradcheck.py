"""Finite-difference oracles shared by the gradient tests."""

import numpy as np

from reachkit.geometry import normal_projection
from reachkit.network import loss_gradients


def fd_jacobian(f, z, h=1e-5):
    cols = [(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(z.size)]
    return np.stack(cols, axis=-1)


def rel_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8))


def richardson(f, theta, h=1e-6):
    """Fourth-order central differences of a scalar function of a flat vector."""
    out = np.empty_like(theta)
    for i in range(theta.size):
        def d(step):
            t = theta.copy()
            t[i] += step
            hi = f(t)
            t[i] -= 2 * step
            return (hi - f(t)) / (2 * step)

        out[i] = (4 * d(h / 2) - d(h)) / 3
    return out


def loss_grad_error(model, X, lam, h=1e-6, h_decoder=None, **witness):
    """Worst relative error of the analytic parameter gradients.

    Decoder gradients are compared with the full objective and encoder
    gradients with the reconstruction term alone, since the penalty does not
    propagate into the encoder.  ``h_decoder`` overrides the step for the
    decoder parameters (see ``witness_step``).
    """
    _, g_enc, g_dec = loss_gradients(model, X, lam, **witness)
    errs = []
    h_dec = h if h_decoder is None else h_decoder
    for net, grads, use_lam, step in ((model.decoder, g_dec, lam, h_dec), (model.encoder, g_enc, 0.0, h)):
        theta = net.get_flat()
        kw = witness if use_lam else {}

        def loss(t):
            net.set_flat(t)
            return loss_gradients(model, X, use_lam, **kw)[0].total

        numeric = richardson(loss, theta, step)
        net.set_flat(theta)
        errs.append(rel_error(np.concatenate([g.ravel() for g in grads]), numeric))
    return max(errs)


def witness_step(model, X, witnesses, h=1e-6):
    """Finite-difference step small enough for fixed witnesses.

    A witness almost tangent to the decoded manifold has a tiny normal
    component, and the reach ratio divides by it; the step must move the
    reconstruction by much less than that component to stay in the smooth
    regime.
    """
    Z = model.encode(X)
    P, J = model.decode(Z), model.jacobian(Z)
    scale = np.inf
    for p, j, w in zip(P, J, witnesses):
        if np.all(np.isfinite(w)):
            scale = min(scale, np.linalg.norm(normal_projection(j, w - p)))
    return min(h, 1e-2 * scale)
