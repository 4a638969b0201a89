"""Autoencoder training with an optional softplus reach penalty."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnosis import diagnose, pct_within_reach
from .errors import ConfigError, NonFiniteLoss, RankDeficient
from .network import Autoencoder, loss_gradients, softplus
from .sampling import SamplerConfig, estimate_reach

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
REPORT_COLUMNS = ("epoch", "recon_train", "recon_test", "reach_loss", "pct_within_reach")


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    pretrain_epochs: int = 100
    regularized_epochs: int = 0
    # when set, overrides regularized_epochs with a count of minibatch steps
    regularized_iterations: int | None = None
    lam: float = 1.0
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(batch_size=100, num_batches=3))
    report_every: int = 10
    report_subsample: int = 100
    hidden: tuple = (128, 128, 128)
    latent_dim: int = 1
    seed: int = 0
    # hold the reach witness fixed in space instead of re-decoding it
    detach_witness: bool = False

    def __post_init__(self):
        checks = [
            ("learning_rate", self.learning_rate > 0, "must be > 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("pretrain_epochs", self.pretrain_epochs >= 0, "must be >= 0"),
            ("regularized_epochs", self.regularized_epochs >= 0, "must be >= 0"),
            (
                "regularized_iterations",
                self.regularized_iterations is None or self.regularized_iterations >= 0,
                "must be >= 0",
            ),
            ("lambda", self.lam >= 0, "must be >= 0"),
            ("report_every", self.report_every >= 1, "must be >= 1"),
            ("report_subsample", self.report_subsample >= 1, "must be >= 1"),
            ("latent_dim", self.latent_dim >= 1, "must be >= 1"),
            ("seed", self.seed >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def total_epochs(self):
        return self.pretrain_epochs + self.regularized_epochs

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["hidden"] = list(self.hidden)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}")
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        sampler = data.pop("sampler", None)
        if sampler is not None:
            if not isinstance(sampler, dict):
                raise ConfigError("sampler", "must be an object")
            try:
                data["sampler"] = SamplerConfig(**sampler)
            except TypeError as exc:
                raise ConfigError("sampler", str(exc)) from None
            except ValueError as exc:
                raise ConfigError("sampler", str(exc)) from None
        types = {
            "learning_rate": (int, float),
            "lam": (int, float),
            "batch_size": int,
            "pretrain_epochs": int,
            "regularized_epochs": int,
            "report_every": int,
            "report_subsample": int,
            "latent_dim": int,
            "seed": int,
        }
        for key, typ in types.items():
            if key in data and (isinstance(data[key], bool) or not isinstance(data[key], typ)):
                raise ConfigError("lambda" if key == "lam" else key, f"expected {typ}, got {data[key]!r}")
        return cls(**data)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochReport:
    epoch: int
    recon_loss_train: float
    recon_loss_test: float | None
    reach_loss: float
    pct_within_reach: float
    lam: float = 0.0
    subsample: int = 0
    skipped_rank_deficient: int = 0

    def as_row(self):
        test = "" if self.recon_loss_test is None else repr(self.recon_loss_test)
        return [self.epoch, repr(self.recon_loss_train), test, repr(self.reach_loss), repr(self.pct_within_reach)]


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.as_row())


def reach_penalty(x, model, sampler: SamplerConfig, index=0):
    """``softplus(||f(g(x)) - x|| - r_hat(f(g(x))))`` with ``r0 = 2 ||f(g(x)) - x||``."""
    x = np.asarray(x, dtype=float)
    z = model.encode(x)
    x0 = model.decode(z)
    dist = float(np.linalg.norm(x0 - x))
    J = model.jacobian(z)
    r0 = sampler.r0 if sampler.r0 is not None else (2.0 * dist if dist > 0 else 1.0)
    est = estimate_reach(model, x0[None], J[None], sampler, r0=r0, indices=[index])[0]
    if math.isnan(est.r_hat):
        raise RankDeficient("Jacobian at the reconstruction is rank deficient")
    return float(softplus(dist - est.r_hat))


def reach_witnesses(model, X, sampler: SamplerConfig, indices, stream=()):
    """Run the estimator at each reconstruction and return the minimising samples.

    Rows are NaN where the reach is infinite or the Jacobian rank deficient.
    Returns ``(witnesses, witness_latents, n_rank_deficient)``.
    """
    Z = model.encode(X)
    X0 = model.decode(Z)
    J = model.jacobian(Z)
    dist = np.linalg.norm(X0 - X, axis=1)
    r0 = np.where(dist > 0, 2.0 * dist, 1.0) if sampler.r0 is None else sampler.r0
    ests = estimate_reach(model, X0, J, sampler, r0=r0, indices=indices, stream=stream)
    W = np.full_like(X0, np.nan)
    WZ = np.full_like(Z, np.nan)
    bad = 0
    for i, est in enumerate(ests):
        if math.isnan(est.r_hat):
            bad += 1
        elif est.witness is not None:
            W[i] = est.witness
            WZ[i] = est.witness_latent
    return W, WZ, bad


def recon_loss(model, X):
    X = np.atleast_2d(X)
    return float(np.mean(np.sum((model.reconstruct(X) - X) ** 2, axis=1)))


def _report(model, epoch, X, X_test, cfg, subset, lam, skipped):
    sub = X[subset]
    diags = diagnose(model, sub, cfg.sampler, indices=subset, stream=(epoch, 1))
    margins = np.array([-d.margin for d in diags if d.status == "ok"])
    reach_loss = float(np.mean(softplus(margins))) if margins.size else float("nan")
    return EpochReport(
        epoch=epoch,
        recon_loss_train=recon_loss(model, X),
        recon_loss_test=None if X_test is None else recon_loss(model, X_test),
        reach_loss=reach_loss,
        pct_within_reach=pct_within_reach(diags),
        lam=lam,
        subsample=len(subset),
        skipped_rank_deficient=skipped,
    )


def train(X, cfg: TrainingConfig, model: Autoencoder | None = None, X_test=None, start_epoch=0):
    """Train (or continue training) an autoencoder.

    Epochs ``1..pretrain_epochs`` optimise the plain reconstruction loss; the
    following epochs (or ``regularized_iterations`` minibatch steps) add
    ``cfg.lam`` times the reach penalty.  Returns ``(model, reports)``.  On a
    non-finite loss the model is rolled back to the end of the last complete
    epoch and :class:`NonFiniteLoss` is re-raised with ``.model`` and
    ``.reports`` attached.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if model is None:
        model = Autoencoder.create(X.shape[1], cfg.latent_dim, cfg.hidden, seed=cfg.seed)
    if model.ambient_dim != X.shape[1]:
        raise ValueError(f"data has {X.shape[1]} columns, model expects {model.ambient_dim}")
    rng = np.random.default_rng([cfg.seed, start_epoch])
    params = model.encoder.params + model.decoder.params
    opt = Adam(params, lr=cfg.learning_rate)
    n = X.shape[0]
    subset = np.sort(rng.choice(n, size=min(cfg.report_subsample, n), replace=False))
    log.info("training: seed=%d config=%s n=%d report_subsample=%d", cfg.seed, cfg.digest(), n, len(subset))

    reg_steps = cfg.regularized_iterations
    epochs = cfg.pretrain_epochs + (
        cfg.regularized_epochs if reg_steps is None else math.ceil(reg_steps / math.ceil(n / cfg.batch_size))
    )
    reports = []
    step = 0
    reg_done = 0
    last_good = [p.copy() for p in params]
    for e in range(1, epochs + 1):
        epoch = start_epoch + e
        lam = 0.0 if e <= cfg.pretrain_epochs else cfg.lam
        skipped = 0
        perm = rng.permutation(n)
        try:
            for start in range(0, n, cfg.batch_size):
                if lam > 0 and reg_steps is not None and reg_done >= reg_steps:
                    break
                batch = perm[start : start + cfg.batch_size]
                Xb = X[batch]
                kw = {}
                if lam > 0:
                    W, WZ, bad = reach_witnesses(model, Xb, cfg.sampler, batch, stream=(step,))
                    kw = {"witnesses": W} if cfg.detach_witness else {"witness_latents": WZ}
                    skipped += bad
                    reg_done += 1
                with np.errstate(over="ignore", invalid="ignore"):
                    _, g_enc, g_dec = loss_gradients(model, Xb, lam, **kw)
                grads = g_enc + g_dec
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFiniteLoss("non-finite gradient")
                opt.step(grads)
                step += 1
        except NonFiniteLoss as exc:
            for p, q in zip(params, last_good):
                p[...] = q
            exc.model, exc.reports = model, reports
            raise
        last_good = [p.copy() for p in params]
        last_of_phase = e == cfg.pretrain_epochs or e == epochs
        if e % cfg.report_every == 0 or last_of_phase:
            rep = _report(model, epoch, X, X_test, cfg, subset, lam, skipped)
            reports.append(rep)
            log.info(
                "epoch %d lam=%g recon=%.6g reach_loss=%.6g within=%.1f%%",
                epoch, lam, rep.recon_loss_train, rep.reach_loss, rep.pct_within_reach,
            )
    return model, reports
