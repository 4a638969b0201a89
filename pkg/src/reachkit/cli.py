"""``reachkit`` command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure (non-finite loss or
rank-deficient Jacobians at more than half of the analysed points).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys

import numpy as np

from . import __version__
from .datasets import CircleArcConfig, gen_circle_arc, gen_quadratic_surface_samples, load_point_cloud, save_point_cloud
from .diagnosis import diagnose, pct_within_reach
from .errors import ConfigError, NonFiniteLoss, ReachError
from .manifolds import QuadraticSurface, manifold_from_dict
from .network import Autoencoder
from .projection import project
from .sampling import SamplerConfig, estimate_reach
from .training import TrainingConfig, train, write_reports_csv

log = logging.getLogger("reachkit")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

DIAGNOSIS_COLUMNS = ("index", "recon_distance", "r_hat", "within_reach", "margin", "n_samples", "status")
VERIFY_COLUMNS = DIAGNOSIS_COLUMNS + ("reach_class", "oracle_unique", "n_minima", "distance_gap", "agreement")
SWEEP_COLUMNS = ("ambient_dim", "trials", "mean_estimate", "min_estimate", "mean_overestimation")


class NumericalFailure(Exception):
    pass


def load_model(path):
    """Autoencoder checkpoint or analytic manifold description (JSON)."""
    with open(path) as fh:
        data = json.load(fh)
    kind = data.get("type") if isinstance(data, dict) else None
    if kind == "autoencoder":
        return Autoencoder.from_dict(data), data
    if kind == "analytic":
        return manifold_from_dict(data), data
    raise ValueError(f"{path}: unknown model type {kind!r}")


def _check_dims(model, X):
    if X.shape[1] != model.ambient_dim:
        raise ValueError(f"data has {X.shape[1]} columns, model expects {model.ambient_dim}")


def _sampler(args, base=None):
    base = base or SamplerConfig()
    return SamplerConfig(
        r0=args.r0 if args.r0 is not None else base.r0,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        num_batches=args.num_batches if args.num_batches is not None else base.num_batches,
        seed=args.seed if args.seed is not None else base.seed,
        clamp_radius=base.clamp_radius,
    )


def _writer(path):
    fh = open(path, "w", newline="") if path and path != "-" else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_rows(path, columns, rows):
    fh, w = _writer(path)
    try:
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _run_diagnosis(args, model, X):
    cfg = _sampler(args)
    diags = diagnose(model, X, cfg, use_data_samples=not args.no_data_samples)
    bad = sum(d.status != "ok" for d in diags)
    if bad * 2 > len(diags):
        raise NumericalFailure(f"rank-deficient Jacobian at {bad} of {len(diags)} points")
    return diags


def cmd_gen_data(args):
    if args.kind == "circle":
        cfg = CircleArcConfig(
            n_points=args.n_points, radius=args.radius, noise_scale=args.noise_scale, noise=args.noise, seed=args.seed or 0
        )
        X = gen_circle_arc(cfg)
    else:
        surf, X, _ = gen_quadratic_surface_samples(args.ambient_dim, args.n_points, args.domain_radius, seed=args.seed or 0)
        if args.model_out:
            with open(args.model_out, "w") as fh:
                json.dump(surf.to_dict(), fh)
    save_point_cloud(args.out, X, header=[f"x{i}" for i in range(X.shape[1])])
    print(f"wrote {X.shape[0]} points of dimension {X.shape[1]} to {args.out}")


def _training_config(args, **override):
    """Config file merged with command-line overrides, validated as a whole."""
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config", "must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.lam is not None:
        data["lambda"] = args.lam
    sampler = data.get("sampler", {})
    if isinstance(sampler, dict):
        sampler = dict(sampler)
        for key in ("r0", "batch_size", "num_batches"):
            if getattr(args, key) is not None:
                sampler[key] = getattr(args, key)
        data["sampler"] = sampler
    data.update(override)
    return TrainingConfig.from_dict(data)


def _fit(args, cfg, X, model, start_epoch):
    X_test = load_point_cloud(args.test_data) if args.test_data else None
    log.info("config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    try:
        model, reports = train(X, cfg, model=model, X_test=X_test, start_epoch=start_epoch)
    except NonFiniteLoss as exc:
        _save_model(exc.model, args.model_out, start_epoch, cfg)
        if args.out:
            write_reports_csv(exc.reports, args.out)
        raise
    epochs = start_epoch + (reports[-1].epoch - start_epoch if reports else 0)
    _save_model(model, args.model_out, epochs, cfg)
    if args.out:
        write_reports_csv(reports, args.out)
    if reports:
        r = reports[-1]
        print(f"epoch {r.epoch}: recon {r.recon_loss_train:.6g}, within reach {r.pct_within_reach:.1f}%")


def _save_model(model, path, epochs, cfg):
    doc = model.to_dict()
    doc["epochs_trained"] = int(epochs)
    doc["config_digest"] = cfg.digest()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def cmd_train(args):
    X = load_point_cloud(args.data)
    cfg = _training_config(args)
    _fit(args, cfg, X, None, 0)


def cmd_regularize(args):
    X = load_point_cloud(args.data)
    model, doc = load_model(args.model)
    if not isinstance(model, Autoencoder):
        raise ValueError("regularize needs an autoencoder checkpoint")
    _check_dims(model, X)
    cfg = _training_config(args, pretrain_epochs=0)
    if cfg.regularized_epochs == 0 and cfg.regularized_iterations is None:
        raise ValueError("config sets neither regularized_epochs nor regularized_iterations")
    _fit(args, cfg, X, model, int(doc.get("epochs_trained", 0)))


def cmd_analyze(args):
    model, _ = load_model(args.model)
    X = load_point_cloud(args.data)
    _check_dims(model, X)
    diags = _run_diagnosis(args, model, X)
    _write_rows(args.out, DIAGNOSIS_COLUMNS, [d.as_row() for d in diags])
    inside = sum(d.within_reach for d in diags)
    print(f"within reach: {inside}/{len(diags)} ({pct_within_reach(diags):.1f}%)", file=sys.stderr)


def agreement(within_reach, oracle_unique):
    if not within_reach:
        return "confirmed" if not oracle_unique else "conservative warning"
    return "consistent" if oracle_unique else "missed"


def cmd_verify_uniqueness(args):
    model, _ = load_model(args.model)
    X = load_point_cloud(args.data)
    _check_dims(model, X)
    diags = _run_diagnosis(args, model, X)
    rows = []
    for x, d in zip(X, diags):
        res = project(x, model, restarts=args.restarts, seed=(args.seed or 0) + d.index)
        row = d.as_row()
        row.update(
            reach_class="not flagged" if d.within_reach else "provably outside reach",
            oracle_unique=int(res.unique),
            n_minima=len(res.minima),
            distance_gap=res.distance_gap,
            agreement=agreement(d.within_reach, res.unique),
        )
        rows.append(row)
    _write_rows(args.out, VERIFY_COLUMNS, rows)
    counts = {}
    for r in rows:
        counts[r["agreement"]] = counts.get(r["agreement"], 0) + 1
    print(", ".join(f"{k}: {v}" for k, v in sorted(counts.items())), file=sys.stderr)


def sweep_dimension(n, trials, cfg, seed=0):
    """Reach estimates at the vertex of the paraboloid embedded in ``R^n``."""
    surf = QuadraticSurface.random(n, 2, seed=seed)
    origin = np.zeros((trials, n))
    J = np.broadcast_to(surf.jacobian(np.zeros(2)), (trials, n, 2))
    ests = estimate_reach(surf, origin, J, cfg, stream=(n,))
    return np.array([e.r_hat for e in ests])


def cmd_sweep_dim(args):
    if min(args.dims) < 3:
        raise ValueError("ambient dimensions must be >= 3")
    cfg = SamplerConfig(
        r0=args.r0 if args.r0 is not None else 5.0,
        batch_size=args.batch_size or 10,
        num_batches=args.num_batches or 1,
        seed=args.seed or 0,
    )
    rows = []
    for n in args.dims:
        est = sweep_dimension(n, args.trials, cfg, seed=args.seed or 0)
        rows.append(
            {
                "ambient_dim": n,
                "trials": args.trials,
                "mean_estimate": float(np.mean(est)),
                "min_estimate": float(np.min(est)),
                "mean_overestimation": float(np.mean(est - 0.5)),
            }
        )
        log.info("n=%d mean overestimation %.6g", n, rows[-1]["mean_overestimation"])
    _write_rows(args.out, SWEEP_COLUMNS, rows)


def cmd_export_manifold(args):
    model, _ = load_model(args.model)
    lo, hi = args.range
    axis = np.linspace(lo, hi, args.grid)
    d = model.latent_dim
    if d == 1:
        Z = axis[:, None]
    elif d == 2:
        Z = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        raise ValueError("export-manifold supports latent dimension 1 or 2")
    X = model.decode(Z)
    header = [f"z{i}" for i in range(d)] + [f"x{i}" for i in range(X.shape[1])]
    fh, w = _writer(args.out)
    try:
        w.writerow(header)
        for z, x in zip(Z, X):
            w.writerow([repr(float(v)) for v in (*z, *x)])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _add_sampler_flags(p):
    p.add_argument("--r0", type=float, help="initial search radius (default: 2x reconstruction distance)")
    p.add_argument("--batch-size", type=int, help="ball samples per batch")
    p.add_argument("--num-batches", type=int, help="sampling batches per point")


def build_parser():
    parser = argparse.ArgumentParser(prog="reachkit", description="Pointwise normal reach tools for autoencoders.")
    parser.add_argument("--version", action="version", version=f"reachkit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--seed", type=int, help="random seed")
    sub = parser.add_subparsers(dest="command", required=True)
    add = lambda name, **kw: sub.add_parser(name, parents=[common], **kw)  # noqa: E731

    p = add("gen-data", help="generate a synthetic point cloud")
    p.add_argument("kind", choices=["circle", "quadratic"])
    p.add_argument("--n-points", type=int, default=400)
    p.add_argument("--radius", type=float, default=CircleArcConfig.radius)
    p.add_argument("--noise-scale", type=float, default=CircleArcConfig.noise_scale)
    p.add_argument("--noise", choices=["radial", "scalar"], default="radial")
    p.add_argument("--ambient-dim", type=int, default=3)
    p.add_argument("--domain-radius", type=float, default=2.0)
    p.add_argument("--model-out", help="also write the analytic quadratic surface (JSON)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (
        ("train", cmd_train, "train an autoencoder (pretraining, then optional regularization)"),
        ("regularize", cmd_regularize, "continue training a checkpoint with the reach penalty"),
    ):
        p = add(name, help=helptext)
        p.add_argument("--data", required=True, help="training CSV")
        p.add_argument("--test-data", help="held-out CSV for test reconstruction loss")
        p.add_argument("--config", help="training config JSON")
        if name == "regularize":
            p.add_argument("--model", required=True, help="checkpoint to continue from")
            p.add_argument("--lambda", dest="lam", type=float, required=True, help="penalty weight")
        else:
            p.add_argument("--lambda", dest="lam", type=float, help="penalty weight")
        p.add_argument("--model-out", required=True, help="checkpoint to write")
        p.add_argument("--out", help="epoch report CSV")
        _add_sampler_flags(p)
        p.set_defaults(func=func)

    analysis = (
        ("analyze", cmd_analyze, "classify observations as within or outside the estimated reach"),
        ("verify-uniqueness", cmd_verify_uniqueness, "cross-check reach diagnoses against a multi-restart projection"),
    )
    for name, func, summary in analysis:
        p = add(name, help=summary)
        p.add_argument("--model", required=True, help="autoencoder checkpoint or analytic manifold JSON")
        p.add_argument("--data", required=True)
        p.add_argument("--no-data-samples", action="store_true", help="skip the reconstructed-data sample set")
        p.add_argument("--out", default="-")
        _add_sampler_flags(p)
        if name == "verify-uniqueness":
            p.add_argument("--restarts", type=int, default=32, help="projection restarts per point")
        p.set_defaults(func=func)

    p = add("sweep-dim", help="reach estimate bias on the paraboloid versus ambient dimension")
    p.add_argument("--dims", type=int, nargs="+", default=[3, 5, 10, 20, 50])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", default="-")
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_sweep_dim)

    p = add("export-manifold", help="decode a latent grid for plotting")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--range", type=float, nargs=2, default=[-3.0, 3.0], metavar=("LO", "HI"))
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_export_manifold)
    return parser


def _run_digest(args):
    items = {k: v for k, v in vars(args).items() if k != "func"}
    return hashlib.sha256(json.dumps(items, sort_keys=True, default=str).encode()).hexdigest()[:16]


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    log.info("reachkit %s command=%s seed=%s args=%s", __version__, args.command, args.seed, _run_digest(args))
    try:
        args.func(args)
    except (NonFiniteLoss, NumericalFailure) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ReachError, ValueError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
