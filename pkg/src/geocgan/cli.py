"""Command-line interface: ``train``, ``eval``, ``ablate`` and ``inspect``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.  ``GGEN_SEED`` overrides the configured seed.
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import plots
from .checkpoint import header_summary, load_checkpoint, save_checkpoint
from .config import RunManifest, _now, config_from_mapping, load_config
from .errors import CheckpointError, ConfigError, GeoCGANError, TrainingError
from .numerics import make_rng
from .training import TrainConfig, build_dataset, train

EXPERIMENTS = ("median", "geodesic-sweep", "interp", "coverage", "ablate")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _config_error(exc):
    where = f" [{exc.field}]" if getattr(exc, "field", None) else ""
    _err(f"invalid configuration{where}: {exc}")
    return EXIT_USAGE


def _save_run(out, res_gen, res_disc, state, cfg, manifest, status):
    meta = {"config": cfg.to_dict(), "epoch": state.epoch}
    save_checkpoint(out / "model.ckpt", res_gen, res_disc, {"generator": state.g_opt, "discriminator": state.d_opt}, meta)
    manifest.status = status
    manifest.finished = _now()
    manifest.write(out / "manifest.json")


def cmd_train(args):
    overrides = {"mode": args.mode, "seed": args.seed, "epochs": args.epochs}
    try:
        if args.manifest:
            cfg = config_from_mapping(RunManifest.read(args.manifest).config, overrides)
        elif args.config:
            cfg = load_config(args.config, overrides)
        else:
            raise ConfigError("one of --config or --manifest is required", field="config")
    except ConfigError as exc:
        return _config_error(exc)
    out = Path(args.out or Path("runs") / (Path(args.config or args.manifest).stem))
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.for_config(cfg)
    manifest.write(out / "manifest.json")
    try:
        res = train(build_dataset(cfg), cfg, progress=None if args.quiet else
                    lambda e, rec: print(f"epoch {e}: " + " ".join(f"{k}={v:.4g}" for k, v in rec.items())))
    except TrainingError as exc:
        st = getattr(exc, "last_state", None)
        if st is not None:
            _save_run(out, st.gen, st.disc, st, cfg, manifest, "failed")
        _err(f"training failed at epoch {exc.epoch}, step {exc.step} ({exc.component}): {exc}")
        return EXIT_FAIL
    except ConfigError as exc:
        return _config_error(exc)
    res.metrics.write(out / "metrics.csv")
    _save_run(out, res.gen, res.disc, res.state, cfg, manifest, "ok")
    print(f"wrote {out / 'model.ckpt'}, {out / 'metrics.csv'}, {out / 'manifest.json'}")
    return EXIT_OK


def _conditions(ds, n):
    return ds.x_eval[:n]


def _eval_median(ckpt, cfg, args, out):
    rows = {}
    for norm in ("l1", "l2"):
        rep = ev.median_convergence_check(norm, budget=args.budget, seed=args.seed)
        rows[norm] = {"target": rep.target, "error": rep.error, "distance_to_mean": rep.distance_to_mean,
                      "distance_to_median": rep.distance_to_median, "final_loss": rep.final_loss,
                      "converged": rep.converged}
    (out / "median.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows


def _eval_sweep(ckpt, cfg, args, out):
    ds = build_dataset(cfg)
    x = _conditions(ds, 1)[0]
    rng = make_rng(args.seed, 41)
    sampler = ev.latent_sampler(cfg.k, cfg.walk_radius, args.sampler)
    D = ev.generated_diameter(ckpt.gen, x, sampler, rng)
    res = ev.geodesic_sweep(ckpt.gen, x, ev.sweep_targets(D), args.directions, rng=rng)
    (out / "sweep.csv").write_text(res.to_csv())
    if args.svg:
        le = [r.L_E for r in res.records]
        plots.write_svg(out / "sweep.svg", {"geodesic": (le, [r.mean_LG for r in res.records]), "identity": (le, le)},
                        title="Geodesic vs Euclidean length", xlabel="L_E", ylabel="L_G")
    return {"mean_relative_gap": res.mean_relative_gap, "fallbacks": res.fallbacks, "failures": res.failures}


def _eval_interp(ckpt, cfg, args, out):
    ds = build_dataset(cfg)
    rng = make_rng(args.seed, 42)
    summ = ev.interpolation_study(ckpt.gen, _conditions(ds, args.conditions),
                                  ev.latent_sampler(cfg.k, cfg.walk_radius, args.sampler), pairs=args.pairs, rng=rng)
    (out / "interp.csv").write_text(summ.to_csv())
    plots.write_csv(out / "interp_profiles.csv", ["pair", "step", "velocity"],
                    [(i, j, v) for i, p in enumerate(summ.profiles) for j, v in enumerate(p.velocities)])
    if args.svg:
        series = {f"pair {i}": (np.arange(len(p.velocities)), p.velocities) for i, p in enumerate(summ.profiles[:5])}
        plots.write_svg(out / "interp.svg", series, title="Interpolation velocity", xlabel="step", ylabel="velocity")
    return {"pairs": len(summ.profiles), "mean_relative_std": summ.mean_relative_std}


def _eval_coverage(ckpt, cfg, args, out):
    ds = build_dataset(cfg)
    rep = ev.mode_coverage(ckpt.gen, ds, args.samples, _conditions(ds, args.conditions),
                           ev.latent_sampler(cfg.k, cfg.walk_radius, args.sampler), make_rng(args.seed, 43))
    res = {"coverage": rep.coverage, "realism": rep.realism, "per_x": rep.per_x.tolist(),
           "in_mode_fraction": float(rep.in_mode_fraction.mean())}
    (out / "coverage.json").write_text(json.dumps(res, indent=2) + "\n")
    return res


def _eval_ablate(ckpt, cfg, args, out):
    rows = ev.ablation_grid(args.axes.split(","), cfg, jobs=args.jobs)
    (out / "ablation.csv").write_text(ev.ablation_csv(rows))
    return {"cells": len(rows), "failed": sum(r["status"] != "ok" for r in rows)}


_EVALS = {"median": _eval_median, "geodesic-sweep": _eval_sweep, "interp": _eval_interp,
          "coverage": _eval_coverage, "ablate": _eval_ablate}


def cmd_eval(args):
    if args.experiment not in EXPERIMENTS:
        _err(f"unknown experiment {args.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        return EXIT_USAGE
    if not os.path.isfile(args.checkpoint):
        _err(f"checkpoint not found: {args.checkpoint}")
        return EXIT_USAGE
    try:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = config_from_mapping(ckpt.metadata.get("config", {}), {"seed": args.seed})
    except CheckpointError as exc:
        _err(f"unreadable checkpoint: {exc}")
        return EXIT_USAGE
    except ConfigError as exc:
        return _config_error(exc)
    args.seed = cfg.seed
    out = Path(args.out or Path(args.checkpoint).resolve().parent)
    out.mkdir(parents=True, exist_ok=True)
    try:
        summary = _EVALS[args.experiment](ckpt, cfg, args, out)
    except GeoCGANError as exc:
        _err(f"{args.experiment} failed: {exc}")
        return EXIT_FAIL
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_ablate(args):
    try:
        cfg = load_config(args.config, {"seed": args.seed})
        axes = args.axes.split(",")
        ev.ablation_cells(axes, cfg)
    except ConfigError as exc:
        return _config_error(exc)
    except GeoCGANError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = Path(args.out or "ablation")
    out.mkdir(parents=True, exist_ok=True)
    rows = ev.ablation_grid(axes, cfg, jobs=args.jobs)
    (out / "ablation.csv").write_text(ev.ablation_csv(rows))
    print(f"wrote {out / 'ablation.csv'} ({len(rows)} cells, {sum(r['status'] != 'ok' for r in rows)} failed)")
    return EXIT_OK


def cmd_inspect(args):
    try:
        lines = header_summary(args.checkpoint)
    except FileNotFoundError:
        _err(f"checkpoint not found: {args.checkpoint}")
        return EXIT_USAGE
    except CheckpointError as exc:
        _err(f"unreadable checkpoint: {exc}")
        return EXIT_USAGE
    print("\n".join(lines))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="geocgan", description="Geometry-aware conditional GAN toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a TOML config")
    t.add_argument("--config")
    t.add_argument("--manifest", help="re-run the configuration recorded in a manifest.json")
    t.add_argument("--out")
    t.add_argument("--mode", choices=("geo", "baseline"))
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run an evaluation protocol on a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("experiment")
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--directions", type=int, default=ev.SWEEP_DIRECTIONS)
    e.add_argument("--pairs", type=int, default=ev.INTERP_PAIRS)
    e.add_argument("--samples", type=int, default=64)
    e.add_argument("--conditions", type=int, default=16)
    e.add_argument("--sampler", choices=("ball", "shell"), default="shell")
    e.add_argument("--budget", type=int, default=3000)
    e.add_argument("--axes", default="lh_variant")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--svg", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    a.add_argument("--config", required=True)
    a.add_argument("--axes", default="lh_variant,projection,k,losses")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("inspect", help="print a checkpoint header")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
