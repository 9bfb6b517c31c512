"""Command-line surface.

Subcommands: simulate, fit, predict, summarize, select, cv-rho, benchmark.
Settings resolve in three layers: built-in defaults, then an optional
``key = value`` config file, then explicit flags.  Exit codes: 0 success,
2 configuration or archive problems, 3 data problems, 4 numerical failure.
Every output file leads with a ``# config_hash=...`` comment so archives,
datasets, and derived tables can be cross-checked.

The VCBART_THREADS environment variable caps worker processes (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .archive import (archive_hash, check_columns, load_draws,
                      save_draws_atomic)
from .config import (GeometricSplitPrior, Hyperparameters,
                     PolynomialSplitPrior, config_hash,
                     default_hyperparameters, load_config_file)
from .data import ingest_csv, panel_frame
from .evaluation import (benchmark_recovery, cv_rho, score_selection,
                         write_manifest, write_results)
from .exceptions import ConfigError, DataError, NumericalError
from .posterior import (beta_summary, median_probability_model, predict,
                        selection_probability_matrix)
from .sampler import fit_posterior
from .synthetic import TRUE_MODIFIER_SUPPORT, gen_panel

_HYPER_KEYS = ("n_trees", "sigma_df", "rho", "n_iter", "n_burn", "n_chains",
               "seed", "max_depth", "min_leaf_obs")


def n_workers() -> int:
    raw = os.environ.get("VCBART_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"VCBART_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError("VCBART_THREADS must be at least 1")
    return value


# ----------------------------------------------------------------------
# flag groups


def _add_hyper_flags(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("model settings")
    g.add_argument("--config", metavar="FILE",
                   help="key = value settings file; explicit flags win")
    g.add_argument("--n-trees", type=int)
    g.add_argument("--tau-scale", type=float,
                   help="multiplier applied to every leaf-jump prior sd")
    g.add_argument("--jump-sd", type=float,
                   help="leaf-jump prior sd (default n_trees**-0.5)")
    g.add_argument("--sigma-df", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--n-iter", type=int)
    g.add_argument("--n-burn", type=int)
    g.add_argument("--n-chains", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-depth", type=int)
    g.add_argument("--min-leaf-obs", type=int)
    g.add_argument("--split-prior", choices=["polynomial", "geometric"])
    g.add_argument("--split-base", type=float)
    g.add_argument("--split-power", type=float)
    g.add_argument("--split-gamma", type=float)


def _add_data_flags(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("input columns")
    g.add_argument("--subject-col", default="subject_id")
    g.add_argument("--time-col", default="time")
    g.add_argument("--y-col", default="y")
    g.add_argument("--x-cols", help="comma-separated covariate columns")
    g.add_argument("--z-cols", help="comma-separated modifier columns")


def _cols(arg: str | None) -> list[str] | None:
    return [c.strip() for c in arg.split(",")] if arg else None


def _resolve_hyper(args, p: int, n_modifiers: int) -> Hyperparameters:
    """defaults <- config file <- command-line flags."""
    settings: dict = {}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for key in _HYPER_KEYS + ("tau_scale", "jump_sd", "split_prior",
                              "split_base", "split_power", "split_gamma"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value

    tau_scale = float(settings.pop("tau_scale", 1.0))
    jump_sd = settings.pop("jump_sd", None)
    kind = settings.pop("split_prior", None)
    base = settings.pop("split_base", None)
    power = settings.pop("split_power", None)
    gamma = settings.pop("split_gamma", None)
    if kind == "geometric" or (kind is None and gamma is not None):
        settings["split_prior"] = GeometricSplitPrior(
            gamma=0.25 if gamma is None else float(gamma))
    elif kind == "polynomial" or base is not None or power is not None:
        settings["split_prior"] = PolynomialSplitPrior(
            base=0.95 if base is None else float(base),
            power=2.0 if power is None else float(power))

    unknown = set(settings) - set(_HYPER_KEYS) - {"split_prior"}
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    if jump_sd is not None:
        settings["jump_sd"] = tuple([tau_scale * float(jump_sd)] * (p + 1))
        tau_scale = 1.0
    return default_hyperparameters(p, n_modifiers, jump_sd_scale=tau_scale,
                                   **settings)


def _ingest(args):
    return ingest_csv(args.data, subject_col=args.subject_col,
                      time_col=args.time_col, y_col=args.y_col,
                      x_cols=_cols(args.x_cols), z_cols=_cols(args.z_cols))


def _write_csv(frame: pd.DataFrame, path, cfg_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        frame.to_csv(fh, index=False)


# ----------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    data, truth = gen_panel(n=args.n, n_i=args.n_i, sigma=args.sigma,
                            rho=args.rho, rng=rng, standardize_y=False)
    params = {"n": args.n, "n_i": args.n_i, "sigma": args.sigma,
              "rho": args.rho, "seed": args.seed}
    cfg = config_hash(params)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    time_idx = np.concatenate([np.arange(s) for s in data.subject_sizes])
    frame = panel_frame(data.y, data.x, data.z,
                        data.subject_labels[data.subject_index], time_idx)
    _write_csv(frame, out / "data.csv", cfg)

    truth_frame = pd.DataFrame(
        {"subject_id": data.subject_labels[data.subject_index],
         "time": time_idx})
    for j in range(truth.coefficients.shape[1]):
        truth_frame[f"beta{j}"] = truth.coefficients[:, j]
    _write_csv(truth_frame, out / "truth.csv", cfg)

    manifest = {
        "version": __version__,
        "config_hash": cfg,
        "params": params,
        "true_support": {f"beta{j}": sorted(s)
                         for j, s in enumerate(truth.support)},
        "files": ["data.csv", "truth.csv"],
    }
    write_manifest(manifest, out / "manifest.json")
    print(f"wrote {data.n_rows} rows for {data.n_subjects} subjects to {out}")
    return 0


def cmd_fit(args) -> int:
    data = _ingest(args)
    hyper = _resolve_hyper(args, data.n_covariates, data.n_modifiers)
    draws = fit_posterior(data, hyper, n_jobs=n_workers())
    save_draws_atomic(draws, args.out)

    sig = draws.sigmas(original_scale=True)
    qs = np.quantile(sig, [0.25, 0.5, 0.75])
    print(f"kept {draws.n_draws} draws "
          f"({hyper.n_chains} chains x {hyper.n_iter - hyper.n_burn})")
    for ch in draws.meta["chains"]:
        print(f"chain {ch['chain_id']}: tree acceptance "
              f"{ch['tree_accept_rate']:.3f}, sigma acceptance "
              f"{ch['sigma_accept_rate']:.3f}")
    print(f"sigma quartiles: {qs[0]:.4f} / {qs[1]:.4f} / {qs[2]:.4f}")
    print(f"archive {args.out} sha256 {archive_hash(args.out)[:16]}...")
    return 0


def _query_frame(args, meta) -> tuple[np.ndarray, np.ndarray, pd.DataFrame]:
    frame = pd.read_csv(args.data, comment="#")
    x_names = _cols(args.x_cols) or list(meta["x_names"])
    z_names = _cols(args.z_cols) or list(meta["z_names"])
    check_columns(meta, x_names, z_names)
    missing = [c for c in x_names + z_names if c not in frame.columns]
    if missing:
        raise DataError(f"query file lacks columns {missing}")
    x = frame[x_names].to_numpy(dtype=np.float64)
    z = frame[z_names].to_numpy(dtype=np.float64)
    return x, z, frame


def cmd_predict(args) -> int:
    draws = load_draws(args.archive)
    if args.mode == "conditional" and not args.history:
        raise ConfigError("conditional mode requires --history r1,r2,...")
    x, z, frame = _query_frame(args, draws.meta)
    history = None
    if args.history:
        history = np.array([float(v) for v in args.history.split(",")])
    res = predict(draws, x, z, mode=args.mode, residual_history=history,
                  level=args.level)
    out = pd.DataFrame({"mean": res.mean, "lower": res.lower,
                        "upper": res.upper})
    for col in ("time", "subject_id"):  # insert at 0, so subject_id ends first
        if col in frame.columns:
            out.insert(0, col, frame[col])
    _write_csv(out, args.out, draws.meta["config_hash"])
    print(f"predicted {len(out)} rows ({args.mode}, level {args.level}) "
          f"-> {args.out}")
    return 0


def cmd_summarize(args) -> int:
    draws = load_draws(args.archive)
    meta = draws.meta
    R = int(meta["R"])
    z_names = list(meta["z_names"])
    z_min = np.asarray(meta["z_min"], dtype=np.float64)
    z_max = np.asarray(meta["z_max"], dtype=np.float64)

    if args.data:
        frame = pd.read_csv(args.data, comment="#")
        missing = [c for c in z_names if c not in frame.columns]
        if missing:
            raise DataError(f"query file lacks modifier columns {missing}")
        zq = frame[z_names].to_numpy(dtype=np.float64)
        swept = None
    else:
        if args.modifier in z_names:
            r = z_names.index(args.modifier)
        else:
            try:
                r = int(args.modifier) - 1
            except ValueError:
                raise ConfigError(f"unknown modifier {args.modifier!r}")
            if not 0 <= r < R:
                raise ConfigError(f"modifier index must be 1..{R}")
        grid = np.linspace(z_min[r], z_max[r], args.grid_size)
        zq = np.tile((z_min + z_max) / 2.0, (args.grid_size, 1))
        zq[:, r] = grid
        swept = r

    rows = []
    for j in range(int(meta["p"]) + 1):
        summ = beta_summary(draws, j, zq, level=args.level)
        for i in range(zq.shape[0]):
            row = {"coefficient": j, "mean": summ.mean[i],
                   "lower": summ.lower[i], "upper": summ.upper[i]}
            if swept is not None:
                row["modifier"] = z_names[swept]
                row["z_value"] = zq[i, swept]
            else:
                row["row"] = i
            rows.append(row)
    _write_csv(pd.DataFrame(rows), args.out, meta["config_hash"])
    print(f"summarized {int(meta['p']) + 1} coefficients at {zq.shape[0]} "
          f"points -> {args.out}")
    return 0


def cmd_select(args) -> int:
    draws = load_draws(args.archive)
    meta = draws.meta
    probs = selection_probability_matrix(draws)
    z_names = list(meta["z_names"])
    rows = []
    for j in range(probs.shape[0]):
        mpm = median_probability_model(probs[j])
        for r in range(probs.shape[1]):
            rows.append({"coefficient": j, "modifier": z_names[r],
                         "probability": probs[j, r], "in_mpm": r in mpm})
    _write_csv(pd.DataFrame(rows), args.out, meta["config_hash"])
    print(f"selection table -> {args.out}")
    return 0


def cmd_cv_rho(args) -> int:
    data = _ingest(args)
    hyper = _resolve_hyper(args, data.n_covariates, data.n_modifiers)
    grid = [float(v) for v in args.grid.split(",")]
    best, frame = cv_rho(data, grid, n_folds=args.folds, hyper=hyper,
                         rng=np.random.default_rng(hyper.seed))
    cfg = config_hash(hyper.to_dict())
    _write_csv(frame, args.out, cfg)
    print(f"per-fold RMSE -> {args.out}")
    print(f"chosen rho: {best}")
    return 0


def cmd_benchmark(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hyper = None
    if any(getattr(args, k, None) is not None
           for k in _HYPER_KEYS + ("tau_scale", "jump_sd", "split_prior",
                                   "split_base", "split_power",
                                   "split_gamma", "config")):
        hyper = _resolve_hyper(args, 5, 20)

    def progress(info):
        print(f"replicate {info['replicate'] + 1}/{args.replicates}: "
              f"beta MSE {info['vcbart_beta_mse']:.3f} vs linear "
              f"{info['linear_beta_mse']:.3f} "
              f"({info['seconds']:.0f}s)", flush=True)

    seed = args.seed if args.seed is not None else 20_26
    result = benchmark_recovery(n_replicates=args.replicates, hyper=hyper,
                                seed=seed, progress=progress)
    write_results(result.results, out / "results.csv")
    write_manifest(result.manifest, out / "manifest.json")

    ours = result.pooled("vcbart", "beta_mse_pooled")
    theirs = result.pooled("linear", "beta_mse_pooled")
    cov = result.pooled("vcbart", "beta_coverage_pooled")
    pcov = result.pooled("vcbart", "predictive_coverage")
    print(f"beta MSE below linear in {(ours < theirs).sum()}/{len(ours)} "
          f"replicates")
    print(f"mean beta band coverage {cov.mean():.3f}; "
          f"mean predictive coverage {pcov.mean():.3f}")
    print(f"results -> {out}")
    return 0


# ----------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcbart",
        description="Varying-coefficient regression with tree ensembles")
    parser.add_argument("--version", action="version",
                        version=f"vcbart {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate the synthetic benchmark panel")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--n-i", type=int, default=4)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit the model and save a draw archive")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True,
                    help="archive path (.jsonl or .jsonl.gz)")
    _add_data_flags(sp)
    _add_hyper_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="predictive means and intervals")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--data", required=True, help="CSV of query rows")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["marginal", "conditional"],
                    default="marginal")
    sp.add_argument("--history",
                    help="comma-separated residual history (conditional mode)")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--x-cols")
    sp.add_argument("--z-cols")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("summarize",
                        help="coefficient surfaces with credible bands")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", help="CSV of modifier rows (default: sweep a grid)")
    sp.add_argument("--modifier", default="z1",
                    help="modifier to sweep (name or 1-based index)")
    sp.add_argument("--grid-size", type=int, default=101)
    sp.add_argument("--level", type=float, default=0.95)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("select", help="modifier selection probabilities")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("cv-rho", help="choose rho by cross-validation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--grid", default="0,0.25,0.5,0.75,0.9")
    sp.add_argument("--folds", type=int, default=5)
    _add_data_flags(sp)
    _add_hyper_flags(sp)
    sp.set_defaults(func=cmd_cv_rho)

    sp = sub.add_parser("benchmark",
                        help="replicated train/test recovery benchmark")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--replicates", type=int, default=25)
    _add_hyper_flags(sp)  # --seed here doubles as the protocol seed
    sp.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:   # ArchiveError included
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
