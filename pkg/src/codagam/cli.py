"""Command-line front end: simulate | fit | predict | compare | classify.

Exit codes: 0 success, 2 user/configuration error, 3 I/O failure,
4 numerical or sampling failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import (
    AllDivergent,
    CodagamError,
    ConfigError,
    InitializationFailure,
    InvalidCovariance,
    NonFiniteParameter,
)
from .evaluation import compare_r2, waic, R2Draws, MODEL_BASED, RESIDUAL_BASED
from .fitting import fit, predict
from .hmc import PosteriorDraws
from .model import Dataset, build_design
from .runconfig import load_config
from .simulate import (
    GamSimConfig,
    LinearSimConfig,
    simulate_gam,
    simulate_linear,
    simulate_soil_like,
)
from .usda import classify_usda

_EXIT_USER = 2
_EXIT_IO = 3
_EXIT_NUMERIC = 4

_FLOAT_FORMAT = "%.12g"


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT)


def load_dataset(path: Path, composition_cols: list[str], kappa: str = "auto") -> Dataset:
    """Read a dataset CSV, auto-detecting proportion vs percent closure."""
    frame = pd.read_csv(path)
    missing = [c for c in composition_cols if c not in frame.columns]
    if missing:
        raise ConfigError(f"dataset lacks composition columns {missing}")
    sums = frame[composition_cols].to_numpy(dtype=float).sum(axis=1)
    if kappa == "auto":
        median = float(np.median(sums))
        if abs(median - 1.0) < 0.05:
            value = 1.0
        elif abs(median - 100.0) < 5.0:
            value = 100.0
        else:
            raise ConfigError(
                f"composition rows sum to ~{median:.3g}; expected ~1 or ~100 "
                "(set kappa explicitly)"
            )
    else:
        value = float(kappa)
    return Dataset(frame, composition_cols, kappa=value)


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.design == "linear":
        data, truth = simulate_linear(LinearSimConfig(n=args.n, seed=args.seed))
    elif args.design == "gam":
        data, truth = simulate_gam(GamSimConfig(n=args.n, seed=args.seed))
    else:
        data, truth = simulate_soil_like(args.n, seed=args.seed)
    dataset_path = out_dir / f"{args.design}_data.csv"
    truth_path = out_dir / f"{args.design}_truth.json"
    _write_csv(data.frame, dataset_path)
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    print(f"wrote {dataset_path}")
    print(f"wrote {truth_path}")
    return 0


def cmd_fit(args) -> int:
    config = load_config(args.config)
    data = load_dataset(config.dataset_path, config.composition_cols, config.kappa)
    spec = config.model_spec(dimension=len(config.composition_cols))
    result = fit(data, spec, config.sampler, label=Path(args.config).stem)

    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(result.draws.to_frame(), out_dir / "draws.csv")
    _write_csv(result.summary(), out_dir / "summary.csv")
    _write_csv(result.fixed_effect_report(), out_dir / "effects.csv")
    _write_csv(
        pd.DataFrame(result.pointwise_loglik), out_dir / "pointwise_loglik.csv"
    )
    _write_csv(
        pd.DataFrame(
            {"br_coda_r2": result.br_r2.values, "bm_coda_r2": result.bm_r2.values}
        ),
        out_dir / "r2_draws.csv",
    )
    convergence = result.convergence()
    if convergence is not None:
        _write_csv(convergence, out_dir / "diagnostics.csv")
        worst = convergence["rhat"].max()
        if np.isfinite(worst) and worst > 1.01:
            print(
                f"warning: max split-Rhat {worst:.3f} exceeds 1.01; "
                "inspect diagnostics.csv",
                file=sys.stderr,
            )
    meta = {
        "version": __version__,
        "config_path": str(Path(args.config).resolve()),
        "dataset": str(config.dataset_path),
        "composition": config.composition_cols,
        "kappa": data.kappa,
        "terms": config.terms_text,
        "seed": config.sampler.seed,
        "chains": config.sampler.chains,
        "warmup": config.sampler.warmup_iterations,
        "samples": config.sampler.sampling_iterations,
        "waic": result.waic,
        "lppd": result.lppd,
        "p_waic": result.p_waic,
        "n_divergent": int(result.draws.divergent.sum()),
        "br_coda_r2": result.br_r2.summary(),
        "bm_coda_r2": result.bm_r2.summary(),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out_dir / "config.ini").write_text(config.canonical_text())
    print(f"wrote fit artifacts to {out_dir}")
    print(
        f"WAIC {result.waic:.3f}  BR-CoDa-R2 {result.br_r2.values.mean():.3f}  "
        f"BM-CoDa-R2 {result.bm_r2.values.mean():.3f}"
    )
    return 0


def _reload_fit(fit_dir: Path):
    """Rebuild the design bundle and reload draws from a fit directory."""
    meta_path = fit_dir / "meta.json"
    if not meta_path.exists():
        raise ConfigError(f"{fit_dir} is not a fit directory (no meta.json)")
    meta = json.loads(meta_path.read_text())
    config = load_config(fit_dir / "config.ini")
    data = load_dataset(
        Path(meta["dataset"]), meta["composition"], str(meta.get("kappa", "auto"))
    )
    spec = config.model_spec(dimension=len(meta["composition"]))
    bundle = build_design(data, spec)
    frame = pd.read_csv(fit_dir / "draws.csv")
    names = list(bundle.layout.names)
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise ConfigError(f"draws.csv lacks parameter columns {missing[:4]}...")
    constrained = frame[names].to_numpy(dtype=float)
    draws = PosteriorDraws(
        draws=constrained,
        names=tuple(names),
        logp=frame["lp__"].to_numpy(dtype=float),
        divergent=frame["divergent__"].to_numpy(dtype=bool),
        chain=frame["chain__"].to_numpy(dtype=int) - 1,
        unconstrained=_unconstrain(bundle, constrained),
        layout=bundle.layout,
    )
    return meta, bundle, draws


def _unconstrain(bundle, constrained: np.ndarray) -> np.ndarray:
    """Invert the constraining map for reloaded draws."""
    lay = bundle.layout
    out = constrained.copy()
    for d in range(lay.n_coords):
        scales = constrained[:, lay.scale_slice(d)]
        out[:, lay.scale_slice(d)] = np.log(scales)
        if lay.n_random:
            prec = (scales**-2) @ bundle.load_matrix
            out[:, lay.raw_slice(d)] = constrained[:, lay.raw_slice(d)] * prec**0.5
    out[:, lay.sigma_slice] = np.log(constrained[:, lay.sigma_slice])
    if lay.n_corr:
        q = lay.n_coords
        iu = np.triu_indices(q, k=1)
        for s in range(constrained.shape[0]):
            corr = np.eye(q)
            corr[iu] = constrained[s, lay.corr_slice]
            corr = corr + np.triu(corr, k=1).T
            chol = np.linalg.cholesky(corr)
            z = []
            for r in range(1, q):
                acc = 1.0
                for j in range(r):
                    x = chol[r, j] / np.sqrt(acc)
                    z.append(np.arctanh(np.clip(x, -1 + 1e-12, 1 - 1e-12)))
                    acc *= 1.0 - x * x
            out[s, lay.corr_slice] = z
    return out


def cmd_predict(args) -> int:
    fit_dir = Path(args.fit)
    meta, bundle, draws = _reload_fit(fit_dir)
    grid = pd.read_csv(args.grid)
    table = predict(
        bundle,
        draws,
        grid,
        seed=args.seed,
        max_draws=args.draws,
        include_noise=not args.no_noise,
        kappa=meta.get("kappa", 1.0),
    )
    result = pd.concat([grid.reset_index(drop=True), table], axis=1)
    out_path = Path(args.out)
    _write_csv(result, out_path)
    n_extra = int(table["extrapolated"].sum())
    print(f"wrote {len(result)} predictions to {out_path} ({n_extra} extrapolated)")
    return 0


def cmd_compare(args) -> int:
    rows = []
    r2 = {}
    for tag, path in (("a", args.fit_a), ("b", args.fit_b)):
        fit_dir = Path(path)
        meta_path = fit_dir / "meta.json"
        if not meta_path.exists():
            raise ConfigError(f"{fit_dir} is not a fit directory (no meta.json)")
        meta = json.loads(meta_path.read_text())
        pointwise = pd.read_csv(fit_dir / "pointwise_loglik.csv").to_numpy(dtype=float)
        waic_value, lppd, p_waic = waic(pointwise)
        r2_frame = pd.read_csv(fit_dir / "r2_draws.csv")
        r2[tag] = {
            "br": R2Draws(
                r2_frame["br_coda_r2"].to_numpy(), RESIDUAL_BASED, fit_dir.name
            ),
            "bm": R2Draws(
                r2_frame["bm_coda_r2"].to_numpy(), MODEL_BASED, fit_dir.name
            ),
        }
        rows.append(
            {
                "model": fit_dir.name,
                "waic": waic_value,
                "lppd": lppd,
                "p_waic": p_waic,
                "br_coda_r2_mean": float(r2[tag]["br"].values.mean()),
                "bm_coda_r2_mean": float(r2[tag]["bm"].values.mean()),
            }
        )
    table = pd.DataFrame(rows)
    br_cmp = compare_r2(r2["a"]["br"], r2["b"]["br"], alpha=args.alpha)
    bm_cmp = compare_r2(r2["a"]["bm"], r2["b"]["bm"], alpha=args.alpha)
    report = {
        "models": rows,
        "waic_difference_a_minus_b": rows[0]["waic"] - rows[1]["waic"],
        "br_comparison": br_cmp.as_dict(),
        "bm_comparison": bm_cmp.as_dict(),
    }
    print(table.to_string(index=False))
    print(
        f"P(R2_a >= R2_b): BR {br_cmp.probability:.3f} ({br_cmp.verdict}), "
        f"BM {bm_cmp.probability:.3f} ({bm_cmp.verdict})"
    )
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_classify(args) -> int:
    if args.input:
        frame = pd.read_csv(args.input)
        for column in ("sand", "silt", "clay"):
            if column not in frame.columns:
                raise ConfigError(f"classification input needs a {column!r} column")
        shares = frame[["sand", "silt", "clay"]].to_numpy(dtype=float)
        percents = 100.0 * shares / shares.sum(axis=1, keepdims=True)
        frame["usda_class"] = [classify_usda(*row) for row in percents]
        out_path = Path(args.out or "classified.csv")
        _write_csv(frame, out_path)
        print(f"wrote {out_path}")
    else:
        label = classify_usda(args.sand, args.silt, args.clay)
        print(label)
    return 0


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codagam",
        description="Bayesian additive regression for compositional data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--design", choices=("linear", "gam", "soil"), required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--out", default=".", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fit_p = sub.add_parser("fit", help="fit a model described by a config file")
    fit_p.add_argument("--config", required=True)
    fit_p.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="posterior predictions on a grid CSV")
    pred.add_argument("--fit", required=True, help="fit output directory")
    pred.add_argument("--grid", required=True, help="grid CSV with covariates")
    pred.add_argument("--out", required=True, help="output CSV path")
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--draws", type=int, default=1000,
                      help="max posterior draws used")
    pred.add_argument("--no-noise", action="store_true",
                      help="predict the mean surface without residual noise")
    pred.set_defaults(func=cmd_predict)

    cmp_p = sub.add_parser("compare", help="compare two fitted models")
    cmp_p.add_argument("--fit-a", required=True)
    cmp_p.add_argument("--fit-b", required=True)
    cmp_p.add_argument("--alpha", type=float, default=0.1)
    cmp_p.add_argument("--out", help="JSON report path")
    cmp_p.set_defaults(func=cmd_compare)

    cls = sub.add_parser("classify", help="USDA texture class of percentages")
    cls.add_argument("--sand", type=float)
    cls.add_argument("--silt", type=float)
    cls.add_argument("--clay", type=float)
    cls.add_argument("--input", help="CSV with sand/silt/clay columns")
    cls.add_argument("--out", help="output CSV path (with --input)")
    cls.set_defaults(func=cmd_classify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "classify" and not args.input:
        if args.sand is None or args.silt is None or args.clay is None:
            parser.error("classify needs --sand/--silt/--clay or --input")
    try:
        return args.func(args)
    except (InitializationFailure, AllDivergent, NonFiniteParameter,
            InvalidCovariance, np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_NUMERIC
    except CodagamError as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_USER
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
