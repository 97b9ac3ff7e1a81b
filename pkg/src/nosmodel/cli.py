"""Command line entry points.

    nosmodel preprocess --config run.yaml
    nosmodel fit --config run.yaml
    nosmodel simulate --design design.yaml --output sims --replicates 20
    nosmodel summarize --draws out/draws --output out
    nosmodel check

Exit status is 0 on success, 1 on invalid input or a failed self-check and
2 when a fit finishes but misses the convergence requirements.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from ._version import __version__
from .config import ConfigError, RunConfig
from .domain import IngestionError, check_observations
from .estimator import NOSEstimator
from .inference.diagnostics import diagnostics
from .inference.draws import PosteriorDraws
from .inference.sampling import MAX_DIVERGENCE_RATE
from .inference.summary import summarize, summarize_indicator
from .io import _jsonable, header_lines, read_csv, read_observations, write_csv, write_json
from .preprocess import classify_possible_outliers
from .sim import SimDesign, simulate_dataset

logger = logging.getLogger("nosmodel")

MAX_RHAT = 1.05
EXIT_OK, EXIT_ERROR, EXIT_QUALITY = 0, 1, 2


def _load_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    paths = {}
    for key in ("data", "output", "classification"):
        value = getattr(args, key, None)
        if value is not None:
            paths[key] = str(value)
    sampler = {}
    if getattr(args, "seed", None) is not None:
        sampler["seed"] = args.seed
    return config.with_overrides(paths=paths, sampler=sampler)


def _require_data(config):
    if not config.paths.data:
        raise ConfigError("no data file: set paths.data in the config or pass --data")
    return read_observations(config.paths.data)


# -- preprocess -------------------------------------------------------------------


def cmd_preprocess(config):
    """Classify observations; writes ``classification.csv`` and ``reference_sources.log``."""
    raw = _require_data(config)
    df = check_observations(raw)
    result = classify_possible_outliers(
        df,
        top_fraction=config.preprocess.top_fraction,
        bandwidth=config.preprocess.bandwidth,
        overrides=tuple(config.preprocess.overrides),
    )
    out = Path(config.paths.output)
    table = result.table.sort_values("id", kind="stable").reset_index(drop=True)
    write_csv(table, out / "classification.csv", "classification", config.sha256())
    lines = header_lines("reference_sources", config.sha256())
    for key in sorted(result.reference_source, key=str):
        ref = result.reference_source[key]
        label = key if isinstance(key, str) else "/".join(map(str, key))
        if ref is None:
            lines.append(f"{label}: no reference source, all observations possibly outlying")
        else:
            lines.append(f"{label}: reference source {ref}")
    (out / "reference_sources.log").write_text("\n".join(lines) + "\n")
    n_flag = int(table["possibly_outlying"].sum())
    logger.info("classified %d observations, %d possibly outlying", len(table), n_flag)
    return EXIT_OK


# -- fit ----------------------------------------------------------------------------


def _with_classification(raw, config):
    if not config.paths.classification:
        return raw
    table, _ = read_csv(config.paths.classification)
    if not {"id", "possibly_outlying"} <= set(table.columns):
        raise ConfigError("classification file needs 'id' and 'possibly_outlying' columns")
    flags = table.set_index("id")["possibly_outlying"]
    missing = sorted(set(raw["id"]) - set(flags.index))
    if missing:
        raise ConfigError(f"classification file lacks observation ids {missing[:5]}")
    out = raw.drop(columns=["possibly_outlying"], errors="ignore").copy()
    out["possibly_outlying"] = flags.loc[out["id"]].to_numpy()
    return out


def quality_failures(draws, diag):
    """Reasons a fit misses the convergence requirements (empty if none)."""
    reasons = []
    checked = diag[~diag["degenerate"]]
    bad = checked[checked["rhat"] > MAX_RHAT]
    if len(bad):
        worst = bad.sort_values("rhat").iloc[-1]
        reasons.append(f"{len(bad)} parameters with R-hat > {MAX_RHAT} (worst {worst['parameter']} {worst['rhat']:.3f})")
    rate = float(draws.stats["divergent"].mean())
    if rate > MAX_DIVERGENCE_RATE:
        reasons.append(f"divergence rate {rate:.3f} > {MAX_DIVERGENCE_RATE}")
    return reasons


def write_fit_outputs(estimator, out, config_hash):
    """Draws, summaries and diagnostics of a fitted estimator; returns diagnostics."""
    out = Path(out)
    draws = estimator.draws_
    draws.metadata["config_sha256"] = config_hash
    draws.to_csv(out / "draws", header="\n".join(header_lines("draws", config_hash)) + "\n")
    write_csv(summarize(draws), out / "summary.csv", "parameter_summary", config_hash)
    write_csv(summarize_indicator(draws), out / "indicator_summary.csv", "indicator_summary", config_hash)
    write_csv(estimator.observation_summary(), out / "observations.csv", "observation_summary", config_hash)
    diag = diagnostics(draws)
    write_csv(diag, out / "diagnostics.csv", "diagnostics", config_hash)
    return diag


def cmd_fit(config):
    """Fit the model; writes draws, summaries and diagnostics under the output path."""
    raw = _with_classification(_require_data(config), config)
    est = NOSEstimator(**config.estimator_params())
    est.fit(raw)
    out = Path(config.paths.output)
    config_hash = config.sha256()
    diag = write_fit_outputs(est, out, config_hash)
    failures = quality_failures(est.draws_, diag)
    report = {
        "divergence_rate": float(est.draws_.stats["divergent"].mean()),
        "max_rhat": float(diag.loc[~diag["degenerate"], "rhat"].max()),
        "min_ess_bulk": float(diag.loc[~diag["degenerate"], "ess_bulk"].min()),
        "quality_failures": failures,
        "config": config.to_dict(),
    }
    write_json(report, out / "fit_report.json", "fit_report", config_hash)
    if failures:
        for reason in failures:
            logger.error("quality failure: %s", reason)
        return EXIT_QUALITY
    logger.info("fit converged: max R-hat %.3f, min bulk ESS %.0f", report["max_rhat"], report["min_ess_bulk"])
    return EXIT_OK


# -- simulate -------------------------------------------------------------------------


def load_design(path):
    if path is None:
        return SimDesign()
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError("design file must be a mapping of SimDesign fields")
    known = set(SimDesign.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown design keys: {unknown}")
    try:
        return SimDesign(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid design: {exc}") from exc


def cmd_simulate(design, output, replicates=1):
    """Write ``data_###.csv``, ``truth_###.csv`` and ``truth_###.json`` per replicate.

    Replicate ``r`` (from 0) uses seed ``design.seed + r``.
    """
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    out = Path(output)
    width = max(3, len(str(replicates)))
    design_hash = _design_hash(design)
    for r in range(replicates):
        d = SimDesign(**{**design.to_dict(), "seed": design.seed + r})
        sim = simulate_dataset(d)
        tag = f"{r + 1:0{width}d}"
        write_csv(sim.observations, out / f"data_{tag}.csv", "observations", design_hash, {"seed": d.seed})
        write_csv(sim.truth.to_frame(), out / f"truth_{tag}.csv", "truth", design_hash, {"seed": d.seed})
        params = asdict(sim.params)
        params["injected_ids"] = sim.injected_ids
        params["design"] = d.to_dict()
        write_json(params, out / f"truth_{tag}.json", "truth_parameters", design_hash)
    logger.info("wrote %d simulated data sets to %s", replicates, out)
    return EXIT_OK


def _design_hash(design):
    return hashlib.sha256(json.dumps(_jsonable(design.to_dict()), sort_keys=True).encode()).hexdigest()


# -- summarize --------------------------------------------------------------------------


def cmd_summarize(draws_dir, output, interval=0.90):
    """Recompute summaries and diagnostics from a stored draws directory."""
    draws = PosteriorDraws.from_csv(draws_dir)
    config_hash = str(draws.metadata.get("config_sha256", ""))
    out = Path(output)
    write_csv(summarize(draws), out / "summary.csv", "parameter_summary", config_hash)
    write_csv(summarize_indicator(draws, interval), out / "indicator_summary.csv", "indicator_summary", config_hash)
    diag = diagnostics(draws)
    write_csv(diag, out / "diagnostics.csv", "diagnostics", config_hash)
    return EXIT_OK


# -- check ----------------------------------------------------------------------------------


def cmd_check(quick=False, perturb_gradient=None, stream=None):
    """Run the oracle suite and print one line per check."""
    from .checks import run_checks

    stream = stream or sys.stdout
    perturb = None if perturb_gradient is None else (int(perturb_gradient), 1e-3)
    results = run_checks(perturb_gradient=perturb, quick=quick)
    for r in results:
        print(r.line(), file=stream)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=stream)
    return EXIT_ERROR if failed else EXIT_OK


# -- argument parsing ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="nosmodel", description="Survey data model fitting and checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--data", help="observation CSV (overrides paths.data)")
        p.add_argument("--output", help="output directory (overrides paths.output)")

    p = sub.add_parser("preprocess", help="classify possibly outlying observations")
    run_options(p)

    p = sub.add_parser("fit", help="sample the posterior and write summaries")
    run_options(p)
    p.add_argument("--classification", help="classification CSV from 'preprocess'")
    p.add_argument("--seed", type=int, help="sampler seed (overrides sampler.seed)")

    p = sub.add_parser("simulate", help="write simulated observation files")
    p.add_argument("--design", help="YAML file of simulation design fields")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, help="seed of the first replicate (overrides the design)")

    p = sub.add_parser("summarize", help="summaries and diagnostics from stored draws")
    p.add_argument("--draws", required=True, help="draws directory written by 'fit'")
    p.add_argument("--output", required=True)
    p.add_argument("--interval", type=float, default=0.90, help="central interval for the proportion")

    p = sub.add_parser("check", help="run the oracle self-checks")
    p.add_argument("--quick", action="store_true", help="fewer instances and points")
    p.add_argument("--perturb-gradient", type=int, metavar="INDEX", help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "preprocess":
            return cmd_preprocess(_load_config(args))
        if args.command == "fit":
            return cmd_fit(_load_config(args))
        if args.command == "simulate":
            design = load_design(args.design)
            if args.seed is not None:
                design = SimDesign(**{**design.to_dict(), "seed": args.seed})
            return cmd_simulate(design, args.output, args.replicates)
        if args.command == "summarize":
            return cmd_summarize(args.draws, args.output, args.interval)
        if args.command == "check":
            return cmd_check(args.quick, args.perturb_gradient)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
