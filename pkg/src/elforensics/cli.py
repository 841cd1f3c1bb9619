"""``elforensics`` command-line entry point.

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, report
from .digits import benford2_law, benford_test
from .estimate import default_beta_grid, fraud_estimate, scenario_table
from .ingest import load_dataset, write_tallies
from .model import ForensicsError
from .synth import GeneratorConfig, generate
from .zeta import verdict, zeta_series
from .zscore import normal_plot_data, z_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("elforensics")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


GLOBAL_DEFAULTS = {"json": None, "csv_dir": None, "svg_dir": None, "seed": None, "threads": 1}


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--json", metavar="PATH", default=argparse.SUPPRESS, help="write the JSON report here ('-' for stdout)")
    g.add_argument("--csv-dir", metavar="DIR", default=argparse.SUPPRESS, help="write plot-data CSVs into DIR")
    g.add_argument("--svg-dir", metavar="DIR", default=argparse.SUPPRESS, help="render SVG figures into DIR")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for the generator and resampling")
    g.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS, help="worker threads")
    return p


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _kmax(s: str):
    return None if s == "auto" else int(s)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _input_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("input options")
    g.add_argument("--schema", metavar="JSON", help="column remapping as a JSON object or a path to one")
    g.add_argument("--delimiter", default=",", help="field delimiter, or 'auto' to sniff")
    m = g.add_mutually_exclusive_group()
    m.add_argument("--exclude-manual", dest="exclude_manual", action="store_true", default=None,
                   help="drop centers with manually counted stations")
    m.add_argument("--keep-manual", dest="exclude_manual", action="store_false",
                   help="keep centers with manually counted stations")
    return p


def _analysis_flags(zeta=True, estimate=False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("analysis options")
    g.add_argument("--threshold", type=float, default=3.9, help="|Z| cutoff defining the outliers")
    if zeta:
        g.add_argument("--kmin", type=int, default=100)
        g.add_argument("--kmax", type=_kmax, default=None, help="largest k, or 'auto' for K//2")
        g.add_argument("--scaling", choices=("population-mean", "sample-mean"), default="population-mean")
        g.add_argument("--run-threshold", type=_positive_int, default=50,
                       help="consecutive k outside the 0.9999 band needed to reject")
    if estimate:
        g.add_argument("--beta-grid", type=_floats, default=None, help="comma-separated beta values")
        g.add_argument("--scenarios", metavar="FILE", help="JSON list of scenario beta ranges")
        g.add_argument("--resamples", type=int, default=0, help="bootstrap replicates for epsilon (extension)")
    return p


def build_parser() -> argparse.ArgumentParser:
    glob, inp = _global_flags(), _input_flags()
    parser = _Parser(prog="elforensics", description="Statistical screening of polling-station tallies.",
                     parents=[glob])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[glob, inp], help="parse and clean a tally file, print the cleaning audit")
    p.add_argument("tallies")

    p = sub.add_parser("benford", parents=[glob, inp], help="second-digit test on registered - valid")
    p.add_argument("tallies")
    p.add_argument("--plot-data", metavar="CSV")

    p = sub.add_parser("zscore", parents=[glob, inp, _analysis_flags(zeta=False)], help="within-center Z-scores")
    p.add_argument("tallies")
    p.add_argument("--qq", metavar="CSV")

    p = sub.add_parser("zeta", parents=[glob, inp, _analysis_flags()], help="ordered-outlier ratio test and verdict")
    p.add_argument("tallies")
    p.add_argument("--series", metavar="CSV")

    p = sub.add_parser("estimate", parents=[glob, inp, _analysis_flags(zeta=False, estimate=True)],
                       help="counterfactual favorable ratio over a beta grid")
    p.add_argument("tallies")

    p = sub.add_parser("synth", parents=[glob], help="generate a synthetic election with ground truth")
    p.add_argument("--config", metavar="JSON", help="generator config (defaults are packaged)")
    p.add_argument("--out", required=True, metavar="CSV")
    p.add_argument("--truth", metavar="JSON")

    p = sub.add_parser("pipeline", parents=[glob, inp, _analysis_flags(estimate=True)],
                       help="run every stage and write the dossier")
    p.add_argument("tallies", nargs="+")
    p.add_argument("--config", metavar="JSON", help="pipeline options file; flags given on the command line win")
    p.add_argument("--force", action="store_true", help="estimate even when the bias test does not reject")

    p = sub.add_parser("compare", parents=[glob], help="re-test several dossiers on a common k range")
    p.add_argument("dossiers", nargs="+")
    p.add_argument("--kmin", type=int, default=100)
    p.add_argument("--run-threshold", type=_positive_int, default=None)
    return parser


def _opt(args, name):
    return getattr(args, name, GLOBAL_DEFAULTS.get(name))


def _schema(value):
    if not value:
        return {}
    text = Path(value).read_text(encoding="utf-8") if os.path.exists(value) else value
    try:
        mapping = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--schema is neither a JSON object nor a readable file: {exc}") from None
    if not isinstance(mapping, dict):
        raise UsageError("--schema must be a JSON object")
    return mapping


def _load(args):
    return load_dataset(args.tallies, _schema(args.schema), args.delimiter, args.exclude_manual)


def _emit(args, payload, text_lines) -> None:
    dest = _opt(args, "json")
    if dest == "-":
        sys.stdout.write(report.dumps(payload))
        return
    if dest:
        report.write_json(payload, dest)
    for line in text_lines:
        print(line)


def _stem(path) -> str:
    return Path(path).stem


def cmd_ingest(args) -> int:
    ds = _load(args)
    c = ds.cleaning.to_dict()
    _emit(args, {"election_id": ds.election_id, "cleaning": c},
          [f"{ds.election_id}: {c['retained_station_count']} stations in {c['retained_center_count']} centers kept, "
           f"{c['excluded_station_count']} stations excluded"])
    return EXIT_OK


def cmd_benford(args) -> int:
    ds = _load(args)
    rep = benford_test(ds)
    rows = list(zip(range(10), rep.observed_freq.tolist(), benford2_law().tolist()))
    csv_dir = _opt(args, "csv_dir")
    paths = []
    if args.plot_data:
        paths.append(report.write_benford_csv(args.plot_data, rows))
    if csv_dir or _opt(args, "svg_dir"):
        res = report.PipelineResult({"election_id": ds.election_id}, ds, {"benford": rows})
        report.emit_artifacts(res, _stem(args.tallies), csv_dir, _opt(args, "svg_dir"))
    p = "n/a (too few stations)" if rep.insufficient else f"{rep.p_value:.4g}"
    _emit(args, {"election_id": ds.election_id, "cleaning": ds.cleaning.to_dict(), "benford": rep.to_dict()},
          [f"chi2 = {rep.chi2:.3f} (df 9), p = {p}, n = {rep.n_used}"])
    return EXIT_OK


def cmd_zscore(args) -> int:
    ds = _load(args)
    table = z_table(ds, args.threshold, threads=_opt(args, "threads"))
    qq = normal_plot_data(table)
    if args.qq:
        report.write_qq_csv(args.qq, qq)
    if _opt(args, "csv_dir") or _opt(args, "svg_dir"):
        res = report.PipelineResult({"election_id": ds.election_id}, ds, {"qq": qq})
        report.emit_artifacts(res, _stem(args.tallies), _opt(args, "csv_dir"), _opt(args, "svg_dir"))
    s = table.summary()
    _emit(args, {"election_id": ds.election_id, "cleaning": ds.cleaning.to_dict(), "zscore": s},
          [f"K = {s['K']}, kappa = {s['kappa']} (expected {s['expected_kappa']:.2f}), "
           f"mean Z = {s['mean_z']:.4f}, var Z = {s['var_z']:.4f}"])
    return EXIT_OK


def cmd_zeta(args) -> int:
    ds = _load(args)
    table = z_table(ds, args.threshold, threads=_opt(args, "threads"))
    series = zeta_series(ds, table, args.kmin, args.kmax, args.scaling)
    v = verdict(series, args.run_threshold)
    if args.series:
        report.write_series_csv(args.series, series)
    if _opt(args, "csv_dir") or _opt(args, "svg_dir"):
        res = report.PipelineResult({"election_id": ds.election_id}, ds, {"zeta": series})
        report.emit_artifacts(res, _stem(args.tallies), _opt(args, "csv_dir"), _opt(args, "svg_dir"))
    payload = {
        "election_id": ds.election_id,
        "cleaning": ds.cleaning.to_dict(),
        "zeta": {**series.summary(), "series": report.series_to_dict(series)},
        "verdict": v.to_dict(),
    }
    _emit(args, payload, [f"{v.group}: {v.rationale}"])
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds = _load(args)
    table = z_table(ds, args.threshold, threads=_opt(args, "threads"))
    est = fraud_estimate(ds, table, args.beta_grid or default_beta_grid(), None,
                         args.resamples, _opt(args, "seed") or 0)
    scen = report.load_scenarios(args.scenarios) if args.scenarios else report.PipelineOptions().scenarios
    rows = scenario_table(est, scen)
    payload = {"election_id": ds.election_id, "cleaning": ds.cleaning.to_dict(),
               "estimate": {**est.to_dict(), "scenarios": [r.to_dict() for r in rows]}}
    lines = [f"R = {est.R:.4f}, r_kappa = {est.r_kappa:.4f}, epsilon_hat = {est.epsilon_hat:.4f}"]
    lines += [f"  {r.label}: rho in [{min(r.rho_low, r.rho_high):.4f}, {max(r.rho_low, r.rho_high):.4f}] -> {r.verdict}"
              for r in rows]
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_synth(args) -> int:
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    if _opt(args, "seed") is not None:
        overrides["seed"] = _opt(args, "seed")
    cfg = GeneratorConfig.from_dict(overrides)
    ds, truth = generate(cfg)
    write_tallies(args.out, ds.election_id, ds.stations)
    if args.truth:
        report.write_json(truth.to_dict(), args.truth)
    _emit(args, {"config": cfg.to_dict(), "K": truth.K, "rho_true": truth.rho_true,
                 "realized_beta": truth.realized_beta},
          [f"{ds.election_id}: K = {truth.K}, rho_true = {truth.rho_true:.4f}, realized beta = {truth.realized_beta:.4f}"])
    return EXIT_OK


def _pipeline_options(args) -> report.PipelineOptions:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    flags = {
        "threshold": args.threshold,
        "k_min": args.kmin,
        "k_max": args.kmax,
        "scaling": args.scaling,
        "run_threshold": args.run_threshold,
        "beta_grid": args.beta_grid,
        "force_estimate": args.force,
        "resamples": args.resamples,
        "threads": _opt(args, "threads"),
        "exclude_manual": args.exclude_manual,
        "schema": _schema(args.schema),
        "delimiter": args.delimiter,
    }
    defaults = report.PipelineOptions()
    # a config value survives unless the flag was moved off its default
    merged = {**base, **{k: v for k, v in flags.items() if k not in base or v != getattr(defaults, k)}}
    if _opt(args, "seed") is not None:
        merged["seed"] = _opt(args, "seed")
    if args.scenarios:
        merged["scenarios"] = [list(s) for s in report.load_scenarios(args.scenarios)]
    try:
        return report.PipelineOptions.from_config(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad pipeline options: {exc}") from None


def cmd_pipeline(args) -> int:
    opts = _pipeline_options(args)
    results = report.run_many(args.tallies, opts)
    stems = [_stem(p) for p in args.tallies]
    if len(set(stems)) != len(stems):
        stems = [f"{i:02d}_{s}" for i, s in enumerate(stems)]
    for res, stem in zip(results, stems):
        arts = report.emit_artifacts(res, stem, _opt(args, "csv_dir"), _opt(args, "svg_dir"))
        if arts:
            log.info("wrote %s", ", ".join(sorted(arts.values())))
    dossiers = [r.dossier for r in results]
    payload = dossiers[0] if len(dossiers) == 1 else dossiers
    lines = []
    for d in dossiers:
        lines.append(f"== {d['source']} ({d['election_id']})")
        lines += [f"  {line}" for line in d["summary"]["lines"]]
    _emit(args, payload, lines)
    return EXIT_OK if all(r.ok for r in results) else EXIT_DATA


def _read_dossiers(paths) -> list[dict]:
    out = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            d = json.load(fh)
        out.extend(d if isinstance(d, list) else [d])
    return out


def cmd_compare(args) -> int:
    dossiers = _read_dossiers(args.dossiers)
    if len(dossiers) < 2:
        raise UsageError("compare needs at least two dossiers")
    comp = report.compare(dossiers, args.kmin, args.run_threshold)
    csv_dir, svg_dir = _opt(args, "csv_dir"), _opt(args, "svg_dir")
    if csv_dir or svg_dir:
        csvs = {}
        for i, (label, s) in enumerate(comp["_series"].items()):
            csvs[label] = report.write_series_csv(os.path.join(csv_dir or svg_dir, f"compare_{i:02d}_zeta.csv"), s)
        if svg_dir:
            from . import plotting

            plotting.zeta_figure(csvs, os.path.join(svg_dir, "compare_fig3_zeta.svg"))
            plotting.pvalue_figure(csvs, os.path.join(svg_dir, "compare_fig4_pvalues.svg"))
    payload = report.comparison_json(comp)
    lines = [f"common range {comp['k_min']} <= k <= {comp['k_max']}"]
    for group, members in payload["groups"].items():
        lines.append(f"{group}: {', '.join(members)}")
    _emit(args, payload, lines)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "benford": cmd_benford,
    "zscore": cmd_zscore,
    "zeta": cmd_zeta,
    "estimate": cmd_estimate,
    "synth": cmd_synth,
    "pipeline": cmd_pipeline,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"elforensics: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"elforensics: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ForensicsError, OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"elforensics: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"elforensics: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
