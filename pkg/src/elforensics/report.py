"""End-to-end pipeline, forensic dossier and cross-election comparison.

A dossier is a plain JSON-native dict so that ``json.loads(json.dumps(d)) == d``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .digits import benford2_law, benford_test
from .estimate import DEAD_HEAT_BAND, DEFAULT_SCENARIOS, fraud_estimate, scenario_table
from .ingest import load_dataset
from .model import ElectionDataset, ForensicsError
from .zeta import (
    BAND_99,
    BAND_9999,
    BIASED,
    DEFAULT_K_MIN,
    DEFAULT_RUN_THRESHOLD,
    NO_EVIDENCE,
    IncompatibleRange,
    ZetaSeries,
    verdict,
    zeta_series,
)
from .zscore import DEFAULT_THRESHOLD, normal_plot_data, z_table

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineOptions:
    threshold: float = DEFAULT_THRESHOLD
    k_min: int = DEFAULT_K_MIN
    k_max: int | None = None
    scaling: str = "population-mean"
    run_threshold: int = DEFAULT_RUN_THRESHOLD
    dead_heat_band: tuple[float, float] = DEAD_HEAT_BAND
    beta_grid: tuple[float, ...] | None = None
    scenarios: tuple[tuple[str, float, float], ...] = DEFAULT_SCENARIOS
    force_estimate: bool = False
    resamples: int = 0
    seed: int = 0
    threads: int = 1
    exclude_manual: bool | None = None
    schema: Mapping[str, str] = field(default_factory=dict)
    delimiter: str = ","

    @classmethod
    def from_config(cls, config: Mapping) -> "PipelineOptions":
        cfg = dict(config)
        version = cfg.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        for key in ("dead_heat_band", "beta_grid"):
            if cfg.get(key) is not None:
                cfg[key] = tuple(cfg[key])
        if "scenarios" in cfg:
            cfg["scenarios"] = tuple(_scenario_tuple(s) for s in cfg["scenarios"])
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**cfg)

    def header(self) -> dict:
        return {
            "kappa_threshold": self.threshold,
            "band_9999": list(BAND_9999),
            "band_99": list(BAND_99),
            "run_threshold": self.run_threshold,
            "dead_heat_band": list(self.dead_heat_band),
            "k_min": self.k_min,
            "k_max": self.k_max,
            "scaling": self.scaling,
            "force_estimate": self.force_estimate,
            "resamples": self.resamples,
            "seed": self.seed,
        }


def _scenario_tuple(s) -> tuple[str, float, float]:
    if isinstance(s, Mapping):
        return (str(s["label"]), float(s["beta_low"]), float(s["beta_high"]))
    label, lo, hi = s
    return (str(label), float(lo), float(hi))


def load_scenarios(path) -> tuple[tuple[str, float, float], ...]:
    with open(path, encoding="utf-8") as fh:
        return tuple(_scenario_tuple(s) for s in json.load(fh))


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def series_to_dict(s: ZetaSeries) -> dict:
    return {
        "k": s.k.tolist(),
        "r_k": [float(x) for x in s.r_k],
        "S_k": [float(x) for x in s.S_k],
        "zeta_k": [_finite(x) for x in s.zeta],
        "p_value": [float(x) for x in s.p_value],
    }


def series_from_dossier(d: Mapping) -> ZetaSeries:
    z = d["zeta"]
    ser = z["series"]
    R = z["R"]
    r = np.array(ser["r_k"], dtype=float)
    zeta = np.array(
        [
            x if x is not None else (0.0 if rk == R else math.copysign(math.inf, rk - R))
            for x, rk in zip(ser["zeta_k"], ser["r_k"])
        ],
        dtype=float,
    )
    S = np.array(ser["S_k"], dtype=float)
    return ZetaSeries(
        k=np.array(ser["k"], dtype=np.int64),
        r_k=r,
        s_k=np.full(len(r), np.nan),
        S_k=S,
        zeta=zeta,
        p_value=np.array(ser["p_value"], dtype=float),
        zero_variance=S == 0.0,
        R=R,
        K=z["K"],
        scaling=z["scaling"],
    )


def _error(stage: str, exc: Exception) -> dict:
    return {"stage": stage, "type": type(exc).__name__, "message": str(exc)}


@dataclass
class PipelineResult:
    dossier: dict
    dataset: ElectionDataset | None = None
    plot_data: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.dossier["errors"]


def run_pipeline(source, opts: PipelineOptions | None = None, dataset: ElectionDataset | None = None) -> PipelineResult:
    """ingest -> benford -> zscore -> zeta -> verdict -> estimate.

    Each stage's failure is recorded under ``errors`` with its stage label and
    the stages that do not depend on it still run.  ``estimate`` only runs
    when the verdict rejects or ``force_estimate`` is set.
    """
    opts = opts or PipelineOptions()
    name = Path(source).name if source is not None else None
    dossier: dict = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "source": name,
        "election_id": None,
        "header": opts.header(),
        "stages": {},
        "errors": [],
    }
    result = PipelineResult(dossier)

    def stage(label, fn):
        try:
            out = fn()
        except ForensicsError as exc:
            dossier["stages"][label] = "failed"
            dossier["errors"].append(_error(label, exc))
            return None
        dossier["stages"][label] = "ok"
        return out

    ds = dataset if dataset is not None else stage(
        "ingest", lambda: load_dataset(source, opts.schema, opts.delimiter, opts.exclude_manual)
    )
    if dataset is not None:
        dossier["stages"]["ingest"] = "ok"
    if ds is None:
        dossier["summary"] = _summary(dossier)
        return result
    result.dataset = ds
    dossier["election_id"] = ds.election_id
    dossier["cleaning"] = ds.cleaning.to_dict()

    digits = stage("benford", lambda: benford_test(ds))
    if digits is not None:
        dossier["benford"] = digits.to_dict()
        result.plot_data["benford"] = list(zip(range(10), digits.observed_freq.tolist(), benford2_law().tolist()))

    table = stage("zscore", lambda: z_table(ds, opts.threshold, threads=opts.threads))
    if table is not None:
        dossier["zscore"] = table.summary()
        result.plot_data["qq"] = normal_plot_data(table)

        series = stage("zeta", lambda: zeta_series(ds, table, opts.k_min, opts.k_max, opts.scaling))
        if series is not None:
            dossier["zeta"] = {**series.summary(), "series": series_to_dict(series)}
            result.plot_data["zeta"] = series
            v = verdict(series, opts.run_threshold)
            dossier["verdict"] = v.to_dict()
            dossier["stages"]["verdict"] = "ok"
            if v.h1_rejected or opts.force_estimate:
                def run_estimate():
                    est = fraud_estimate(ds, table, opts.beta_grid, v, opts.resamples, opts.seed)
                    rows = scenario_table(est, opts.scenarios, opts.dead_heat_band)
                    return {**est.to_dict(), "h1_rejected": v.h1_rejected,
                            "scenarios": [r.to_dict() for r in rows]}

                est = stage("estimate", run_estimate)
                if est is not None:
                    dossier["estimate"] = est
            else:
                dossier["stages"]["estimate"] = "skipped"
    dossier["summary"] = _summary(dossier)
    return result


def _summary(d: dict) -> dict:
    lines = []
    group = d.get("verdict", {}).get("group")
    if "cleaning" in d:
        c = d["cleaning"]
        lines.append(f"{c['retained_station_count']} stations in {c['retained_center_count']} centers after cleaning")
    if "benford" in d:
        b = d["benford"]
        p = "n/a (too few stations)" if b["insufficient_data"] else f"{b['p_value']:.4g}"
        lines.append(f"second-digit test: chi2 p-value {p} over {b['n_used']} stations")
    if "zscore" in d:
        z = d["zscore"]
        lines.append(f"|Z| > {z['kappa_threshold']}: {z['kappa']} stations (expected {z['expected_kappa']:.2f})")
    if "verdict" in d:
        lines.append(f"outlier-bias test: {d['verdict']['rationale']}")
        lines.append(f"group: {group}")
    if "estimate" in d:
        e = d["estimate"]
        cross = e["crossover_beta"]
        lines.append(
            f"epsilon_hat = {e['epsilon_hat']:.4f}; rho_1 = {e['R'] - e['epsilon_hat']:.4f}; "
            + ("no beta in [0, 1] brings rho to 0.5" if cross is None else f"rho reaches 0.5 at beta = {cross:.3f}")
        )
    for err in d["errors"]:
        lines.append(f"[{err['stage']}] {err['type']}: {err['message']}")
    return {"verdict": group, "lines": lines}


def dumps(dossier) -> str:
    return json.dumps(dossier, indent=2, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def _write_rows(path, header, rows) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return str(path)


def write_benford_csv(path, rows) -> str:
    return _write_rows(path, ("digit", "observed_freq", "benford_freq"), rows)


def write_qq_csv(path, rows) -> str:
    return _write_rows(path, ("expected_quantile", "observed_z"), rows)


def write_series_csv(path, s: ZetaSeries) -> str:
    rows = zip(s.k.tolist(), s.r_k, s.S_k, s.zeta, s.p_value)
    return _write_rows(path, ("k", "r_k", "S_k", "zeta_k", "p_value"), rows)


def emit_artifacts(result: PipelineResult, stem: str, csv_dir=None, svg_dir=None) -> dict[str, str]:
    """Write plot-data CSVs and, if asked, the SVG figures drawn from them."""
    if csv_dir is None and svg_dir is None:
        return {}
    csv_dir = csv_dir or svg_dir
    out = {}
    pd = result.plot_data
    if "benford" in pd:
        out["benford_csv"] = write_benford_csv(os.path.join(csv_dir, f"{stem}_benford.csv"), pd["benford"])
    if "qq" in pd:
        out["qq_csv"] = write_qq_csv(os.path.join(csv_dir, f"{stem}_qq.csv"), pd["qq"])
    if "zeta" in pd:
        out["zeta_csv"] = write_series_csv(os.path.join(csv_dir, f"{stem}_zeta.csv"), pd["zeta"])
    if svg_dir is not None:
        from . import plotting

        label = result.dossier.get("election_id") or stem
        if "benford_csv" in out:
            out["benford_svg"] = plotting.benford_figure(out["benford_csv"], os.path.join(svg_dir, f"{stem}_fig1_benford.svg"), label)
        if "qq_csv" in out:
            out["qq_svg"] = plotting.qq_figure(out["qq_csv"], os.path.join(svg_dir, f"{stem}_fig2_qq.svg"), label)
        if "zeta_csv" in out:
            out["zeta_svg"] = plotting.zeta_figure({label: out["zeta_csv"]}, os.path.join(svg_dir, f"{stem}_fig3_zeta.svg"))
            out["pvalue_svg"] = plotting.pvalue_figure({label: out["zeta_csv"]}, os.path.join(svg_dir, f"{stem}_fig4_pvalues.svg"))
    return out


def run_many(sources: Sequence, opts: PipelineOptions | None = None) -> list[PipelineResult]:
    """Run the pipeline over several files, ``opts.threads`` at a time."""
    opts = opts or PipelineOptions()
    if opts.threads > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            return list(pool.map(lambda s: run_pipeline(s, opts), sources))
    return [run_pipeline(s, opts) for s in sources]


def compare(dossiers: Sequence[Mapping], k_min: int = DEFAULT_K_MIN, run_threshold: int | None = None) -> dict:
    """Re-evaluate every election on the common range ``[k_min, min(K // 2)]`` and group them."""
    if len(dossiers) < 2:
        raise ValueError("compare needs at least two dossiers")
    for d in dossiers:
        if "zeta" not in d:
            raise IncompatibleRange(f"dossier {d.get('election_id')!r} has no zeta series")
    k_max = min(d["zeta"]["K"] // 2 for d in dossiers)
    if k_max <= k_min:
        raise IncompatibleRange(f"common range empty: k_min={k_min}, k_max={k_max}")
    rows, series = [], {}
    groups: dict[str, list[str]] = {BIASED: [], NO_EVIDENCE: []}
    for i, d in enumerate(dossiers):
        label = d.get("election_id") or f"election-{i}"
        if label in series:
            label = f"{label}#{i}"
        s = series_from_dossier(d).restrict(k_min, k_max)
        rt = run_threshold or d["header"]["run_threshold"]
        v = verdict(s, rt)
        groups[v.group].append(label)
        series[label] = s
        rows.append({
            "election_id": label,
            "K": d["zeta"]["K"],
            "R": d["zeta"]["R"],
            "group": v.group,
            "longest_excursion": s.longest_excursion,
            "frac_outside_9999": s.frac_outside_9999,
            "frac_outside_99": s.frac_outside_99,
            "min_p_value": s.min_p_value,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "k_min": k_min,
        "k_max": k_max,
        "elections": rows,
        "groups": {g: members for g, members in groups.items() if members},
        "_series": series,
    }


def comparison_json(comp: Mapping) -> dict:
    return {k: v for k, v in comp.items() if not k.startswith("_")}
