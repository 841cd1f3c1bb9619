import json

import numpy as np
import pytest

from conftest import synthetic
from elforensics import report
from elforensics.ingest import write_tallies
from elforensics.zeta import BIASED, NO_EVIDENCE, IncompatibleRange


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("tallies")
    out = {}
    for name, inj in [("clean", {}), ("fraud", {"kind": "type_c", "target_fraction": 0.1, "shift_sd": 6.0})]:
        ds, _ = synthetic(seed=50, n_centers=700, **inj)
        p = d / f"{name}.csv"
        write_tallies(p, f"{name}-2012", ds.stations)
        out[name] = p
    return out


def test_clean_dossier(files):
    res = report.run_pipeline(files["clean"])
    d = res.dossier
    assert res.ok
    assert d["verdict"]["group"] == NO_EVIDENCE and d["summary"]["verdict"] == NO_EVIDENCE
    assert "estimate" not in d and d["stages"]["estimate"] == "skipped"
    assert d["header"]["kappa_threshold"] == 3.9 and d["header"]["band_99"] == [-2.58, 2.58]
    assert d["header"]["run_threshold"] == 50 and d["header"]["dead_heat_band"] == [0.49, 0.51]
    assert d["cleaning"]["retained_center_count"] == 700


def test_fraud_dossier(files):
    d = report.run_pipeline(files["fraud"]).dossier
    assert d["verdict"]["group"] == BIASED
    est = d["estimate"]
    assert est["epsilon_hat"] > 0 and "crossover_beta" in est and est["scenarios"]
    assert est["assumption"]


def test_force_estimate(files):
    d = report.run_pipeline(files["clean"], report.PipelineOptions(threshold=2.5, force_estimate=True)).dossier
    assert "estimate" in d and d["estimate"]["h1_rejected"] is False


def test_round_trip(files):
    for p in files.values():
        d = report.run_pipeline(p).dossier
        assert json.loads(report.dumps(d)) == d


def test_malformed_file_gives_stage_error(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("election_id,center_id\nx,1\n", encoding="utf-8")
    res = report.run_pipeline(p)
    assert not res.ok
    assert res.dossier["errors"][0]["stage"] == "ingest"
    assert res.dossier["errors"][0]["type"] == "MissingColumn"
    assert json.loads(report.dumps(res.dossier)) == res.dossier


def test_downstream_failure_keeps_partial_dossier(files):
    res = report.run_pipeline(files["clean"], report.PipelineOptions(k_min=10_000))
    d = res.dossier
    assert d["stages"]["zeta"] == "failed" and d["errors"][0]["stage"] == "zeta"
    assert "benford" in d and "zscore" in d and "verdict" not in d


def test_svg_toggle_does_not_change_numbers(files, tmp_path):
    a = report.run_pipeline(files["fraud"])
    b = report.run_pipeline(files["fraud"])
    arts = report.emit_artifacts(b, "fraud", tmp_path / "csv", tmp_path / "svg")
    assert report.dumps(a.dossier) == report.dumps(b.dossier)
    assert {"benford_svg", "qq_svg", "zeta_svg", "pvalue_svg"} <= set(arts)
    header = (tmp_path / "csv" / "fraud_zeta.csv").read_text().splitlines()[0]
    assert header == "k,r_k,S_k,zeta_k,p_value"
    assert (tmp_path / "csv" / "fraud_benford.csv").read_text().startswith("digit,observed_freq,benford_freq")
    assert (tmp_path / "csv" / "fraud_qq.csv").read_text().startswith("expected_quantile,observed_z")


def test_svg_is_byte_stable(files, tmp_path):
    res = report.run_pipeline(files["clean"])
    a = report.emit_artifacts(res, "x", tmp_path / "a", tmp_path / "a")
    b = report.emit_artifacts(res, "x", tmp_path / "b", tmp_path / "b")
    for key in ("benford_svg", "zeta_svg"):
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read()


def test_csv_series_matches_dossier(files, tmp_path):
    from elforensics.plotting import read_csv_columns

    res = report.run_pipeline(files["fraud"])
    arts = report.emit_artifacts(res, "f", tmp_path)
    cols = read_csv_columns(arts["zeta_csv"])
    ser = res.dossier["zeta"]["series"]
    assert cols["k"].tolist() == ser["k"]
    assert np.array_equal(cols["zeta_k"], np.array(ser["zeta_k"], dtype=float))


def test_compare_groups(files):
    dossiers = [report.run_pipeline(p).dossier for p in (files["clean"], files["fraud"])]
    comp = report.compare(dossiers)
    assert comp["groups"] == {BIASED: ["fraud-2012"], NO_EVIDENCE: ["clean-2012"]}
    assert comp["k_min"] == 100 and comp["k_max"] == min(d["zeta"]["K"] for d in dossiers) // 2
    same = report.compare([dossiers[0], dossiers[0]])
    assert list(same["groups"]) == [NO_EVIDENCE] and len(same["groups"][NO_EVIDENCE]) == 2
    assert json.loads(json.dumps(report.comparison_json(comp))) == report.comparison_json(comp)


def test_compare_uses_smallest_half_K(files):
    d = report.run_pipeline(files["clean"]).dossier
    small = json.loads(report.dumps(d))
    small["zeta"]["K"] = 3730
    comp = report.compare([d, small])
    assert comp["k_max"] == 1865


def test_compare_empty_range(files):
    d = report.run_pipeline(files["clean"]).dossier
    tiny = json.loads(report.dumps(d))
    tiny["zeta"]["K"] = 150
    with pytest.raises(IncompatibleRange):
        report.compare([d, tiny])


def test_run_many_threads_match(files):
    paths = [files["clean"], files["fraud"]]
    one = [report.dumps(r.dossier) for r in report.run_many(paths)]
    many = [report.dumps(r.dossier) for r in report.run_many(paths, report.PipelineOptions(threads=4))]
    assert one == many


def test_options_from_config():
    opts = report.PipelineOptions.from_config(
        {"schema_version": 1, "threshold": 3.5, "dead_heat_band": [0.48, 0.52],
         "scenarios": [{"label": "a", "beta_low": 0.1, "beta_high": 0.2}]})
    assert opts.threshold == 3.5 and opts.dead_heat_band == (0.48, 0.52)
    assert opts.scenarios == (("a", 0.1, 0.2),)
    with pytest.raises(ValueError):
        report.PipelineOptions.from_config({"schema_version": 2})
    with pytest.raises(ValueError):
        report.PipelineOptions.from_config({"nope": 1})
