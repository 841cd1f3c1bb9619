"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line (also collected into the
terminal summary) before asserting.
"""

import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES, make_dataset
from elforensics import report
from elforensics.digits import benford2_law, benford_test, benford_values_test
from elforensics.estimate import UPHELD, estimate_from_ratios, fraud_estimate, scenario_table
from elforensics.ingest import write_tallies
from elforensics.synth import GeneratorConfig, generate
from elforensics.zeta import BIASED, NO_EVIDENCE, verdict, zeta_series
from elforensics.zscore import center_deviation_numerators, z_table

pytestmark = pytest.mark.slow

# stations per center average 6, so centers = K / 6
K5000, K10000, K20000, K30000 = 833, 1667, 3500, 5000


def record(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def gen(seed, n_centers, **cfg):
    return generate(GeneratorConfig.from_dict({"seed": seed, "n_centers": n_centers, **cfg}))


def test_criterion_01_benford_law():
    mpmath.mp.dps = 40
    law = benford2_law()
    oracle = [mpmath.fsum(mpmath.log10(1 + mpmath.mpf(1) / (10 * j + d)) for j in range(1, 10)) for d in range(10)]
    worst = max(abs(float(law[d] - oracle[d])) for d in range(10))
    total = abs(math.fsum(law) - 1)
    record(1, worst <= 1e-12 and total <= 1e-12, f"max |P(d) - oracle| = {worst:.2e}, |sum - 1| = {total:.2e}")


def test_criterion_02_chi_square_calibration():
    pvals = np.array([benford_test(gen(seed, K5000)[0]).p_value for seed in range(200)])
    ks = stats.kstest(pvals, "uniform").statistic
    spike = benford_values_test([123] * 5000).p_value
    record(2, ks < 0.1 and spike < 1e-12, f"KS distance {ks:.4f} over 200 seeds, one-digit p = {spike:.3g}")


def test_criterion_03_z_null_calibration():
    ds, _ = gen(0, K20000)
    z = z_table(ds).z
    mean, var, tail = float(z.mean()), float(z.var()), float((np.abs(z) > 3.9).mean())
    ok = ds.K >= 20000 and abs(mean) <= 0.05 and 0.9 <= var <= 1.1 and tail <= 4 * 9.6e-5
    record(3, ok, f"K = {ds.K}, mean {mean:.4f}, var {var:.4f}, tail fraction {tail:.2e}")


def test_criterion_04_center_balance():
    rng = np.random.default_rng(0)
    datasets = [
        gen(1, 300)[0],
        gen(2, 300, injection={"kind": "type_b", "target_fraction": 0.2})[0],
        gen(3, 300, injection={"kind": "type_c", "target_fraction": 0.2})[0],
        make_dataset([[(100, 70, 30, 0), (100, 50, 20, 0)], [(413, 300, 10, 5), (377, 210, 100, 20), (9, 1, 1, 0)]]),
    ]
    for _ in range(50):
        centers = []
        for _ in range(rng.integers(1, 6)):
            regs = rng.integers(1, 1000, size=rng.integers(2, 9))
            valid = [int(rng.integers(1, r + 1)) for r in regs]
            centers.append([(int(r), v, v // 2, 0) for r, v in zip(regs, valid)])
        datasets.append(make_dataset(centers))
    bad = sum(sum(row) != 0 for ds in datasets for row in center_deviation_numerators(ds))
    n_centers = sum(len(ds.centers) for ds in datasets)
    record(4, bad == 0, f"{n_centers} centers in {len(datasets)} datasets, {bad} with nonzero deviation sum")


def test_criterion_05_zeta_null():
    frac_ok = run_ok = no_ev = 0
    seeds = range(200)
    for seed in seeds:
        ds, _ = gen(seed, K10000)
        s = zeta_series(ds, z_table(ds))
        frac_ok += s.frac_outside_9999 < 0.01
        run_ok += s.longest_excursion < 50
        no_ev += verdict(s).group == NO_EVIDENCE
    n = len(seeds)
    ok = frac_ok == n and run_ok >= 0.99 * n and no_ev >= 0.99 * n
    record(5, ok, f"frac<0.01 in {frac_ok}/{n}, run<50 in {run_ok}/{n}, no-evidence in {no_ev}/{n}")


def test_criterion_06_detection_power():
    hits = 0
    worst_p = 0.0
    for seed in range(100):
        ds, _ = gen(seed, K10000, injection={"kind": "type_c", "target_fraction": 0.1, "shift_sd": 6.0})
        s = zeta_series(ds, z_table(ds))
        hits += verdict(s).group == BIASED and s.min_p_value < 1e-6
        worst_p = max(worst_p, s.min_p_value)
    record(6, hits >= 95, f"biased-count with min p < 1e-6 in {hits}/100 seeds (largest min p {worst_p:.2e})")


def test_criterion_07_innocent_relocation():
    no_ev = 0
    kappas = []
    for seed in range(100):
        ds, _ = gen(seed, K10000, injection={"kind": "type_b", "target_fraction": 0.1})
        t = z_table(ds)
        kappas.append(t.kappa)
        no_ev += verdict(zeta_series(ds, t)).group == NO_EVIDENCE
    record(7, no_ev >= 95, f"no-evidence in {no_ev}/100 seeds; median kappa {int(np.median(kappas))} "
                           f"(null expectation {2 * 4.8e-5 * 10000:.1f})")


def test_criterion_08_counterfactual_recovery():
    results = {}
    for beta in (0.3, 0.5, 0.7):
        good = 0
        errs = []
        for seed in range(100):
            ds, truth = gen(seed, K10000,
                            pi_center={"kind": "beta", "mean": 0.52, "concentration": 100},
                            injection={"kind": "type_c", "target_fraction": beta, "shift_strength": 0.6})
            est = fraud_estimate(ds, z_table(ds))
            err = est.rho(truth.realized_beta) - truth.rho_true
            errs.append(err)
            good += abs(err) <= 0.015
        results[beta] = (good, float(np.mean(errs)))
    ok = all(g >= 90 for g, _ in results.values())
    detail = ", ".join(f"beta {b}: {g}/100 within 0.015 (mean error {e:+.4f})" for b, (g, e) in results.items())
    record(8, ok, detail)


def test_criterion_09_published_relation():
    est = estimate_from_ratios(0.6284, 0.6968)
    rho1 = est.rho(1.0)
    row = scenario_table(est, [("all", 0.0, 1.0)])[0]
    ok = abs(rho1 - 0.560) <= 0.001 and row.verdict == UPHELD
    record(9, ok, f"rho_1 = {rho1:.4f}, verdict over [0, 1] = {row.verdict}")


def test_criterion_10_excess_factor():
    fraud, kappas, clean = [], [], []
    for seed in range(10):
        ds, _ = gen(seed, K30000, injection={"kind": "type_c", "target_fraction": 0.007, "shift_sd": 6.0})
        est = fraud_estimate(ds, z_table(ds))
        fraud.append(est.excess_factor)
        kappas.append(est.kappa)
        ds, _ = gen(1000 + seed, K30000)
        s = z_table(ds).summary()
        clean.append(s["kappa"] / s["expected_kappa"])
    in_range = all(100 <= k <= 330 for k in kappas)
    ok = in_range and min(fraud) >= 30 and max(clean) <= 4
    record(10, ok, f"kappa {min(kappas)}-{max(kappas)}, fraud excess >= {min(fraud):.1f}, "
                   f"clean excess <= {max(clean):.2f}")


def test_criterion_11_determinism(tmp_path):
    ds, _ = gen(77, K10000, injection={"kind": "type_c", "target_fraction": 0.05, "shift_sd": 6.0})
    p = tmp_path / "t.csv"
    write_tallies(p, ds.election_id, ds.stations)
    runs = [
        report.dumps(report.run_pipeline(p, report.PipelineOptions(threads=t, resamples=200, seed=3)).dossier)
        for t in (1, 1, 4)
    ]
    record(11, runs[0] == runs[1] == runs[2], f"{len(runs[0])} bytes; two single-thread runs and a 4-thread run")
