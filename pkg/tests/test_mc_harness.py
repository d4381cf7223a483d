import csv
import math
import statistics

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pja import stable_math as sm
from pja.mc_harness import (CASES, ExperimentConfig, ReplicationRecord, convergence_study, coverage,
                            curve_emit, histogram, loglog_slope, replicate, run_case, run_tables,
                            se_precision_row, standard_model, summarize, summarize_records, write_records)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_summarize_small_example():
    s = summarize([1, 2, 3, 4])
    assert (s.median, s.iqr, s.mad, s.n) == (2.5, 1.5, 1.0, 4)
    one = summarize([3.0])
    assert (one.median, one.iqr, one.mad) == (3.0, 0.0, 0.0)


def test_summarize_drops_nan_and_counts():
    s = summarize([1.0, math.nan, 3.0])
    assert s.n == 2 and s.n_flagged == 1 and s.median == 2.0
    with pytest.raises(ValueError):
        summarize([math.nan])


def test_summarize_center():
    assert summarize([1.0, 2.0, 3.0], center=0.0).mad == pytest.approx(2.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60))
def test_summarize_matches_statistics_module(xs):
    s = summarize(xs)
    q = statistics.quantiles(xs, n=4, method="inclusive")
    med = statistics.median(xs)
    assert s.median == pytest.approx(med, abs=1e-12 * (1 + abs(med)))
    assert s.iqr == pytest.approx(q[2] - q[0], abs=1e-9)
    assert s.mad == pytest.approx(statistics.fmean(abs(x - s.median) for x in xs), abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(case_id="Z")
    with pytest.raises(ValueError):
        ExperimentConfig(reps=0)
    with pytest.raises(ValueError):
        ExperimentConfig(M=1)
    cfg = ExperimentConfig(case_id="A")
    assert cfg.beta_true == 1.5 and cfg.grid.n_steps == 8580
    assert ExperimentConfig(case_id="C").beta_true == 2.0
    assert ExperimentConfig(case_id="D").beta_true == 2.0
    assert cfg.to_dict()["case_id"] == "A"


def test_cases_defined():
    assert set(CASES) == {"A", "B", "C", "D"}
    assert CASES["B"].activity == 1.75


def test_run_case_deterministic():
    cfg = ExperimentConfig(case_id="A", reps=4, base_seed=7)
    assert run_case(cfg, 1) == run_case(cfg, 1)
    other = run_case(ExperimentConfig(case_id="A", reps=4, base_seed=8), 1)
    assert other[0].beta_ts != run_case(cfg, 1)[0].beta_ts


def test_workers_do_not_change_results():
    cfg = ExperimentConfig(case_id="C", reps=6, base_seed=3)
    assert run_case(cfg, 1) == run_case(cfg, 2)


def test_replication_is_order_free():
    cfg = ExperimentConfig(case_id="D", reps=5, base_seed=2)
    recs = run_case(cfg, 1)
    assert replicate(cfg, 3) == recs[3]
    assert [r.index for r in recs] == list(range(5))


def test_flagged_records_are_counted():
    recs = [ReplicationRecord(0, 1.5, 1.5, 0.5, 1.5, 1.0, 0.1, 1.3, 1.7, False),
            ReplicationRecord(1, math.nan, 1.4, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan,
                              True, "degenerate"),
            ReplicationRecord(2, 1.6, 1.6, 0.5, 1.6, 1.0, 0.1, 1.4, 1.8, False)]
    s = summarize_records(recs, "A", 1.5)
    assert s.n_flagged == 1 and s.flagged_fraction == pytest.approx(1 / 3)
    assert s.estimators["beta_ts"].median == pytest.approx(1.55)
    assert s.mad_about_true["beta_ts"] == pytest.approx(0.05)
    assert coverage(recs, 1.5) == 1.0
    assert coverage(recs, 1.35) == 0.5


def test_histogram_counts_every_value():
    cfg = ExperimentConfig(case_id="C", reps=20, base_seed=4)
    recs = run_case(cfg, 1)
    edges, counts = histogram(recs, bins=10)
    assert len(edges) == 11
    assert counts["beta_ts"].sum() == 20 and counts["b_0.1"].sum() == 20


def test_se_precision_row_on_known_records():
    cfg = ExperimentConfig(case_id="A", reps=3)
    recs = [ReplicationRecord(i, 1.5, 1.5, 0.5, b, a, 0.0, 0.0, 0.0, False)
            for i, (b, a) in enumerate([(1.4, 1.0), (1.5, 4.0), (1.6, 9.0)])]
    row = se_precision_row(recs, cfg)
    assert row.exact_scaled_sd == pytest.approx(math.sqrt(22.0 * 390 * 0.01))
    assert row.est_median == pytest.approx(math.sqrt(22.0 * 4.0))


def test_run_tables_writes_artifacts(tmp_path):
    res = run_tables(["A", "C"], reps=6, base_seed=1, workers=1, out_dir=tmp_path, bins=5)
    t2 = _read(tmp_path / "table2.csv")
    assert t2[0] == ["case", "estimator", "beta_true", "median", "iqr", "mad", "n_flagged", "mad_about_true"]
    assert len(t2) == 5
    t3 = _read(tmp_path / "table3.csv")
    assert t3[0] == ["case", "exact_scaled_sd", "est_median", "est_iqr", "est_mad"] and len(t3) == 3
    h = _read(tmp_path / "histogram_A.csv")
    assert h[0] == ["bin_lo", "bin_hi", "count_beta_ts", "count_b_0.1"] and len(h) == 6
    assert len(res.records["A"]) == 6


def test_records_csv_round_trip(tmp_path):
    recs = run_case(ExperimentConfig(case_id="C", reps=3, base_seed=5), 1)
    rows = _read(write_records(tmp_path / "r.csv", recs))
    assert rows[0][:4] == ["index", "beta_fs", "b_low", "tau_hat"]
    assert float(rows[1][4]) == pytest.approx(recs[0].beta_ts, rel=1e-14)


def test_curve_emit(tmp_path):
    betas = np.round(np.arange(0.8, 2.0001, 0.05), 10)
    ps = np.round(np.arange(0.05, 1.0001, 0.01), 10)
    k_path, p_path = curve_emit(betas, ps, tmp_path)
    k_rows = _read(k_path)[1:]
    assert all(float(p) < float(b) / 2 or float(b) == 2.0 for b, p, _ in k_rows)
    star = {float(r[0]): float(r[1]) for r in _read(p_path)[1:]}
    assert star[2.0] == pytest.approx(1.0, abs=1e-3)
    # the sd curve at beta = 1.5 dips at the optimal power
    sub = [(float(p), float(k)) for b, p, k in k_rows if float(b) == 1.5]
    ks = np.array([k for _, k in sub])
    j = int(np.argmin(ks))
    assert 0 < j < len(ks) - 1
    assert sub[j][0] == pytest.approx(star[1.5], abs=0.011)


def test_loglog_slope_exact():
    d = np.array([1e-3, 2e-3, 4e-3])
    assert loglog_slope(d, 3 * d**0.5) == pytest.approx(0.5, abs=1e-12)


def test_convergence_study_shapes():
    rows, slopes = convergence_study(standard_model(1.5), [0.3, 0.6], [1 / 200, 1 / 400], T=2.0, reps=5)
    assert len(rows) == 4 and set(slopes) == {0.3, 0.6}
    r = rows[0]
    assert r.limit == pytest.approx(2.0 * sm.mu_p(0.3, 1.5))
