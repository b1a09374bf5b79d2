import numpy as np
import pytest

from seqplace.evaluation import (
    BenchResult,
    Method,
    PRCurve,
    SweepCell,
    benchmark,
    delta_method,
    delta_window_for,
    deep_method,
    ds_sweep,
    is_correct,
    load_ground_truth,
    load_pr_csv,
    load_sweep_csv,
    pr_curve,
    save_bench_csv,
    save_pr_csv,
    save_sweep_csv,
    seqslam_method,
    thread_cap,
    tolerance_for,
)
from seqplace.matching_classic import MatchReport
from seqplace.synthetic import SynthConfig, generate


def report_of(best_ref, scores, higher_is_better=True):
    return MatchReport(
        query_indices=np.arange(len(best_ref)),
        best_ref=np.array(best_ref),
        scores=np.array(scores, dtype=np.float64),
        higher_is_better=higher_is_better,
    )


def test_tolerance_for():
    assert tolerance_for(1) == 11
    assert tolerance_for(2) == 12
    assert tolerance_for(10) == 20
    assert tolerance_for(24) == 34
    with pytest.raises(ValueError):
        tolerance_for(0)


def test_is_correct_boundaries():
    assert is_correct(5, 5, 0)
    assert is_correct(5, 8, 3)
    assert is_correct(8, 5, 3)
    assert not is_correct(5, 9, 3)
    with pytest.raises(ValueError):
        is_correct(0, 0, -1)


def test_pr_curve_hand_enumeration():
    # queries sorted by score: correct, wrong, correct, wrong
    curve = pr_curve(report_of([0, 9, 2, 9], [4.0, 3.0, 2.0, 1.0]), delta=0)
    assert np.array_equal(curve.thresholds, [np.inf, 4.0, 3.0, 2.0, 1.0])
    assert np.array_equal(curve.precision, [1.0, 1.0, 0.5, 2 / 3, 0.5])
    assert np.array_equal(curve.recall, [0.0, 0.25, 0.25, 0.5, 0.5])
    assert abs(curve.auc - 19 / 48) < 1e-12


def test_pr_curve_tied_scores_enter_together():
    curve = pr_curve(report_of([0, 9, 2], [1.0, 1.0, 0.0]), delta=0)
    # the two score-1.0 rows form one group; the correct one gets no head start
    assert np.array_equal(curve.thresholds, [np.inf, 1.0, 0.0])
    assert np.array_equal(curve.precision, [1.0, 0.5, 2 / 3])
    assert np.array_equal(curve.recall, [0.0, 1 / 3, 2 / 3])


def test_pr_curve_perfect_matcher_is_exactly_one():
    n = 50
    curve = pr_curve(report_of(np.arange(n), -np.arange(n, dtype=float)), delta=0)
    assert curve.auc == 1.0


def test_pr_curve_all_wrong_is_zero():
    curve = pr_curve(report_of([90, 91, 92], [3.0, 2.0, 1.0]), delta=0)
    assert curve.auc == 0.0
    assert curve.recall.max() == 0.0


def test_pr_curve_polarity_mirror():
    best = [0, 7, 2, 3, 9]
    scores = np.array([0.9, 0.4, 0.8, 0.1, 0.5])
    hi = pr_curve(report_of(best, scores, higher_is_better=True), delta=0)
    lo = pr_curve(report_of(best, -scores, higher_is_better=False), delta=0)
    assert np.array_equal(hi.precision, lo.precision)
    assert np.array_equal(hi.recall, lo.recall)
    assert hi.auc == lo.auc
    assert lo.thresholds[0] == -np.inf
    assert np.array_equal(lo.thresholds[1:], -hi.thresholds[1:])


def test_pr_curve_random_matcher_matches_expected_density():
    rng = np.random.default_rng(7)
    q, r, delta = 2000, 400, 5
    report = report_of(rng.integers(0, r, size=q), rng.random(q))
    truth = {i: int(v) for i, v in enumerate(rng.integers(delta, r - delta, size=q))}
    auc = pr_curve(report, delta, ground_truth=truth).auc
    expected = (2 * delta + 1) / r
    assert abs(auc - expected) < 0.05


def test_pr_curve_ground_truth_override():
    report = report_of([5, 6], [2.0, 1.0])
    curve = pr_curve(report, delta=0, ground_truth={0: 5, 1: 0})
    assert np.array_equal(curve.recall, [0.0, 0.5, 0.5])
    with pytest.raises(ValueError, match="missing query"):
        pr_curve(report, delta=0, ground_truth={0: 5})
    with pytest.raises(ValueError):
        pr_curve(report, delta=-1)


def test_pr_curve_validation():
    with pytest.raises(ValueError):
        PRCurve(thresholds=np.array([1.0]), precision=np.array([1.0, 0.5]),
                recall=np.array([0.0]), auc=0.5)
    with pytest.raises(ValueError):
        PRCurve(thresholds=np.array([1.0]), precision=np.array([1.5]),
                recall=np.array([0.0]), auc=0.5)
    with pytest.raises(ValueError):
        PRCurve(thresholds=np.array([1.0, 0.0]), precision=np.array([1.0, 1.0]),
                recall=np.array([0.5, 0.2]), auc=0.5)
    with pytest.raises(ValueError):
        PRCurve(thresholds=np.array([1.0]), precision=np.array([1.0]),
                recall=np.array([0.0]), auc=1.5)
    curve = PRCurve(thresholds=np.array([1.0]), precision=np.array([1.0]),
                    recall=np.array([0.0]), auc=0.0)
    assert len(curve) == 1
    with pytest.raises(ValueError):
        curve.precision[0] = 0.0


def test_pr_csv_roundtrip(tmp_path):
    curve = pr_curve(report_of([0, 9, 2, 9], [4.0, 3.0, 2.0, 1.0]), delta=0)
    path = tmp_path / "pr.csv"
    save_pr_csv(curve, path, delta=12)
    text = path.read_text()
    assert text.startswith("# delta=12\n# auc=")
    loaded = load_pr_csv(path)
    assert np.array_equal(loaded.thresholds, curve.thresholds)
    assert np.array_equal(loaded.precision, curve.precision)
    assert np.array_equal(loaded.recall, curve.recall)
    assert loaded.auc == curve.auc


def test_pr_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("threshold,precision,recall\n1.0,0.5\n")
    with pytest.raises(ValueError, match=":2"):
        load_pr_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("# auc=0.0\nthreshold,precision,recall\n")
    with pytest.raises(ValueError, match="no curve points"):
        load_pr_csv(empty)


def test_load_ground_truth(tmp_path):
    path = tmp_path / "gt.csv"
    path.write_text("# pairs\n0,5\n1,6\n\n2,0\n")
    assert load_ground_truth(path) == {0: 5, 1: 6, 2: 0}
    path.write_text("0,5,9\n")
    with pytest.raises(ValueError, match=":1"):
        load_ground_truth(path)
    path.write_text("0,apple\n")
    with pytest.raises(ValueError, match=":1"):
        load_ground_truth(path)


def test_delta_window_for():
    assert delta_window_for(1) == 2
    assert delta_window_for(2) == 2
    assert delta_window_for(3) == 4
    assert delta_window_for(4) == 4
    assert delta_window_for(5) == 6
    assert delta_window_for(10) == 10
    with pytest.raises(ValueError):
        delta_window_for(0)


def test_thread_cap(monkeypatch):
    assert thread_cap(3) == 3
    monkeypatch.setenv("SEQPLACE_THREADS", "2")
    assert thread_cap() == 2
    assert thread_cap(5) == 5  # explicit argument wins over the environment
    monkeypatch.setenv("SEQPLACE_THREADS", "0")
    assert thread_cap() >= 1
    monkeypatch.delenv("SEQPLACE_THREADS")
    assert thread_cap() >= 1
    with pytest.raises(ValueError):
        thread_cap(-1)


def broken_method():
    def prepare(reference, d_s):
        raise RuntimeError("cannot prepare")

    return Method(name="broken", prepare=prepare)


def test_ds_sweep_records_failures_and_sorts():
    pairs = [
        generate(SynthConfig(frames=40, dim=8, smoothness=0.5, condition_noise=0.1, seed=s))
        for s in (0, 1)
    ]
    methods = [seqslam_method(), broken_method(), delta_method()]
    cells = ds_sweep(methods, [2, 1], pairs, threads=1)
    assert len(cells) == 3 * 2 * 2
    assert cells == sorted(cells, key=lambda c: (c.method, c.d_s, c.query_name))
    by_method = {}
    for c in cells:
        by_method.setdefault(c.method, []).append(c)
    assert all(c.auc is None for c in by_method["broken"])
    assert all(c.auc is not None and 0.0 <= c.auc <= 1.0 for c in by_method["seqslam"])
    assert all(c.auc is not None for c in by_method["delta"])
    # worker count must not change the result
    assert ds_sweep(methods, [2, 1], pairs, threads=4) == cells


def test_deep_method_prepare_and_deploy():
    pair = generate(SynthConfig(frames=30, dim=8, smoothness=0.5, condition_noise=0.05, seed=3))
    deploy = deep_method(epochs=3, hidden=8, seed=0).prepare(pair.reference, 2)
    report = deploy(pair.query)
    assert len(report) == 30
    assert report.higher_is_better


def test_sweep_csv_roundtrip(tmp_path):
    cells = [
        SweepCell("broken", 1, "q-a", None),
        SweepCell("seqslam", 2, "q-b", 0.875),
    ]
    path = tmp_path / "sweep.csv"
    save_sweep_csv(cells, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,d_s,query_name,auc"
    assert lines[1] == "broken,1,q-a,"
    assert load_sweep_csv(path) == cells
    path.write_text("wrong,header\n")
    with pytest.raises(ValueError, match="header"):
        load_sweep_csv(path)


def test_benchmark_smoke():
    pair = generate(SynthConfig(frames=60, dim=8, smoothness=0.5, condition_noise=0.1, seed=4))
    result = benchmark(seqslam_method(), pair, d_s=4, repetitions=3)
    assert result.method == "seqslam"
    assert result.seconds > 0.0
    assert result.frames == 60
    with pytest.raises(ValueError):
        benchmark(seqslam_method(), pair, d_s=4, repetitions=0)


def test_bench_result_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        BenchResult(method="m", seconds=0.0, frames=10, device="cpu")
    with pytest.raises(ValueError):
        BenchResult(method="m", seconds=1.0, frames=0, device="cpu")
    path = tmp_path / "bench.csv"
    save_bench_csv([BenchResult("m", 0.5, 10, "cpu, 1 logical cores")], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "method,seconds,frames,device"
    assert lines[1].startswith("m,0.5,10,")
