"""Correctness tolerance, precision-recall curves, d_s sweeps, benchmarks.

A retrieved reference frame counts as correct when it lies within delta
frames of the true one, with delta = d_s + 10 unless overridden. Ground
truth defaults to identity alignment (query frame q corresponds to
reference frame q); an override table handles other alignments.
"""

from __future__ import annotations

import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import median
from typing import Callable

import numpy as np

from .dataset import Traversal
from .descriptors import DeltaConfig
from .matching_classic import (
    MatchReport,
    SeqSlamConfig,
    contrast_enhance,
    difference_matrix,
    seqslam_search,
    delta_match,
)
from . import neural
from .synthetic import SynthPair


def tolerance_for(d_s: int) -> int:
    """Correctness slack in frames for a given sequence length."""
    if d_s < 1:
        raise ValueError(f"d_s must be >= 1, got {d_s}")
    return d_s + 10


def is_correct(retrieved: int, true_index: int, delta: int) -> bool:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return abs(int(retrieved) - int(true_index)) <= delta


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall swept from strictest to loosest score threshold.

    The first point is the zero-retrieval anchor (precision 1, recall 0 by
    convention) so a perfect matcher integrates to exactly 1.
    """

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float

    def __post_init__(self):
        th = np.array(self.thresholds, dtype=np.float64)
        pr = np.array(self.precision, dtype=np.float64)
        rc = np.array(self.recall, dtype=np.float64)
        if not (th.shape == pr.shape == rc.shape) or th.ndim != 1 or th.size == 0:
            raise ValueError("curve fields must be equal-length nonempty 1-d arrays")
        if pr.min() < 0.0 or pr.max() > 1.0 or rc.min() < 0.0 or rc.max() > 1.0:
            raise ValueError("precision and recall must lie in [0, 1]")
        if np.any(np.diff(rc) < 0.0):
            raise ValueError("recall must be nondecreasing along the sweep")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc must lie in [0, 1], got {self.auc}")
        for name, arr in (("thresholds", th), ("precision", pr), ("recall", rc)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class BenchResult:
    """Median deployment wall time for one matcher on one traversal pair."""

    method: str
    seconds: float
    frames: int
    device: str

    def __post_init__(self):
        if not self.seconds > 0.0:
            raise ValueError("seconds must be > 0")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


def pr_curve(report: MatchReport, delta: int, ground_truth: dict[int, int] | None = None) -> PRCurve:
    """Threshold sweep over match scores, honoring the report's polarity.

    At each threshold: retrieved = queries whose score passes, precision =
    correct/retrieved, recall = correct/total queries; AUC is the
    trapezoidal area over recall.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    queries = report.query_indices
    if ground_truth is None:
        truth = queries
    else:
        missing = [int(q) for q in queries if int(q) not in ground_truth]
        if missing:
            raise ValueError(f"ground truth missing query indices {missing[:5]}")
        truth = np.array([ground_truth[int(q)] for q in queries], dtype=np.int64)
    correct = np.abs(report.best_ref - truth) <= delta
    scores = report.scores
    order = np.argsort(-scores if report.higher_is_better else scores, kind="stable")
    sorted_scores = scores[order]
    cum_correct = np.cumsum(correct[order])
    total = len(report)
    # one point per distinct score, taken after its whole tie group enters
    last_in_group = np.flatnonzero(
        np.concatenate([sorted_scores[1:] != sorted_scores[:-1], [True]])
    )
    anchor = np.inf if report.higher_is_better else -np.inf
    thresholds = np.concatenate([[anchor], sorted_scores[last_in_group]])
    precision = np.concatenate([[1.0], cum_correct[last_in_group] / (last_in_group + 1)])
    recall = np.concatenate([[0.0], cum_correct[last_in_group] / total])
    auc = float(np.trapezoid(precision, recall))
    return PRCurve(thresholds=thresholds, precision=precision, recall=recall, auc=auc)


def save_pr_csv(curve: PRCurve, path, delta: int | None = None) -> None:
    with open(path, "w", encoding="ascii") as fh:
        if delta is not None:
            fh.write(f"# delta={delta}\n")
        fh.write(f"# auc={curve.auc!r}\n")
        fh.write("threshold,precision,recall\n")
        for th, pr, rc in zip(curve.thresholds, curve.precision, curve.recall):
            fh.write(f"{float(th)!r},{float(pr)!r},{float(rc)!r}\n")


def load_pr_csv(path) -> PRCurve:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line == "threshold,precision,recall":
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields")
            rows.append([float(v) for v in parts])
    if not rows:
        raise ValueError(f"{path}: no curve points")
    arr = np.array(rows, dtype=np.float64)
    auc = float(np.trapezoid(arr[:, 1], arr[:, 2]))
    return PRCurve(thresholds=arr[:, 0], precision=arr[:, 1], recall=arr[:, 2], auc=auc)


def load_ground_truth(path) -> dict[int, int]:
    """Alignment override: one "query_index,reference_index" per line."""
    table: dict[int, int] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected query_index,reference_index")
            try:
                q, r = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            table[q] = r
    return table


Deploy = Callable[[Traversal], MatchReport]


@dataclass(frozen=True)
class Method:
    """A matcher: prepare(reference, d_s) returns the deployment function.

    Preparation covers everything done once per reference (training, delta
    precomputation); only the returned deploy callable is benchmarked.
    """

    name: str
    prepare: Callable[[Traversal, int], Deploy]


def seqslam_method(
    v_min: float = 0.8, v_max: float = 1.2, v_step: float = 0.04, r_window: int = 10
) -> Method:
    def prepare(reference: Traversal, d_s: int) -> Deploy:
        cfg = SeqSlamConfig(d_s=d_s, v_min=v_min, v_max=v_max, v_step=v_step, r_window=r_window)

        def deploy(query: Traversal) -> MatchReport:
            matrix = difference_matrix(query.descriptors, reference.descriptors)
            return seqslam_search(contrast_enhance(matrix, cfg.r_window), cfg)

        return deploy

    return Method(name="seqslam", prepare=prepare)


def delta_window_for(d_s: int) -> int:
    """Smallest even difference window covering d_s frames (minimum 2)."""
    if d_s < 1:
        raise ValueError("d_s must be >= 1")
    return max(2, d_s + (d_s % 2))


def delta_method() -> Method:
    def prepare(reference: Traversal, d_s: int) -> Deploy:
        cfg = DeltaConfig(window=delta_window_for(d_s))

        def deploy(query: Traversal) -> MatchReport:
            return delta_match(query.descriptors, reference.descriptors, cfg)

        return deploy

    return Method(name="delta", prepare=prepare)


def deep_method(
    epochs: int = 100, lr: float = 0.01, hidden: int = 512, seed: int = 0
) -> Method:
    def prepare(reference: Traversal, d_s: int) -> Deploy:
        model, _ = neural.train(
            reference, d_s, epochs=epochs, lr=lr, rng_seed=seed, hidden=hidden
        )

        def deploy(query: Traversal) -> MatchReport:
            _, report = neural.infer(model, query)
            return report

        return deploy

    return Method(name="deep", prepare=prepare)


def thread_cap(value: int | None = None) -> int:
    """Worker budget: explicit value, else SEQPLACE_THREADS (0 = auto)."""
    if value is None:
        raw = os.environ.get("SEQPLACE_THREADS", "").strip()
        value = int(raw) if raw else 0
    if value < 0:
        raise ValueError("thread cap must be >= 0")
    if value == 0:
        return os.cpu_count() or 1
    return value


@dataclass(frozen=True)
class SweepCell:
    """One (method, d_s, query) evaluation; auc None when the cell failed."""

    method: str
    d_s: int
    query_name: str
    auc: float | None


def ds_sweep(
    methods: list[Method],
    ds_values: list[int],
    pairs: list[SynthPair],
    threads: int | None = None,
) -> list[SweepCell]:
    """AUC per (method, d_s, pair) at delta = d_s + 10, sorted by key.

    Cell failures are recorded as missing values rather than aborting the
    sweep. Cells are independent, so they may run on a small thread pool;
    the sorted output makes worker scheduling invisible.
    """

    def run(method: Method, d_s: int, pair: SynthPair) -> SweepCell:
        try:
            report = method.prepare(pair.reference, d_s)(pair.query)
            auc = pr_curve(report, tolerance_for(d_s)).auc
        except Exception:
            auc = None
        return SweepCell(method=method.name, d_s=d_s, query_name=pair.query.name, auc=auc)

    cells = [(m, d, p) for m in methods for d in ds_values for p in pairs]
    workers = thread_cap(threads)
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: run(*c), cells))
    else:
        results = [run(*c) for c in cells]
    return sorted(results, key=lambda c: (c.method, c.d_s, c.query_name))


def save_sweep_csv(cells: list[SweepCell], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("method,d_s,query_name,auc\n")
        for c in cells:
            auc = "" if c.auc is None else repr(c.auc)
            fh.write(f"{c.method},{c.d_s},{c.query_name},{auc}\n")


def load_sweep_csv(path) -> list[SweepCell]:
    cells = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "method,d_s,query_name,auc":
            raise ValueError(f"{path}: unexpected sweep header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            auc = None if parts[3] == "" else float(parts[3])
            cells.append(SweepCell(parts[0], int(parts[1]), parts[2], auc))
    return cells


def _device_label() -> str:
    return f"{platform.machine() or 'cpu'}, {os.cpu_count() or 1} logical cores"


def benchmark(method: Method, pair: SynthPair, d_s: int, repetitions: int = 3) -> BenchResult:
    """Median deployment wall time; preparation stays outside the clock."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    deploy = method.prepare(pair.reference, d_s)
    times = []
    for _ in range(repetitions):
        tick = time.perf_counter()
        deploy(pair.query)
        times.append(time.perf_counter() - tick)
    return BenchResult(
        method=method.name,
        seconds=float(median(times)),
        frames=pair.query.frame_count,
        device=_device_label(),
    )


def save_bench_csv(results: list[BenchResult], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("method,seconds,frames,device\n")
        for r in results:
            fh.write(f"{r.method},{r.seconds!r},{r.frames},{r.device}\n")
