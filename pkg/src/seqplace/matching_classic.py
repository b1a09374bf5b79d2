"""Heuristic sequence matchers: SeqSLAM-style search and delta matching.

Both operate on a Q x R difference matrix between query and reference
descriptor sequences (rows = query frames, columns = reference frames).
SeqSLAM standardizes the matrix with a local contrast window, then sweeps
constant-velocity lines through it; delta matching is nearest-neighbor
retrieval in delta-descriptor space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DescriptorSequence
from .descriptors import DeltaConfig, delta_transform

METRICS = ("cosine", "euclidean")


@dataclass(frozen=True)
class DifferenceMatrix:
    """Pairwise distances; lower means more similar."""

    data: np.ndarray
    metric: str

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"difference matrix must be Q x R, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("difference matrix contains non-finite values")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def query_count(self) -> int:
        return self.data.shape[0]

    @property
    def reference_count(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SeqSlamConfig:
    d_s: int = 10
    v_min: float = 0.8
    v_max: float = 1.2
    v_step: float = 0.04
    r_window: int = 10

    def __post_init__(self):
        if self.d_s < 1:
            raise ValueError("d_s must be >= 1")
        if not (0.0 < self.v_min <= self.v_max):
            raise ValueError("need 0 < v_min <= v_max")
        if self.v_step <= 0.0:
            raise ValueError("v_step must be > 0")
        if self.r_window < 1:
            raise ValueError("r_window must be >= 1")


@dataclass(frozen=True)
class MatchReport:
    """Per-query best reference frame with its score.

    higher_is_better records the score polarity so the evaluator can sweep
    thresholds uniformly across heuristic (distance) and learned
    (probability) matchers.
    """

    query_indices: np.ndarray
    best_ref: np.ndarray
    scores: np.ndarray
    higher_is_better: bool

    def __post_init__(self):
        qi = np.array(self.query_indices, dtype=np.int64)
        br = np.array(self.best_ref, dtype=np.int64)
        sc = np.array(self.scores, dtype=np.float64)
        if not (qi.shape == br.shape == sc.shape) or qi.ndim != 1 or qi.size == 0:
            raise ValueError("report fields must be equal-length nonempty 1-d arrays")
        if (br < 0).any():
            raise ValueError("reference indices must be >= 0")
        for name, arr in (("query_indices", qi), ("best_ref", br), ("scores", sc)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.query_indices)


def difference_matrix(
    query: DescriptorSequence, reference: DescriptorSequence, metric: str = "cosine"
) -> DifferenceMatrix:
    """Entry (q, r) is the distance between query row q and reference row r.

    Cosine distance is 1 - dot(a, b)/(|a||b|); any pair involving a zero
    vector gets distance 1. Euclidean is the plain L2 distance.
    """
    if query.dim != reference.dim:
        raise ValueError(f"descriptor dims differ: {query.dim} vs {reference.dim}")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    a = query.data.astype(np.float64)
    b = reference.data.astype(np.float64)
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        az = na == 0.0
        bz = nb == 0.0
        an = np.where(az, 1.0, na)
        bn = np.where(bz, 1.0, nb)
        dist = 1.0 - (a / an[:, None]) @ (b / bn[:, None]).T
        dist[az, :] = 1.0
        dist[:, bz] = 1.0
        np.clip(dist, 0.0, 2.0, out=dist)
    else:
        sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
        dist = np.sqrt(np.clip(sq, 0.0, None))
    return DifferenceMatrix(data=dist, metric=metric)


def contrast_enhance(matrix: DifferenceMatrix, r_window: int = 10) -> DifferenceMatrix:
    """Standardize each entry against its column over a local row window.

    Entry (q, r) becomes (M[q,r] - mu) / sigma where mu, sigma are the mean
    and population std of column r over rows [q - r_window, q + r_window]
    clamped to the matrix; windows with sigma < 1e-8 yield 0.
    """
    if r_window < 1:
        raise ValueError("r_window must be >= 1")
    data = matrix.data
    rows = data.shape[0]
    csum = np.vstack([np.zeros((1, data.shape[1])), np.cumsum(data, axis=0)])
    csum2 = np.vstack([np.zeros((1, data.shape[1])), np.cumsum(data * data, axis=0)])
    q = np.arange(rows)
    lo = np.maximum(q - r_window, 0)
    hi = np.minimum(q + r_window, rows - 1)
    count = (hi - lo + 1).astype(np.float64)[:, None]
    means = (csum[hi + 1] - csum[lo]) / count
    variances = np.clip((csum2[hi + 1] - csum2[lo]) / count - means * means, 0.0, None)
    stds = np.sqrt(variances)
    flat = stds < 1e-8
    out = np.where(flat, 0.0, (data - means) / np.where(flat, 1.0, stds))
    return DifferenceMatrix(data=out, metric=matrix.metric)


def velocity_grid(cfg: SeqSlamConfig) -> np.ndarray:
    """Sweep velocities v_min, v_min + v_step, ... capped at v_max."""
    count = int(round((cfg.v_max - cfg.v_min) / cfg.v_step)) + 1
    grid = cfg.v_min + cfg.v_step * np.arange(count)
    return grid[grid <= cfg.v_max + 1e-9]


def seqslam_search(matrix: DifferenceMatrix, cfg: SeqSlamConfig) -> MatchReport:
    """Constant-velocity line search through an (enhanced) difference matrix.

    For query q the trajectory ending at reference r with velocity v costs
    mean over k of M[q-k, round(r - v*k)]; samples whose reference index
    falls outside the matrix contribute the maximum of their query row
    instead. Queries earlier than d_s - 1 use the longest available prefix.
    Ties pick the lowest reference index.
    """
    data = matrix.data
    n_query, n_ref = data.shape
    if n_query < cfg.d_s:
        raise ValueError(f"need at least d_s={cfg.d_s} query frames, got {n_query}")
    vels = velocity_grid(cfg)
    refs = np.arange(n_ref, dtype=np.float64)
    row_max = data.max(axis=1)
    # per (velocity, offset-k) reference indices; independent of the query row
    cols, oob = [], []
    for k in range(cfg.d_s):
        raw = np.rint(refs[None, :] - vels[:, None] * k).astype(np.int64)
        bad = (raw < 0) | (raw >= n_ref)
        cols.append(np.where(bad, 0, raw))
        oob.append(bad)
    best_ref = np.empty(n_query, dtype=np.int64)
    scores = np.empty(n_query, dtype=np.float64)
    for q in range(n_query):
        length = min(cfg.d_s, q + 1)
        acc = np.zeros((len(vels), n_ref))
        for k in range(length):
            row = data[q - k]
            acc += np.where(oob[k], row_max[q - k], row[cols[k]])
        acc /= length
        per_ref = acc.min(axis=0)
        best = int(np.argmin(per_ref))
        best_ref[q] = best
        scores[q] = per_ref[best]
    return MatchReport(
        query_indices=np.arange(n_query),
        best_ref=best_ref,
        scores=scores,
        higher_is_better=False,
    )


def nearest_neighbor_match(
    query: DescriptorSequence, reference: DescriptorSequence, metric: str = "cosine"
) -> MatchReport:
    """Single-frame retrieval: per-query argmin of the difference matrix."""
    dist = difference_matrix(query, reference, metric).data
    best = np.argmin(dist, axis=1)
    return MatchReport(
        query_indices=np.arange(dist.shape[0]),
        best_ref=best,
        scores=dist[np.arange(dist.shape[0]), best],
        higher_is_better=False,
    )


def delta_match(
    query: DescriptorSequence, reference: DescriptorSequence, cfg: DeltaConfig
) -> MatchReport:
    """Nearest-neighbor matching in delta space, reported in frame indices.

    Only query frames with a full delta window are evaluated; retrieved
    indices are mapped back through the reference's frame-index map.
    """
    if query.frame_count < cfg.window or reference.frame_count < cfg.window:
        raise ValueError(
            f"both sequences need >= {cfg.window} frames "
            f"(got {query.frame_count} and {reference.frame_count})"
        )
    dq, q_frames = delta_transform(query, cfg)
    dr, r_frames = delta_transform(reference, cfg)
    dist = difference_matrix(dq, dr, "cosine").data
    best_cols = np.argmin(dist, axis=1)
    return MatchReport(
        query_indices=q_frames,
        best_ref=r_frames[best_cols],
        scores=dist[np.arange(dist.shape[0]), best_cols],
        higher_is_better=False,
    )
