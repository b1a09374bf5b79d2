"""Trainable sequence matcher: LSTM over descriptor+position windows.

A single-cell LSTM consumes windows of per-frame inputs (descriptor
concatenated with the 2-d position, in that order) and a linear head maps
the final hidden state to one logit per reference frame. Training is plain
softmax cross-entropy with hand-derived backpropagation through time and
Adam; inference emits a softmax activity profile over reference places for
every query frame.

Checkpoints use the SPM1 container: magic "SPM1"; m, H, N, d_s as unsigned
32-bit little-endian; then every parameter tensor in declaration order
(w_ii, w_if, w_ig, w_io, w_hi, w_hf, w_hg, w_ho, b_i, b_f, b_g, b_o, head
w, head b) as float32 little-endian, row-major.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from .dataset import Traversal, make_windows
from .matching_classic import MatchReport
from .rng import RandomStream

SPM1_MAGIC = b"SPM1"


class TrainingError(RuntimeError):
    """Raised when the loss turns non-finite; carries epoch and batch."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class LstmParams:
    """Gate weights (H x m), recurrent weights (H x H), biases (H)."""

    w_ii: np.ndarray
    w_if: np.ndarray
    w_ig: np.ndarray
    w_io: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hg: np.ndarray
    w_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.w_ii.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_ii.shape[1]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(
            *(np.zeros((hidden_dim, input_dim)) for _ in range(4)),
            *(np.zeros((hidden_dim, hidden_dim)) for _ in range(4)),
            *(np.zeros(hidden_dim) for _ in range(4)),
        )


@dataclass
class HeadParams:
    """Linear place-classification head: N x H weights, N biases."""

    w: np.ndarray
    b: np.ndarray

    @property
    def places(self) -> int:
        return self.w.shape[0]

    @classmethod
    def zeros(cls, hidden_dim: int, places: int) -> "HeadParams":
        return cls(w=np.zeros((places, hidden_dim)), b=np.zeros(places))


@dataclass
class Gradients:
    lstm: LstmParams
    head: HeadParams


@dataclass
class SequenceModel:
    """Learned matcher: LSTM + head plus the training-time configuration."""

    lstm: LstmParams
    head: HeadParams
    d_s: int
    n: int
    rng_seed: int | None = None

    @property
    def input_dim(self) -> int:
        return self.n + 2

    @property
    def places(self) -> int:
        return self.head.places


def param_items(lstm: LstmParams, head: HeadParams) -> list[tuple[str, np.ndarray]]:
    """(name, tensor) pairs in declaration order; fixes checkpoint layout."""
    items = [(f.name, getattr(lstm, f.name)) for f in fields(LstmParams)]
    items += [(f"head_{f.name}", getattr(head, f.name)) for f in fields(HeadParams)]
    return items


@dataclass
class AdamState:
    """First/second moment accumulators keyed like param_items."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainingCurves:
    """Per-epoch mean loss (nats), exact-label accuracy, and wall seconds."""

    losses: list[float]
    accuracies: list[float]
    seconds: list[float]

    def __len__(self) -> int:
        return len(self.losses)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_core(lstm: LstmParams, xs: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Run the recurrence over xs (steps, B, m); returns h_T and step caches."""
    h, c = h0, c0
    cache = []
    for t in range(xs.shape[0]):
        x = xs[t]
        gi = _sigmoid(x @ lstm.w_ii.T + h @ lstm.w_hi.T + lstm.b_i)
        gf = _sigmoid(x @ lstm.w_if.T + h @ lstm.w_hf.T + lstm.b_f)
        gg = np.tanh(x @ lstm.w_ig.T + h @ lstm.w_hg.T + lstm.b_g)
        go = _sigmoid(x @ lstm.w_io.T + h @ lstm.w_ho.T + lstm.b_o)
        c_new = gf * c + gi * gg
        tc = np.tanh(c_new)
        cache.append((x, h, c, gi, gf, gg, go, tc))
        h = go * tc
        c = c_new
    return h, cache


def _backward_core(lstm: LstmParams, cache, dh: np.ndarray) -> LstmParams:
    """BPTT from the gradient of the final hidden state; returns param grads."""
    grads = LstmParams.zeros(lstm.input_dim, lstm.hidden_dim)
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, gi, gf, gg, go, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        dai = (dc * gg) * gi * (1.0 - gi)
        daf = (dc * c_prev) * gf * (1.0 - gf)
        dag = (dc * gi) * (1.0 - gg * gg)
        dao = do * go * (1.0 - go)
        grads.w_ii += dai.T @ x
        grads.w_if += daf.T @ x
        grads.w_ig += dag.T @ x
        grads.w_io += dao.T @ x
        grads.w_hi += dai.T @ h_prev
        grads.w_hf += daf.T @ h_prev
        grads.w_hg += dag.T @ h_prev
        grads.w_ho += dao.T @ h_prev
        grads.b_i += dai.sum(axis=0)
        grads.b_f += daf.sum(axis=0)
        grads.b_g += dag.sum(axis=0)
        grads.b_o += dao.sum(axis=0)
        dh = dai @ lstm.w_hi + daf @ lstm.w_hf + dag @ lstm.w_hg + dao @ lstm.w_ho
        dc = dc * gf
    return grads


def lstm_forward(params: LstmParams, inputs: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Single-window recurrence; returns (h_T, cache for model_backward)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ValueError(
            f"inputs must be d_s x {params.input_dim}, got shape {inputs.shape}"
        )
    if inputs.shape[0] < 1:
        raise ValueError("need at least one step")
    h0 = np.asarray(h0, dtype=np.float64).reshape(1, -1)
    c0 = np.asarray(c0, dtype=np.float64).reshape(1, -1)
    if h0.shape[1] != params.hidden_dim or c0.shape[1] != params.hidden_dim:
        raise ValueError("h0/c0 must have the hidden dimension")
    h, cache = _forward_core(params, inputs[:, None, :], h0, c0)
    return h[0], cache


def model_forward(model: SequenceModel, window: np.ndarray, with_cache: bool = False):
    """Logits over the N reference places for one d_s x (n+2) window.

    No softmax here; the loss and the activity-profile export apply it.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != model.input_dim:
        raise ValueError(
            f"window must be d_s x {model.input_dim} "
            f"(descriptor then 2-d position), got shape {window.shape}"
        )
    h_last, cache = lstm_forward(
        model.lstm,
        window,
        np.zeros(model.lstm.hidden_dim),
        np.zeros(model.lstm.hidden_dim),
    )
    logits = model.head.w @ h_last + model.head.b
    if with_cache:
        return logits, (cache, h_last)
    return logits


def cross_entropy_loss(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable -log softmax(logits)[label] and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if label < 0 or label >= logits.shape[-1]:
        raise ValueError(f"label {label} outside [0, {logits.shape[-1]})")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = log_z - shifted[label]
    dlogits = np.exp(shifted - log_z)
    dlogits[label] -= 1.0
    return float(loss), dlogits


def _cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_z - shifted[rows, labels]
    dlogits = np.exp(shifted - log_z[:, None])
    dlogits[rows, labels] -= 1.0
    return losses, dlogits


def model_backward(model: SequenceModel, window: np.ndarray, label: int, cache) -> Gradients:
    """Exact gradients of cross_entropy_loss(model_forward(window), label)."""
    lstm_cache, h_last = cache
    window = np.asarray(window, dtype=np.float64)
    if len(lstm_cache) != window.shape[0] or h_last.shape[0] != model.lstm.hidden_dim:
        raise RuntimeError("cache does not match this window/model")
    logits = model.head.w @ h_last + model.head.b
    _, dlogits = cross_entropy_loss(logits, label)
    head_grads = HeadParams(w=np.outer(dlogits, h_last), b=dlogits.copy())
    dh = (model.head.w.T @ dlogits)[None, :]
    lstm_grads = _backward_core(model.lstm, lstm_cache, dh)
    for f in fields(LstmParams):  # collapse the batch axis kept by the core
        arr = getattr(lstm_grads, f.name)
        if arr.ndim > getattr(model.lstm, f.name).ndim:
            setattr(lstm_grads, f.name, arr[0])
    return Gradients(lstm=lstm_grads, head=head_grads)


def adam_init(model: SequenceModel) -> AdamState:
    zeros_like = {name: np.zeros_like(arr) for name, arr in param_items(model.lstm, model.head)}
    return AdamState(
        step=0,
        m=zeros_like,
        v={name: np.zeros_like(arr) for name, arr in param_items(model.lstm, model.head)},
    )


def adam_step(state: AdamState, model: SequenceModel, grads: Gradients, lr: float):
    """One bias-corrected Adam update, applied to the model in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    params = dict(param_items(model.lstm, model.head))
    for name, g in param_items(grads.lstm, grads.head):
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


def init_model(n: int, places: int, d_s: int, hidden: int = 512, seed: int = 0) -> SequenceModel:
    """Seeded uniform init in [-1/sqrt(H), 1/sqrt(H)]; forget bias fixed at +1."""
    rng = RandomStream(seed)
    model = _init_from_stream(rng, n, places, d_s, hidden)
    model.rng_seed = seed
    return model


def _init_from_stream(rng: RandomStream, n: int, places: int, d_s: int, hidden: int) -> SequenceModel:
    scale = 1.0 / np.sqrt(hidden)
    lstm = LstmParams.zeros(n + 2, hidden)
    head = HeadParams.zeros(hidden, places)
    for name, arr in param_items(lstm, head):
        if name == "b_f":
            arr[...] = 1.0  # constant; consumes no draws
        else:
            arr[...] = rng.uniform(-scale, scale, arr.size).reshape(arr.shape)
    return SequenceModel(lstm=lstm, head=head, d_s=d_s, n=n)


def _window_inputs(traversal: Traversal) -> np.ndarray:
    """Per-frame model inputs: descriptor then position, as float64."""
    return np.concatenate(
        [traversal.descriptors.data.astype(np.float64), traversal.positions.data],
        axis=1,
    )


def _grad_norm(grads: Gradients) -> float:
    total = 0.0
    for _, g in param_items(grads.lstm, grads.head):
        total += float((g * g).sum())
    return float(np.sqrt(total))


def train(
    reference: Traversal,
    d_s: int,
    epochs: int,
    lr: float = 0.01,
    rng_seed: int = 0,
    hidden: int = 512,
    batch_size: int = 32,
    clip_norm: float | None = None,
) -> tuple[SequenceModel, TrainingCurves]:
    """Train the matcher on one traversal's overlapping windows.

    Deterministic given (data, rng_seed, config): initialization and epoch
    shuffles all come from one seeded stream. Loss/accuracy fields of the
    curves are bitwise reproducible; wall seconds are not.
    """
    desc = reference.descriptors
    if not desc.normalized:
        raise ValueError("reference descriptors must be L2-normalized before training")
    windows = make_windows(reference, d_s)
    rng = RandomStream(rng_seed)
    model = _init_from_stream(rng, desc.dim, reference.frame_count, d_s, hidden)
    model.rng_seed = rng_seed
    state = adam_init(model)
    inputs = _window_inputs(reference)
    starts = np.array([w.start for w in windows])
    labels = np.array([w.label for w in windows])
    offsets = np.arange(d_s)
    curves = TrainingCurves(losses=[], accuracies=[], seconds=[])
    order = np.arange(len(windows))
    for epoch in range(epochs):
        tick = time.perf_counter()
        rng.shuffle(order)
        loss_sum = 0.0
        hits = 0
        for bi, lo in enumerate(range(0, len(order), batch_size)):
            idx = order[lo : lo + batch_size]
            xs = inputs[starts[idx][:, None] + offsets].transpose(1, 0, 2)
            ys = labels[idx]
            h0 = np.zeros((len(idx), hidden))
            h_last, cache = _forward_core(model.lstm, xs, h0, h0.copy())
            logits = h_last @ model.head.w.T + model.head.b
            losses, dlogits = _cross_entropy_batch(logits, ys)
            if not np.isfinite(losses).all():
                raise TrainingError(epoch, bi)
            loss_sum += float(losses.sum())
            hits += int((np.argmax(logits, axis=1) == ys).sum())
            dlogits /= len(idx)
            head_grads = HeadParams(w=dlogits.T @ h_last, b=dlogits.sum(axis=0))
            dh = dlogits @ model.head.w
            lstm_grads = _backward_core(model.lstm, cache, dh)
            grads = Gradients(lstm=lstm_grads, head=head_grads)
            if clip_norm is not None:
                norm = _grad_norm(grads)
                if norm > clip_norm:
                    factor = clip_norm / norm
                    for _, g in param_items(grads.lstm, grads.head):
                        g *= factor
            adam_step(state, model, grads, lr)
        curves.losses.append(loss_sum / len(order))
        curves.accuracies.append(hits / len(order))
        curves.seconds.append(time.perf_counter() - tick)
    return model, curves


def infer(model: SequenceModel, query: Traversal, d_s: int | None = None):
    """Activity profile (softmax over reference places) per query frame.

    Frame q's window covers frames [q - d_s + 1, q]; indices before the
    first frame repeat frame 0. Returns the Q x N activity matrix and a
    MatchReport whose score is the winning probability (higher is better).
    """
    if d_s is None:
        d_s = model.d_s
    if d_s < 1:
        raise ValueError("d_s must be >= 1")
    if query.descriptors.dim != model.n:
        raise ValueError(
            f"query descriptor dim {query.descriptors.dim} != model dim {model.n}"
        )
    lstm = model.lstm
    hidden = lstm.hidden_dim
    frames = _window_inputs(query)
    n_query = frames.shape[0]
    # input-side gate projections depend only on the frame, so compute them
    # once and gather per step; gate order i, f, g, o
    wx = np.vstack([lstm.w_ii, lstm.w_if, lstm.w_ig, lstm.w_io])
    wh = np.vstack([lstm.w_hi, lstm.w_hf, lstm.w_hg, lstm.w_ho])
    bias = np.concatenate([lstm.b_i, lstm.b_f, lstm.b_g, lstm.b_o])
    proj = frames @ wx.T
    activity = np.empty((n_query, model.places))
    for lo in range(0, n_query, 1024):
        qs = np.arange(lo, min(lo + 1024, n_query))
        h = np.zeros((len(qs), hidden))
        c = np.zeros((len(qs), hidden))
        for k in range(d_s):
            src = np.maximum(qs - d_s + 1 + k, 0)
            pre = proj[src] + h @ wh.T + bias
            gi = _sigmoid(pre[:, :hidden])
            gf = _sigmoid(pre[:, hidden : 2 * hidden])
            gg = np.tanh(pre[:, 2 * hidden : 3 * hidden])
            go = _sigmoid(pre[:, 3 * hidden :])
            c = gf * c + gi * gg
            h = go * np.tanh(c)
        logits = h @ model.head.w.T + model.head.b
        shifted = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(shifted)
        activity[qs] = ez / ez.sum(axis=1, keepdims=True)
    best = np.argmax(activity, axis=1)
    report = MatchReport(
        query_indices=np.arange(n_query),
        best_ref=best,
        scores=activity[np.arange(n_query), best],
        higher_is_better=True,
    )
    return activity, report


def save_checkpoint(model: SequenceModel, path) -> None:
    """Write the SPM1 container (float32 tensors, declaration order)."""
    header = SPM1_MAGIC + np.array(
        [model.input_dim, model.lstm.hidden_dim, model.places, model.d_s], dtype="<u4"
    ).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        for _, arr in param_items(model.lstm, model.head):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> SequenceModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != SPM1_MAGIC:
        raise ValueError(f"{path}: not an SPM1 checkpoint")
    m, hidden, places, d_s = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=4, offset=4))
    if m < 3 or hidden < 1 or places < 1 or d_s < 1:
        raise ValueError(f"{path}: implausible SPM1 header ({m}, {hidden}, {places}, {d_s})")
    lstm = LstmParams.zeros(m, hidden)
    head = HeadParams.zeros(hidden, places)
    offset = 20
    for name, arr in param_items(lstm, head):
        count = arr.size
        if offset + 4 * count > len(blob):
            raise ValueError(f"{path}: checkpoint truncated in tensor {name}")
        vals = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        arr[...] = vals.astype(np.float64).reshape(arr.shape)
        offset += 4 * count
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return SequenceModel(lstm=lstm, head=head, d_s=d_s, n=m - 2, rng_seed=None)


def save_curves_csv(curves: TrainingCurves, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,loss,accuracy,seconds\n")
        for i, (loss, acc, sec) in enumerate(
            zip(curves.losses, curves.accuracies, curves.seconds)
        ):
            fh.write(f"{i},{loss!r},{acc!r},{sec!r}\n")


def load_curves_csv(path) -> TrainingCurves:
    curves = TrainingCurves(losses=[], accuracies=[], seconds=[])
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "epoch,loss,accuracy,seconds":
            raise ValueError(f"{path}: unexpected curves header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            curves.losses.append(float(parts[1]))
            curves.accuracies.append(float(parts[2]))
            curves.seconds.append(float(parts[3]))
    return curves
