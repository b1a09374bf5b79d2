"""Independent reference implementations used to cross-check the library.

Everything here is written in the most literal form possible (scalar loops,
explicit formulas) and deliberately shares no code with the package.
"""

import numpy as np

from seqplace.matching_classic import SeqSlamConfig
from seqplace.neural import SequenceModel, cross_entropy_loss, model_backward, model_forward, param_items


def seqslam_oracle(data: np.ndarray, cfg: SeqSlamConfig):
    """Exhaustive constant-velocity line enumeration, scalar accumulation."""
    n_query, n_ref = data.shape
    count = int(round((cfg.v_max - cfg.v_min) / cfg.v_step)) + 1
    vels = [cfg.v_min + cfg.v_step * i for i in range(count)]
    vels = [v for v in vels if v <= cfg.v_max + 1e-9]
    row_max = data.max(axis=1)
    best_ref = []
    best_score = []
    for q in range(n_query):
        length = min(cfg.d_s, q + 1)
        winner = None
        winner_score = None
        for r in range(n_ref):
            per_ref = None
            for v in vels:
                total = 0.0
                for k in range(length):
                    col = round(r - v * k)  # bankers rounding, same as rint
                    if 0 <= col < n_ref:
                        total = total + data[q - k, col]
                    else:
                        total = total + row_max[q - k]
                score = total / length
                if per_ref is None or score < per_ref:
                    per_ref = score
            if winner_score is None or per_ref < winner_score:
                winner_score = per_ref
                winner = r
        best_ref.append(winner)
        best_score.append(winner_score)
    return np.array(best_ref), np.array(best_score)


def _loss_of(model: SequenceModel, window: np.ndarray, label: int) -> float:
    loss, _ = cross_entropy_loss(model_forward(model, window), label)
    return loss


def max_gradient_error(model: SequenceModel, window: np.ndarray, label: int, step: float = 1e-4) -> float:
    """Worst relative disagreement between analytic and central-difference
    gradients over every parameter element (absolute floor 1e-6)."""
    _, cache = model_forward(model, window, with_cache=True)
    grads = model_backward(model, window, label, cache)
    analytic = dict(param_items(grads.lstm, grads.head))
    worst = 0.0
    for name, arr in param_items(model.lstm, model.head):
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = _loss_of(model, window, label)
            flat[i] = keep - step
            down = _loss_of(model, window, label)
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            g = analytic[name].reshape(-1)[i]
            err = abs(fd - g) / max(abs(fd), abs(g), 1e-6)
            worst = max(worst, err)
    return worst
