'''Quadratic-time KS statistic.

Every distinct score is tried as a threshold and both class ECDFs are
recounted from scratch, so the result depends on nothing but the definition.
'''
import numpy as np


def ks_bruteforce(scores, y) -> float:
    """max over distinct thresholds t of |F_pos(t) - F_neg(t)| with F(t) = P(score <= t).

    Args:
        scores: Real scores.
        y: Labels in {0, 1}; both classes must be present.

    Returns:
        float: The KS distance in [0, 1].
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes are required")
    best = 0.0
    for t in np.unique(scores):
        below = scores <= t
        c_pos = np.int64((below & (y == 1)).sum())
        c_neg = np.int64((below & (y == 0)).sum())
        gap = float(np.abs(c_pos / n_pos - c_neg / n_neg))
        if gap > best:
            best = gap
    return best
