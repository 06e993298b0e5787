'''Exhaustive split enumeration for regression-tree nodes.'''
import numpy as np


def split_bruteforce(X, r, rows, min_leaf: int):
    """Tries every midpoint between consecutive distinct values of every feature.

    The gain of a split is S_L^2 / n_L + S_R^2 / n_R - S^2 / n over the
    residuals r of `rows`, with each side summed directly.

    Returns:
        (gain, feature, threshold) of the best split with at least `min_leaf`
        rows per side and positive gain, or None.
    """
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    rows = np.asarray(rows)
    sub_x, sub_r = X[rows], r[rows]
    n = len(rows)
    total = sub_r.sum()
    parent = total * total / n
    best = None
    for j in range(X.shape[1]):
        values = np.unique(sub_x[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            if thr >= hi:
                thr = lo
            left = sub_x[:, j] <= thr
            n_left = int(left.sum())
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            s_left = sub_r[left].sum()
            s_right = sub_r[~left].sum()
            gain = s_left ** 2 / n_left + s_right ** 2 / n_right - parent
            if gain > 1e-12 and (best is None or gain > best[0]):
                best = (float(gain), j, float(thr))
    return best
