"""Reference (numpy) versions of the compiled kernels."""
from math import comb

import numpy as np


def _popcounts(n_sub: int) -> np.ndarray:
    masks = np.arange(n_sub, dtype=np.int64)
    counts = np.zeros(n_sub, dtype=np.int64)
    while masks.any():
        counts += masks & 1
        masks >>= 1
    return counts


def shapley_from_table(table, n_players, normalize):
    table = np.ascontiguousarray(table, dtype=np.float64)
    n_sub = 1 << n_players
    if table.shape[0] != n_sub:
        raise ValueError("table must have 2**n_players rows")
    weight = np.array([1.0 / comb(n_players - 1, s) for s in range(max(n_players, 1))])
    if normalize:
        weight /= n_players
    sizes = _popcounts(n_sub)
    masks = np.arange(n_sub, dtype=np.int64)
    out = np.zeros((n_players, table.shape[1]), dtype=np.float64)
    for i in range(n_players):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        gain = table[without | bit] - table[without]
        out[i] = weight[sizes[without]] @ gain
    return out


def confusion_from_scores(scores, labels, n_classes):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != scores.shape[0]:
        raise ValueError("scores and labels disagree on sample count")
    if scores.shape[1] != n_classes:
        raise ValueError("score width must equal n_classes")
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise ValueError(f"label {labels[bad][0]} outside [0, {n_classes})")
    pred = np.argmax(scores, axis=1)  # first max wins
    flat = np.bincount(labels * n_classes + pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes).astype(np.int64)
