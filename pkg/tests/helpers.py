"""Small constructors shared by the test modules."""

import numpy as np

from dntk.tangent import RAW_PARAMS, GradientFeatures, one_hot


def feats_from_blocks(blocks, labels=None, dim_kind=RAW_PARAMS):
    """GradientFeatures from an explicit (C, n, D) array of gradient rows."""
    per_class = np.asarray(blocks, dtype=np.float64)
    c, n, _ = per_class.shape
    if labels is None:
        labels = np.zeros(n, dtype=int)
    soft = one_hot(np.asarray(labels), c)
    logits = soft + 0.1  # stand-in logits, distinct from the labels
    return GradientFeatures(per_class, soft, dim_kind, logits)


def clustered_rows(sizes, dim, seed, noise=0.05, scale=1.0):
    """Rows grouped around mutually orthogonal block centers.

    Returns (rows, assignments): gram of rows is near block-diagonal.
    """
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    assert dim >= len(sizes)
    centers = np.zeros((len(sizes), dim))
    for b in range(len(sizes)):
        centers[b, b] = scale
    rows = np.zeros((n, dim))
    assign = np.zeros(n, dtype=int)
    start = 0
    for b, sz in enumerate(sizes):
        rows[start:start + sz] = centers[b] + noise * rng.normal(size=(sz, dim))
        assign[start:start + sz] = b
        start += sz
    return rows, assign
