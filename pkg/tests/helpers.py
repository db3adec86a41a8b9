import numpy as np


def agreement_fixture(counts, seed=0):
    """Labels plus two prediction vectors realising (both, only_a, only_b, neither) correct counts."""
    rng = np.random.default_rng(seed)
    n = sum(counts)
    y = rng.integers(0, 7, n)
    wrong = (y + 1 + rng.integers(0, 6, n)) % 7
    pattern = np.repeat([(1, 1), (1, 0), (0, 1), (0, 0)], counts, axis=0).astype(bool)[rng.permutation(n)]
    a = np.where(pattern[:, 0], y, wrong)
    b = np.where(pattern[:, 1], y, wrong)
    return a, b, y
