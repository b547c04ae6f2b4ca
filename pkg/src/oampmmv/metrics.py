"""Error metrics and interval estimates for detector evaluation."""
from __future__ import annotations

import numpy as np

from .model import Constellation

__all__ = [
    "compute_adep",
    "count_bit_errors",
    "compute_ber",
    "compute_mse",
    "wilson_interval",
]


def compute_adep(indicators_hat: np.ndarray, indicators_true: np.ndarray) -> float:
    """Activity error probability: mean absolute indicator difference."""
    a = np.asarray(indicators_hat, dtype=np.float64)
    b = np.asarray(indicators_true, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("indicator shapes differ")
    return float(np.mean(np.abs(a - b)))


def count_bit_errors(
    x_hat: np.ndarray,
    symbol_indices_true: np.ndarray,
    support_true: np.ndarray,
    indicators_hat: np.ndarray,
    constellation: Constellation,
):
    """Hard-demap bit accounting for uncoded transmission.

    Only devices that are both truly active and detected contribute correct
    bits; the denominator always counts every bit of every truly active
    device, so missed devices count as all-wrong. Returns (n_wrong, n_total).
    """
    support_true = np.asarray(support_true, dtype=np.int64)
    T = x_hat.shape[1]
    bits = constellation.bits_per_symbol
    n_total = len(support_true) * T * bits
    if n_total == 0:
        return 0, 0
    detected = np.asarray(indicators_hat).astype(bool)[support_true]
    hard = constellation.demap(x_hat[support_true])
    match = (constellation.bit_map[hard] == constellation.bit_map[symbol_indices_true]).sum(axis=-1)
    n_correct = int(np.where(detected[:, None], match, 0).sum())
    return n_total - n_correct, n_total


def compute_ber(n_wrong: int, n_total: int) -> float:
    """Bit error rate; zero active devices transmit no bits and score 0."""
    if n_total == 0:
        return 0.0
    return n_wrong / n_total


def compute_mse(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    """Mean squared entry error over the whole slot."""
    d = np.asarray(x_hat) - np.asarray(x_true)
    return float(np.mean(d.real**2 + d.imag**2))


def wilson_interval(n_errors: int, n_total: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial rate, default 95% coverage.

    Returns (low, high); (0, 0) observations give the full interval.
    """
    if n_total == 0:
        return 0.0, 1.0
    p = n_errors / n_total
    z2 = z * z
    denom = 1.0 + z2 / n_total
    centre = (p + z2 / (2 * n_total)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / n_total + z2 / (4 * n_total * n_total))
    return max(centre - half, 0.0), min(centre + half, 1.0)
