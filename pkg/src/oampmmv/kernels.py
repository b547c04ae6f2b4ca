"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import from the OAMPMMV_BACKEND environment
variable ("numba", "numpy", or "auto", the default) and can be switched at
runtime with set_backend(). Both implementations compute the same formulas;
they differ only in summation order, so results agree to float rounding.
"""
from __future__ import annotations

import os

import numpy as np

from .exceptions import ConfigurationError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install-time choice
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


__all__ = [
    "HAVE_NUMBA",
    "active_backend",
    "set_backend",
    "likelihood_stats",
    "viterbi_decode",
    "expit_stable",
    "logit_clipped",
]

_NEG_INF = -1e300


def expit_stable(x: np.ndarray) -> np.ndarray:
    """Logistic function 1 / (1 + exp(-x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit_clipped(p: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """log(p / (1-p)) with p clipped into [eps, 1-eps] first."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# symbol likelihood statistics
#
# For each entry r with effective noise tau, the candidate symbols a_l get
# weights q_l = exp(-(|a_l|^2 - 2 Re(a_l^* r)) / tau). Returned are
#   evidence  = log((1/L) sum_l q_l)
#   sym_mean  = sum_l a_l q_l / sum_l q_l
#   sym_pow   = sum_l |a_l|^2 q_l / sum_l q_l
# computed with a per-entry max shift so any tau > 0 is safe.


def _likelihood_stats_numpy(r, tau, points, points_abs2):
    s = -(
        points_abs2[None, None, :]
        - 2.0 * (r.real[..., None] * points.real + r.imag[..., None] * points.imag)
    ) / tau[None, :, None]
    m = s.max(axis=-1)
    w = np.exp(s - m[..., None])
    sw = w.sum(axis=-1)
    evidence = m + np.log(sw / len(points))
    sym_mean = (w * points).sum(axis=-1) / sw
    sym_pow = (w * points_abs2).sum(axis=-1) / sw
    return evidence, sym_mean, sym_pow


@njit(cache=True)
def _likelihood_stats_numba(r, tau, points, points_abs2):  # pragma: no cover - jit
    K, C = r.shape
    L = points.shape[0]
    evidence = np.empty((K, C))
    sym_mean = np.empty((K, C), np.complex128)
    sym_pow = np.empty((K, C))
    for c in range(C):
        inv_tau = 1.0 / tau[c]
        for k in range(K):
            rr = r[k, c].real
            ri = r[k, c].imag
            m = _NEG_INF
            for l in range(L):
                s = -(points_abs2[l] - 2.0 * (points[l].real * rr + points[l].imag * ri)) * inv_tau
                if s > m:
                    m = s
            sw = 0.0
            swa = 0.0 + 0.0j
            swa2 = 0.0
            for l in range(L):
                s = -(points_abs2[l] - 2.0 * (points[l].real * rr + points[l].imag * ri)) * inv_tau
                w = np.exp(s - m)
                sw += w
                swa += w * points[l]
                swa2 += w * points_abs2[l]
            evidence[k, c] = m + np.log(sw / L)
            sym_mean[k, c] = swa / sw
            sym_pow[k, c] = swa2 / sw
    return evidence, sym_mean, sym_pow


# ---------------------------------------------------------------------------
# soft Viterbi decoding (max-log) for terminated convolutional codes
#
# llr holds one log-likelihood ratio ln(P(bit=0)/P(bit=1)) per coded bit.
# next_state[s, b] and out_bits[s, b, j] describe the trellis; the last
# n_tail steps force input bit 0. Returns all input bits including the tail.


def _viterbi_numpy(llr, next_state, out_bits, n_tail):
    n_states, _, n_out = out_bits.shape
    steps = llr.shape[0] // n_out
    metric = np.full(n_states, _NEG_INF)
    metric[0] = 0.0
    prev = np.zeros((steps, n_states), dtype=np.int64)
    bit = np.zeros((steps, n_states), dtype=np.int8)
    signs = 1.0 - 2.0 * out_bits  # (S, 2, n_out)
    for t in range(steps):
        lam = llr[t * n_out : (t + 1) * n_out]
        branch = signs @ lam  # (S, 2)
        n_in = 1 if t >= steps - n_tail else 2
        new = np.full(n_states, _NEG_INF)
        for b in range(n_in):
            cand = metric + branch[:, b]
            ns = next_state[:, b]
            for s in range(n_states):
                if cand[s] > new[ns[s]]:
                    new[ns[s]] = cand[s]
                    prev[t, ns[s]] = s
                    bit[t, ns[s]] = b
        metric = new
    bits = np.empty(steps, dtype=np.int8)
    state = 0
    for t in range(steps - 1, -1, -1):
        bits[t] = bit[t, state]
        state = prev[t, state]
    return bits


@njit(cache=True)
def _viterbi_numba(llr, next_state, out_bits, n_tail):  # pragma: no cover - jit
    n_states = out_bits.shape[0]
    n_out = out_bits.shape[2]
    steps = llr.shape[0] // n_out
    metric = np.full(n_states, _NEG_INF)
    metric[0] = 0.0
    new = np.empty(n_states)
    prev = np.zeros((steps, n_states), np.int64)
    bit = np.zeros((steps, n_states), np.int8)
    for t in range(steps):
        base = t * n_out
        n_in = 1 if t >= steps - n_tail else 2
        for s in range(n_states):
            new[s] = _NEG_INF
        for s in range(n_states):
            ms = metric[s]
            if ms <= _NEG_INF:
                continue
            for b in range(n_in):
                bm = 0.0
                for j in range(n_out):
                    if out_bits[s, b, j] == 0:
                        bm += llr[base + j]
                    else:
                        bm -= llr[base + j]
                cand = ms + bm
                ns = next_state[s, b]
                if cand > new[ns]:
                    new[ns] = cand
                    prev[t, ns] = s
                    bit[t, ns] = b
        for s in range(n_states):
            metric[s] = new[s]
    bits = np.empty(steps, np.int8)
    state = 0
    for t in range(steps - 1, -1, -1):
        bits[t] = bit[t, state]
        state = prev[t, state]
    return bits


# ---------------------------------------------------------------------------
# backend dispatch

_IMPLS = {
    "numpy": {
        "likelihood_stats": _likelihood_stats_numpy,
        "viterbi": _viterbi_numpy,
    },
    "numba": {
        "likelihood_stats": _likelihood_stats_numba,
        "viterbi": _viterbi_numba,
    },
}

_backend = "numpy"


def set_backend(name: str) -> str:
    """Select "numba", "numpy", or "auto". Returns the active backend."""
    global _backend
    name = name.lower()
    if name == "auto":
        name = "numba" if HAVE_NUMBA else "numpy"
    if name not in _IMPLS:
        raise ConfigurationError(f"unknown backend '{name}'")
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigurationError("numba backend requested but numba is not importable")
    _backend = name
    return _backend


def active_backend() -> str:
    return _backend


set_backend(os.environ.get("OAMPMMV_BACKEND", "auto"))


def likelihood_stats(r, tau, points, points_abs2=None, backend=None):
    """Per-entry evidence and posterior symbol statistics, see module note.

    r: (K, C) complex, tau: (C,) positive, points: (L,) complex.
    """
    r = np.ascontiguousarray(r, dtype=np.complex128)
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.complex128)
    if points_abs2 is None:
        points_abs2 = points.real**2 + points.imag**2
    points_abs2 = np.ascontiguousarray(points_abs2, dtype=np.float64)
    impl = _IMPLS[backend or _backend]["likelihood_stats"]
    return impl(r, tau, points, points_abs2)


def viterbi_decode(llr, next_state, out_bits, n_tail, backend=None):
    """Max-log sequence decode; returns all trellis input bits (with tail)."""
    llr = np.ascontiguousarray(llr, dtype=np.float64)
    next_state = np.ascontiguousarray(next_state, dtype=np.int64)
    out_bits = np.ascontiguousarray(out_bits, dtype=np.int8)
    impl = _IMPLS[backend or _backend]["viterbi"]
    return impl(llr, next_state, out_bits, n_tail)
