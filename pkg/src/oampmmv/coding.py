"""Per-device channel coding and soft demapping.

A slot carries n_symbols * bits_per_symbol coded bits per active device. The
default code is a terminated rate-1/3 convolutional code with constraint
length 3 (generators 7, 7, 5 octal), decoded with a max-log soft sequence
decoder; encoder tails and padding map any slot length onto the codeword.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError
from .kernels import viterbi_decode
from .model import Constellation

__all__ = [
    "ConvolutionalCode",
    "default_code",
    "exact_bit_llr",
    "approx_bit_llr",
    "average_abs_llr",
    "bits_to_symbols",
    "symbols_to_bits",
]


@dataclass(eq=False)
class ConvolutionalCode:
    """Terminated feedforward convolutional code.

    generators are octal-style integers over the current input bit (MSB) and
    the memory; constraint_length counts the input bit. encode appends
    memory zero tail bits, so the coded length for n info bits is
    (n + memory) * len(generators).
    """

    generators: tuple = (0o7, 0o7, 0o5)
    constraint_length: int = 3

    def __post_init__(self):
        m = self.constraint_length - 1
        if m < 1:
            raise ConfigurationError("constraint length must be at least 2")
        n_states = 1 << m
        n_out = len(self.generators)
        next_state = np.empty((n_states, 2), dtype=np.int64)
        out_bits = np.empty((n_states, 2, n_out), dtype=np.int8)
        for state in range(n_states):
            for b in (0, 1):
                register = (b << m) | state
                for j, g in enumerate(self.generators):
                    out_bits[state, b, j] = bin(register & g).count("1") & 1
                next_state[state, b] = register >> 1
        self.memory = m
        self.n_states = n_states
        self.n_out = n_out
        self.next_state = next_state
        self.out_bits = out_bits

    @property
    def rate(self) -> float:
        return 1.0 / self.n_out

    @property
    def tail_bits(self) -> int:
        return self.memory

    def coded_length(self, n_info: int) -> int:
        return (n_info + self.memory) * self.n_out

    def info_length(self, n_coded_bits: int) -> int:
        """Largest info length whose codeword fits in n_coded_bits."""
        n = n_coded_bits // self.n_out - self.memory
        if n < 1:
            raise ConfigurationError(
                f"{n_coded_bits} coded bits cannot carry this code (tail {self.memory})"
            )
        return n

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        info_bits = np.asarray(info_bits, dtype=np.int8)
        stream = np.concatenate([info_bits, np.zeros(self.memory, dtype=np.int8)])
        out = np.empty(len(stream) * self.n_out, dtype=np.int8)
        state = 0
        for i, b in enumerate(stream):
            out[i * self.n_out : (i + 1) * self.n_out] = self.out_bits[state, b]
            state = self.next_state[state, b]
        return out

    def decode(self, llr: np.ndarray) -> np.ndarray:
        """Max-log soft decode; llr is ln(P(bit=0)/P(bit=1)) per coded bit."""
        llr = np.asarray(llr, dtype=np.float64)
        if llr.size % self.n_out:
            raise ConfigurationError("llr length must be a multiple of the output count")
        n_info = llr.size // self.n_out - self.memory
        if n_info < 1:
            raise ConfigurationError("llr sequence shorter than one information bit")
        bits = viterbi_decode(llr, self.next_state, self.out_bits, self.memory)
        return np.asarray(bits[:n_info], dtype=np.int8)


def default_code() -> ConvolutionalCode:
    return ConvolutionalCode()


# ---------------------------------------------------------------------------
# soft demapping


def exact_bit_llr(estimates: np.ndarray, noise_var: float, constellation: Constellation) -> np.ndarray:
    """Log-likelihood ratio ln(P(b=0)/P(b=1)) per estimate and label bit.

    Treats each estimate as the true symbol plus complex Gaussian noise of
    total variance noise_var and sums the likelihoods over each bit's symbol
    subset. Output shape is estimates.shape + (bits_per_symbol,).
    """
    est = np.asarray(estimates, dtype=np.complex128)
    d2 = np.abs(est[..., None] - constellation.points) ** 2
    metric = -d2 / noise_var
    m = metric.max(axis=-1, keepdims=True)
    w = np.exp(metric - m)
    out = np.empty(est.shape + (constellation.bits_per_symbol,))
    for b in range(constellation.bits_per_symbol):
        zero, one = constellation.bit_subsets(b)
        out[..., b] = np.log(w[..., zero].sum(axis=-1)) - np.log(w[..., one].sum(axis=-1))
    return out


def approx_bit_llr(estimates: np.ndarray, noise_var: float, constellation: Constellation) -> np.ndarray:
    """Max-log approximation of exact_bit_llr using nearest subset symbols."""
    est = np.asarray(estimates, dtype=np.complex128)
    d2 = np.abs(est[..., None] - constellation.points) ** 2
    out = np.empty(est.shape + (constellation.bits_per_symbol,))
    for b in range(constellation.bits_per_symbol):
        zero, one = constellation.bit_subsets(b)
        out[..., b] = -(d2[..., zero].min(axis=-1) - d2[..., one].min(axis=-1)) / noise_var
    return out


def average_abs_llr(llr: np.ndarray) -> np.ndarray:
    """Reliability score per device: mean |llr| over symbols and bits.

    llr has shape (..., T, bits_per_symbol); the trailing two axes are
    averaged.
    """
    a = np.abs(np.asarray(llr))
    return a.mean(axis=(-2, -1))


# ---------------------------------------------------------------------------
# bit/symbol packing for one device row


def bits_to_symbols(coded_bits: np.ndarray, n_symbols: int, constellation: Constellation) -> np.ndarray:
    """Map a coded bit string onto n_symbols constellation symbols.

    The string is zero padded up to n_symbols * bits_per_symbol.
    """
    bits = np.asarray(coded_bits, dtype=np.int8)
    capacity = n_symbols * constellation.bits_per_symbol
    if len(bits) > capacity:
        raise ConfigurationError(f"{len(bits)} coded bits exceed capacity {capacity}")
    padded = np.zeros(capacity, dtype=np.int8)
    padded[: len(bits)] = bits
    idx = constellation.index_of_bits(padded)
    return constellation.points[idx]


def symbols_to_bits(
    estimates: np.ndarray,
    noise_var: float,
    constellation: Constellation,
    code: ConvolutionalCode,
) -> np.ndarray:
    """Soft-demap one device row and decode its information bits.

    Padding positions beyond the codeword are dropped before decoding.
    """
    llr = approx_bit_llr(estimates, noise_var, constellation).reshape(-1)
    n_info = code.info_length(llr.size)
    return code.decode(llr[: code.coded_length(n_info)])
