"""Signal model: constellations, spreading codes, and slot generation.

A slot carries T symbols from each of K devices, of which Ka are active.
Active devices keep the same support across all T columns of the K x T signal
matrix X; the base station observes Y = S X + W through an M x K spreading
matrix S built from M rows of a unitary DFT.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, SingularEstimateError

__all__ = [
    "Constellation",
    "make_constellation",
    "SpreadingMatrix",
    "build_partial_dft",
    "effective_sensing_matrix",
    "ChannelModel",
    "Scenario",
    "ActivityPattern",
    "SlotData",
    "sample_activity",
    "generate_slot",
    "derive_rng",
    "scenario_from_config",
]


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    """Counter-based RNG split: one master seed plus a purpose path.

    String keys are hashed with crc32 (stable across processes), integer keys
    pass through, so streams for (slot 3, "noise") and (slot 4, "noise") are
    independent and order-free.
    """
    ints = [int(master_seed)]
    for k in keys:
        if isinstance(k, str):
            ints.append(zlib.crc32(k.encode()))
        else:
            ints.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(ints))


# ---------------------------------------------------------------------------
# constellation


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-average-energy complex constellation with Gray bit labels.

    points[l] is the l-th symbol and bit_map[l] its label. bits_per_symbol
    label groups are Gray coded per axis, so neighbouring symbols differ in
    one bit.
    """

    points: np.ndarray
    bit_map: np.ndarray  # (L, bits_per_symbol) of 0/1
    scheme: str

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_map.shape[1]

    def bit_subsets(self, b: int):
        """Indices of symbols whose b-th label bit is 0, resp. 1."""
        zero = np.flatnonzero(self.bit_map[:, b] == 0)
        one = np.flatnonzero(self.bit_map[:, b] == 1)
        return zero, one

    def index_of_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map groups of bits_per_symbol bits to symbol indices."""
        bits = np.asarray(bits).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        packed = (bits * weights).sum(axis=1)
        return self._lookup[packed]

    def demap(self, values: np.ndarray) -> np.ndarray:
        """Nearest-symbol indices for an array of complex values."""
        v = np.asarray(values)
        d2 = np.abs(v[..., None] - self.points) ** 2
        return d2.argmin(axis=-1)

    def __post_init__(self):
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        packed = (self.bit_map * weights).sum(axis=1)
        lookup = np.empty(self.order, dtype=np.int64)
        lookup[packed] = np.arange(self.order)
        object.__setattr__(self, "_lookup", lookup)


def _gray(n: int) -> np.ndarray:
    codes = np.arange(n)
    return codes ^ (codes >> 1)


def make_constellation(order: int, scheme: str = "qpsk") -> Constellation:
    """Build a Gray-labelled constellation normalised to unit average energy.

    scheme "qpsk" requires order 4; scheme "qam" accepts square orders
    (4, 16, 64, ...).
    """
    scheme = scheme.lower()
    if order < 2 or order & (order - 1):
        raise ConfigurationError(f"constellation order must be a power of two, got {order}")
    if scheme == "qpsk":
        if order != 4:
            raise ConfigurationError("qpsk requires order 4")
        # bit 0 selects the real sign, bit 1 the imaginary sign
        bit_map = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int8)
        re = 1 - 2 * bit_map[:, 0]
        im = 1 - 2 * bit_map[:, 1]
        points = (re + 1j * im).astype(np.complex128)
    elif scheme == "qam":
        side = int(round(np.sqrt(order)))
        if side * side != order:
            raise ConfigurationError(f"qam requires a square order, got {order}")
        bits_axis = side.bit_length() - 1
        gray = _gray(side)
        # place gray code g at amplitude level rank(g); both axes identical
        levels = np.empty(side)
        levels[gray] = 2 * np.arange(side) - (side - 1)
        nbits = 2 * bits_axis
        labels = np.arange(order)
        hi = labels >> bits_axis
        lo = labels & (side - 1)
        points = (levels[hi] + 1j * levels[lo]).astype(np.complex128)
        bit_map = (
            (labels[:, None] >> np.arange(nbits - 1, -1, -1)) & 1
        ).astype(np.int8)
    else:
        raise ConfigurationError(f"unknown modulation scheme '{scheme}'")
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    return Constellation(points=points, bit_map=bit_map, scheme=scheme)


# ---------------------------------------------------------------------------
# spreading matrix


@dataclass(eq=False)
class SpreadingMatrix:
    """M x K sensing operator.

    When selected_rows is set the operator is rows of a unitary K-point DFT
    and forward/adjoint go through the FFT; otherwise the dense entries are
    used directly.
    """

    entries: np.ndarray
    selected_rows: np.ndarray | None = None

    @property
    def n_obs(self) -> int:
        return self.entries.shape[0]

    @property
    def n_codes(self) -> int:
        return self.entries.shape[1]

    def forward(self, X: np.ndarray) -> np.ndarray:
        """S @ X for X of shape (K,) or (K, T)."""
        if self.selected_rows is None:
            return self.entries @ X
        K = self.n_codes
        F = np.fft.fft(X, axis=0)
        return F[self.selected_rows] / np.sqrt(K)

    def adjoint(self, Y: np.ndarray) -> np.ndarray:
        """S^H @ Y for Y of shape (M,) or (M, T)."""
        if self.selected_rows is None:
            return self.entries.conj().T @ Y
        K = self.n_codes
        Z = np.zeros((K,) + Y.shape[1:], dtype=np.complex128)
        Z[self.selected_rows] = Y
        return np.fft.ifft(Z, axis=0) * np.sqrt(K)


def build_partial_dft(n_codes: int, n_obs: int, rng: np.random.Generator) -> SpreadingMatrix:
    """Select n_obs distinct rows of the unitary n_codes-point DFT.

    Every entry has magnitude 1/sqrt(n_codes) and the rows are orthonormal
    (S S^H = I).
    """
    if not 1 <= n_obs <= n_codes:
        raise ConfigurationError(f"need 1 <= n_obs <= n_codes, got {n_obs}, {n_codes}")
    rows = np.sort(rng.choice(n_codes, size=n_obs, replace=False))
    k = np.arange(n_codes)
    entries = np.exp(-2j * np.pi * np.outer(rows, k) / n_codes) / np.sqrt(n_codes)
    return SpreadingMatrix(entries=entries, selected_rows=rows)


@dataclass(eq=False)
class ChannelModel:
    """True and estimated per-observation channel gains, shape (M, K)."""

    gains: np.ndarray
    estimates: np.ndarray


def effective_sensing_matrix(codes: SpreadingMatrix, channel: ChannelModel | None) -> SpreadingMatrix:
    """Fold channel pre-equalisation into the spreading matrix.

    Entry (m, k) is scaled by gains[m, k] / estimates[m, k]. With perfect
    estimates the original operator is returned unchanged (keeping its FFT
    fast path).
    """
    if channel is None:
        return codes
    if channel.estimates.shape != codes.entries.shape or channel.gains.shape != codes.entries.shape:
        raise ConfigurationError("channel shape must match the spreading matrix")
    if np.any(channel.estimates == 0):
        raise SingularEstimateError("channel estimate contains a zero entry")
    ratio = channel.gains / channel.estimates
    if np.allclose(ratio, 1.0, rtol=0.0, atol=0.0):
        return codes
    return SpreadingMatrix(entries=codes.entries * ratio, selected_rows=None)


# ---------------------------------------------------------------------------
# scenario and slots


@dataclass(frozen=True, eq=False)
class Scenario:
    """Dimensions and operating point for one simulated system."""

    n_devices: int = 500
    n_active: int = 50
    n_obs: int = 70
    n_symbols: int = 10
    snr_db: float = 10.0
    constellation: Constellation = field(default_factory=lambda: make_constellation(4, "qpsk"))
    master_seed: int = 0

    def __post_init__(self):
        if self.n_active > self.n_devices:
            raise ConfigurationError("n_active cannot exceed n_devices")
        if not 1 <= self.n_obs <= self.n_devices:
            raise ConfigurationError("need 1 <= n_obs <= n_devices")
        if self.n_symbols < 1:
            raise ConfigurationError("need at least one symbol per slot")

    @property
    def noise_var(self) -> float:
        """Noise variance such that E||S x_t||^2 / E||w_t||^2 hits the SNR.

        The received signal power is n_active * n_obs / n_devices for a
        unit-energy constellation, independent of which rows were selected,
        which gives noise_var = n_active / (n_devices * snr). Zero active
        devices make the reference power zero; the slot is then noiseless.
        """
        if self.n_active == 0:
            return 0.0
        return self.n_active / (self.n_devices * 10.0 ** (self.snr_db / 10.0))

    def spreading_matrix(self) -> SpreadingMatrix:
        return build_partial_dft(
            self.n_devices, self.n_obs, derive_rng(self.master_seed, "spreading")
        )


@dataclass(eq=False)
class ActivityPattern:
    """Support of one slot: sorted device indices plus a 0/1 indicator."""

    support: np.ndarray
    indicators: np.ndarray

    @property
    def n_active(self) -> int:
        return len(self.support)


@dataclass(eq=False)
class SlotData:
    """One transmitted slot and its observation."""

    X: np.ndarray  # (K, T) signal, zero rows off support
    Y: np.ndarray  # (M, T) observation
    W: np.ndarray  # (M, T) noise realisation
    activity: ActivityPattern
    symbol_indices: np.ndarray  # (n_active, T) into the constellation


def sample_activity(n_devices: int, n_active: int, rng: np.random.Generator) -> ActivityPattern:
    """Draw exactly n_active distinct active devices."""
    if n_active > n_devices:
        raise ConfigurationError("n_active cannot exceed n_devices")
    support = np.sort(rng.choice(n_devices, size=n_active, replace=False))
    indicators = np.zeros(n_devices, dtype=np.int8)
    indicators[support] = 1
    return ActivityPattern(support=support, indicators=indicators)


def generate_slot(
    scenario: Scenario,
    codes: SpreadingMatrix,
    rng: np.random.Generator,
    symbol_indices: np.ndarray | None = None,
) -> SlotData:
    """Draw one slot: activity, symbols, and noise, in that fixed order.

    symbol_indices, when given, overrides the uniform symbol draw (used for
    coded transmissions); shape (n_active, T).
    """
    K, T = scenario.n_devices, scenario.n_symbols
    cons = scenario.constellation
    activity = sample_activity(K, scenario.n_active, rng)
    if symbol_indices is None:
        symbol_indices = rng.integers(0, cons.order, size=(activity.n_active, T))
    else:
        symbol_indices = np.asarray(symbol_indices)
        if symbol_indices.shape != (activity.n_active, T):
            raise ConfigurationError("symbol_indices shape must be (n_active, n_symbols)")
    X = np.zeros((K, T), dtype=np.complex128)
    X[activity.support] = cons.points[symbol_indices]
    sigma2 = scenario.noise_var
    W = (rng.standard_normal((codes.n_obs, T)) + 1j * rng.standard_normal((codes.n_obs, T)))
    W *= np.sqrt(sigma2 / 2.0)
    Y = codes.forward(X) + W
    return SlotData(X=X, Y=Y, W=W, activity=activity, symbol_indices=symbol_indices)


# ---------------------------------------------------------------------------
# config files

_MODULATIONS = {
    "qpsk": (4, "qpsk"),
    "qam4": (4, "qam"),
    "qam16": (16, "qam"),
    "16qam": (16, "qam"),
    "qam64": (64, "qam"),
    "64qam": (64, "qam"),
}

_SCENARIO_KEYS = {"K", "Ka", "M", "T", "snr_db", "modulation", "seed"}


def scenario_from_config(path: str | None = None, overrides: dict | None = None) -> Scenario:
    """Load a Scenario from a key=value file.

    Recognised keys: K, Ka, M, T, snr_db, modulation, seed. Lines starting
    with '#' are comments. overrides (same keys) win over file values. With
    path=None the scenario is built from overrides and defaults alone.
    """
    values: dict[str, str] = {}
    if path is not None:
        values.update(_read_config_file(path))
    if overrides:
        for key, val in overrides.items():
            if key not in _SCENARIO_KEYS:
                raise ConfigurationError(f"unknown scenario key '{key}'")
            values[key] = str(val)
    try:
        modulation = values.get("modulation", "qpsk").lower()
        if modulation not in _MODULATIONS:
            raise ConfigurationError(f"unknown modulation '{modulation}'")
        order, scheme = _MODULATIONS[modulation]
        return Scenario(
            n_devices=int(values.get("K", 500)),
            n_active=int(values.get("Ka", 50)),
            n_obs=int(values.get("M", 70)),
            n_symbols=int(values.get("T", 10)),
            snr_db=float(values.get("snr_db", 10.0)),
            constellation=make_constellation(order, scheme),
            master_seed=int(values.get("seed", 0)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad scenario value: {exc}") from exc


def _read_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got '{raw.strip()}'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _SCENARIO_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key '{key}'")
            values[key] = val
    return values
