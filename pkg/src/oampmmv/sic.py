"""Successive interference cancellation around the OAMP detectors.

Each round runs a detector on the current residual observation, ranks the
newly detected devices by decoding reliability, decodes the most reliable
ones, re-encodes and re-modulates their bits, and subtracts their exact
contribution from the observation. Rounds stop once the detector finds no
more than one round's worth of new devices (they are all taken) or the round
budget is exhausted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import (
    ConvolutionalCode,
    approx_bit_llr,
    average_abs_llr,
    bits_to_symbols,
    symbols_to_bits,
)
from .detectors import DetectionResult, DetectorConfig, detect_asl, detect_ssl
from .exceptions import ConfigurationError
from .model import Constellation, SpreadingMatrix

__all__ = ["SICConfig", "SICRound", "SICResult", "sic_detect", "decode_support"]

_DETECTORS = {"ssl": detect_ssl, "asl": detect_asl}


@dataclass(frozen=True)
class SICConfig:
    """Round structure of the cancellation loop."""

    n_per_round: int = 10
    max_rounds: int = 10
    detector: str = "ssl"
    detector_config: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass(eq=False)
class SICRound:
    """Diagnostics of one cancellation round."""

    cancelled: np.ndarray
    n_new_detected: int
    sigma2: float
    residual_energy: float


@dataclass(eq=False)
class SICResult:
    """Cumulative output of the cancellation loop."""

    kappa: np.ndarray  # sorted indices of all cancelled devices
    decoded: dict  # device index -> decoded information bits
    indicators: np.ndarray  # (K,) 0/1 from kappa
    rounds: list
    x_cancelled: np.ndarray  # (K, T) re-modulated signal of cancelled devices


def decode_support(
    result: DetectionResult,
    constellation: Constellation,
    code: ConvolutionalCode,
) -> dict:
    """Decode every detected device of a plain detector run."""
    out = {}
    for k in result.support:
        out[int(k)] = symbols_to_bits(
            result.x_hat[k], max(result.sigma2, 1e-30), constellation, code
        )
    return out


def sic_detect(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    code: ConvolutionalCode,
    config: SICConfig = SICConfig(),
) -> SICResult:
    """Run the round-based cancellation loop; see module docstring."""
    if config.detector not in _DETECTORS:
        raise ConfigurationError(f"unknown detector '{config.detector}' for cancellation")
    if config.n_per_round < 1 or config.max_rounds < 1:
        raise ConfigurationError("round sizes must be positive")
    detector = _DETECTORS[config.detector]
    K = codes.n_codes
    T = Y.shape[1]

    Y_res = Y.copy()
    cancelled_mask = np.zeros(K, dtype=bool)
    decoded: dict = {}
    rounds: list[SICRound] = []
    x_cancelled = np.zeros((K, T), dtype=np.complex128)

    flag = True
    round_counter = 1
    while flag:
        res = detector(Y_res, codes, constellation, config.detector_config)
        new = res.support[~cancelled_mask[res.support]]
        if len(new) == 0:
            rounds.append(
                SICRound(
                    cancelled=np.empty(0, dtype=np.int64),
                    n_new_detected=0,
                    sigma2=res.sigma2,
                    residual_energy=float(np.sum(np.abs(Y_res) ** 2)),
                )
            )
            break
        if len(new) <= config.n_per_round:
            chosen = new
            flag = False
        else:
            rel = average_abs_llr(
                approx_bit_llr(res.x_hat[new], max(res.sigma2, 1e-30), constellation)
            )
            order = np.argsort(-rel, kind="stable")
            chosen = new[order[: config.n_per_round]]

        X_round = np.zeros((K, T), dtype=np.complex128)
        for k in chosen:
            bits = symbols_to_bits(
                res.x_hat[k], max(res.sigma2, 1e-30), constellation, code
            )
            decoded[int(k)] = bits
            X_round[k] = bits_to_symbols(code.encode(bits), T, constellation)
        cancelled_mask[chosen] = True
        x_cancelled += X_round
        Y_res = Y_res - codes.forward(X_round)
        rounds.append(
            SICRound(
                cancelled=np.sort(np.asarray(chosen, dtype=np.int64)),
                n_new_detected=len(new),
                sigma2=res.sigma2,
                residual_energy=float(np.sum(np.abs(Y_res) ** 2)),
            )
        )
        if flag:
            round_counter += 1
            if round_counter > config.max_rounds:
                flag = False

    kappa = np.flatnonzero(cancelled_mask).astype(np.int64)
    indicators = cancelled_mask.astype(np.int8)
    return SICResult(
        kappa=kappa,
        decoded=decoded,
        indicators=indicators,
        rounds=rounds,
        x_cancelled=x_cancelled,
    )
