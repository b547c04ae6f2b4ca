"""Reference detectors used for comparison curves.

* oracle_ls: least squares on the true support (perfect activity knowledge).
* gene_aided_oamp: the OAMP loop with the nonzero probabilities pinned to
  the true activity and the true noise variance, i.e. only data detection.
* amp_mmv: plain AMP with the same spike-plus-constellation denoiser. The
  residual feedback uses the unnormalised adjoint, which on this row-sampled
  unitary sensing matrix leaves AMP far behind the OAMP variants; it is kept
  as the conventional point of comparison and failures are surfaced, never
  masked.
"""
from __future__ import annotations

import numpy as np

from .detectors import (
    DetectionResult,
    DetectorConfig,
    DetectorTrace,
    _run_oamp,
    em_update_noise,
    em_update_sparsity_ssl,
    init_hyperparams,
)
from .exceptions import DegenerateSupportError, NumericalFailure
from .kernels import expit_stable, likelihood_stats, logit_clipped
from .model import Constellation, SpreadingMatrix

__all__ = ["oracle_ls", "gene_aided_oamp", "amp_mmv"]

_TAU_FLOOR = 1e-30


def oracle_ls(Y: np.ndarray, codes: SpreadingMatrix, support: np.ndarray) -> np.ndarray:
    """Least-squares signal estimate given the true support.

    Returns the full (K, T) estimate with zero rows off support. The support
    must not exceed the number of observations and the corresponding columns
    must be independent.
    """
    support = np.asarray(support, dtype=np.int64)
    K = codes.n_codes
    T = Y.shape[1]
    X_hat = np.zeros((K, T), dtype=np.complex128)
    if len(support) == 0:
        return X_hat
    if len(support) > codes.n_obs:
        raise DegenerateSupportError(
            f"support of size {len(support)} exceeds {codes.n_obs} observations"
        )
    sub = codes.entries[:, support]
    sol, _, rank, _ = np.linalg.lstsq(sub, Y, rcond=None)
    if rank < len(support):
        raise DegenerateSupportError("support columns are rank deficient")
    X_hat[support] = sol
    return X_hat


def gene_aided_oamp(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    support: np.ndarray,
    noise_var: float,
    config: DetectorConfig = DetectorConfig(),
) -> DetectionResult:
    """OAMP data detection with genie activity and noise knowledge."""
    K = codes.n_codes
    T = Y.shape[1]
    pinned = np.zeros((K, T))
    pinned[np.asarray(support, dtype=np.int64)] = 1.0
    return _run_oamp(
        Y,
        codes,
        constellation,
        config,
        structure="simplified",
        name="gene-aided",
        pinned_pi=pinned,
        pinned_sigma2=noise_var,
    )


def amp_mmv(
    Y: np.ndarray,
    codes: SpreadingMatrix,
    constellation: Constellation,
    config: DetectorConfig = DetectorConfig(),
) -> DetectionResult:
    """AMP with an Onsager-corrected residual and the shared MMSE denoiser.

    Per iteration and column: z = y - S u + (K/M) z_prev <d>, r = u + S^H z,
    where <d> is the mean denoiser derivative gamma_bar / tau and tau is
    estimated from the corrected residual energy. Sparsity ratio and noise
    variance are refitted as in the simplified-structure detector. Non-finite
    iterates raise NumericalFailure with the iteration index.
    """
    M, T = Y.shape
    K = codes.n_codes
    points = constellation.points
    points_abs2 = points.real**2 + points.imag**2

    lam0, sigma2 = init_hyperparams(Y, codes, config)
    lam_kt = np.full((K, T), lam0)
    u = np.zeros((K, T), dtype=np.complex128)
    z = np.zeros((M, T), dtype=np.complex128)
    divergence = np.zeros(T)
    mu_prev = None

    tr_tau = []
    tr_v = []
    tr_sigma2 = []
    tr_lam = []
    history = [] if config.record_history else None

    n_done = 0
    pi = lam_kt
    for it in range(1, config.max_iters + 1):
        z = Y - codes.forward(u) + (K / M) * z * divergence[None, :]
        r = u + codes.adjoint(z)
        tau = np.maximum(np.sum(z.real**2 + z.imag**2, axis=0) / M, _TAU_FLOOR)

        evidence, sym_mean, sym_pow = likelihood_stats(r, tau, points, points_abs2)
        pi = expit_stable(logit_clipped(lam_kt) + evidence)
        mu = pi * sym_mean
        gamma = np.maximum(pi * sym_pow - (mu.real**2 + mu.imag**2), 0.0)
        gamma_bar = gamma.mean(axis=0)
        divergence = gamma_bar / tau
        u = mu

        lam_k = em_update_sparsity_ssl(pi)
        lam_kt = np.broadcast_to(lam_k[:, None], (K, T))
        sigma2 = em_update_noise(Y, codes, mu, gamma_bar)

        tr_tau.append(tau.copy())
        tr_v.append(gamma_bar.copy())
        tr_sigma2.append(sigma2)
        tr_lam.append(float(lam_k.mean()))
        if history is not None:
            history.append(mu.copy())

        if not (np.all(np.isfinite(mu)) and np.isfinite(sigma2) and np.all(np.isfinite(tau))):
            raise NumericalFailure(f"amp-mmv: non-finite update at iteration {it}", iteration=it)
        n_done = it
        if mu_prev is not None and config.tol > 0:
            delta = mu - mu_prev
            if np.mean(delta.real**2 + delta.imag**2) < config.tol:
                mu_prev = mu
                break
        mu_prev = mu

    score = lam_k
    indicators = (score > 0.5).astype(np.int8)
    trace = DetectorTrace(
        tau=np.array(tr_tau),
        v=np.array(tr_v),
        sigma2=np.array(tr_sigma2),
        mean_lambda=np.array(tr_lam),
        mu_history=history,
    )
    return DetectionResult(
        x_hat=mu,
        sparsity_ratio=score.astype(np.float64).copy(),
        support=np.flatnonzero(indicators).astype(np.int64),
        indicators=indicators,
        iterations=n_done,
        sigma2=float(sigma2),
        trace=trace,
        detector="amp-mmv",
    )
