"""State evolution: iteration-by-iteration prediction of detector MSE/BER.

The coupled system is replaced by per-sample scalar channels r = x + sqrt(tau) z
whose variance follows the linear-stage recursion, while the denoiser and the
sparsity-ratio refits run exactly the shared implementations used by the
detectors. Averaging over many independent samples predicts the mean-square
error trajectory and, by hard-demapping the final estimates, the bit error
rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .detectors import em_update_sparsity_asl, em_update_sparsity_ssl
from .exceptions import ConfigurationError
from .kernels import expit_stable, likelihood_stats, logit_clipped
from .model import Scenario, derive_rng, sample_activity

__all__ = ["SEConfig", "SETrace", "se_run"]


@dataclass(frozen=True)
class SEConfig:
    """Sampling setup for one state-evolution run."""

    scenario: Scenario
    detector: str = "asl"  # "ssl" or "asl"
    n_samples: int = 1000
    max_iters: int = 50
    lambda_init: float | None = None
    chunk: int = 64


@dataclass(eq=False)
class SETrace:
    """Predicted trajectories, one entry per iteration."""

    theta: np.ndarray  # (iters,) predicted MSE of the denoised mean
    v: np.ndarray  # (n_samples, iters) per-sample interface variance
    predicted_ber: np.ndarray  # (iters,)
    predicted_adep: np.ndarray  # (iters,)

    @property
    def theta_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.theta)


def se_run(config: SEConfig) -> SETrace:
    """Run the sampled recursion; see module docstring."""
    sc = config.scenario
    if config.detector not in ("ssl", "asl"):
        raise ConfigurationError(f"unknown detector '{config.detector}' for state evolution")
    K, Ka, M, T = sc.n_devices, sc.n_active, sc.n_obs, sc.n_symbols
    cons = sc.constellation
    L = cons.order
    bits = cons.bits_per_symbol
    sigma2 = sc.noise_var
    lam0 = config.lambda_init
    if lam0 is None:
        lam0 = core.sparsity_init(M, K)
    points = cons.points
    points_abs2 = points.real**2 + points.imag**2
    n = config.n_samples
    iters = config.max_iters

    theta_num = np.zeros(iters)
    err_bits = np.zeros(iters)
    act_err = np.zeros(iters)
    v_all = np.empty((n, iters))

    for start in range(0, n, config.chunk):
        idx = np.arange(start, min(start + config.chunk, n))
        nc = len(idx)
        X = np.empty((K, nc, T), dtype=np.complex128)
        Z = np.empty((K, nc, T), dtype=np.complex128)
        true_idx = np.zeros((K, nc, T), dtype=np.int64)
        active = np.zeros((K, nc), dtype=bool)
        for j, sample in enumerate(idx):
            rng = derive_rng(sc.master_seed, "se-sample", int(sample))
            act = sample_activity(K, Ka, rng)
            sym = rng.integers(0, L, size=(Ka, T))
            x = np.zeros((K, T), dtype=np.complex128)
            x[act.support] = points[sym]
            X[:, j] = x
            true_idx[act.support, j] = sym
            active[act.support, j] = True
            Z[:, j] = (
                rng.standard_normal((K, T)) + 1j * rng.standard_normal((K, T))
            ) / np.sqrt(2.0)

        v = np.ones(nc)
        lam_kc = np.full((K, nc), lam0)
        denom_bits = max(Ka * T * bits, 1)
        for it in range(iters):
            tau = np.maximum((K - M) / M * v + (K / M) * sigma2, core.TAU_FLOOR)
            r = X + np.sqrt(tau)[None, :, None] * Z
            r2 = r.reshape(K, nc * T)
            tau_cols = np.repeat(tau, T)
            evidence, sym_mean, sym_pow = likelihood_stats(r2, tau_cols, points, points_abs2)
            evidence = evidence.reshape(K, nc, T)
            if config.detector == "ssl":
                pi = expit_stable(logit_clipped(lam_kc)[:, :, None] + evidence)
                lam_kc = em_update_sparsity_ssl(pi)
            else:
                total = evidence.sum(axis=2, keepdims=True)
                mix_logit = logit_clipped(lam_kc)[:, :, None] + (total - evidence)
                pi = expit_stable(mix_logit + evidence)
                if T > 1:
                    lam_kc = em_update_sparsity_asl(expit_stable(mix_logit))
                else:
                    lam_kc = em_update_sparsity_ssl(pi)
            pi2 = pi.reshape(K, nc * T)
            mu = pi2 * sym_mean
            gamma = np.maximum(pi2 * sym_pow - (mu.real**2 + mu.imag**2), 0.0)
            u, _ = core.nonlinear_estimate(mu, r2, gamma.mean(axis=0), tau_cols)

            mu3 = mu.reshape(K, nc, T)
            err_mu = mu3 - X
            theta_num[it] += np.sum(err_mu.real**2 + err_mu.imag**2)
            err_u = u.reshape(K, nc, T) - X
            v = np.mean(err_u.real**2 + err_u.imag**2, axis=(0, 2))
            v_all[idx, it] = v

            detected = lam_kc > 0.5
            act_err[it] += np.sum(detected != active)
            both = detected & active
            hard = cons.demap(mu3)
            match = (cons.bit_map[hard] == cons.bit_map[true_idx]).sum(axis=-1)
            n_good = np.where(both[:, :, None], match, 0).sum(axis=(0, 2))
            err_bits[it] += np.sum(1.0 - n_good / denom_bits)

    theta = theta_num / (K * T * n)
    return SETrace(
        theta=theta,
        v=v_all,
        predicted_ber=err_bits / n,
        predicted_adep=act_err / (K * n),
    )
