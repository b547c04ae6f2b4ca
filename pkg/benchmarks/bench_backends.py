"""Benchmark the hot kernels: pure NumPy vs Numba backend.

Measures likelihood_stats and viterbi_decode in isolation and one full
detector run per backend, and cross-checks that both backends produce the
same numbers.
"""

from __future__ import annotations

import time

import numpy as np

from oampmmv.coding import default_code
from oampmmv.detectors import detect_ssl
from oampmmv.kernels import HAVE_NUMBA, likelihood_stats, set_backend, viterbi_decode
from oampmmv.model import Scenario, derive_rng, generate_slot


def benchmark_operation(name: str, numpy_fn, numba_fn, iterations: int = 50):
    """Time one operation under both backends.

    :param name: printed label
    :param numpy_fn: closure running the pure NumPy path
    :param numba_fn: closure running the Numba path
    :param iterations: timed repetitions after one warmup call
    :returns: (numpy_time, numba_time, speedup) in seconds per call
    """
    numpy_fn()
    numba_fn()

    start = time.perf_counter()
    for _ in range(iterations):
        numpy_fn()
    numpy_time = (time.perf_counter() - start) / iterations

    start = time.perf_counter()
    for _ in range(iterations):
        numba_fn()
    numba_time = (time.perf_counter() - start) / iterations

    speedup = numpy_time / numba_time
    print(f"\n{name}:")
    print(f"  NumPy:  {numpy_time * 1000:.3f} ms")
    print(f"  Numba:  {numba_time * 1000:.3f} ms")
    print(f"  Speedup: {speedup:.2f}x")
    return numpy_time, numba_time, speedup


def main():
    print("=" * 70)
    print("Kernel backend benchmark (numpy vs numba)")
    print("=" * 70)
    if not HAVE_NUMBA:
        print("numba is not importable here; nothing to compare")
        return

    rng = np.random.default_rng(0)
    scenario = Scenario()
    points = scenario.constellation.points

    results = []
    for K, T in ((500, 10), (500, 50), (2000, 25)):
        r = (rng.normal(size=(K, T)) + 1j * rng.normal(size=(K, T))) / np.sqrt(2)
        tau = np.full(T, 0.3)

        out_np = likelihood_stats(r, tau, points, backend="numpy")
        out_nb = likelihood_stats(r, tau, points, backend="numba")
        agreement = max(
            float(np.max(np.abs(a - b))) for a, b in zip(out_np, out_nb)
        )
        print(f"\nposterior statistics grid K={K} T={T} "
              f"(backend agreement {agreement:.1e})")
        _, _, speedup = benchmark_operation(
            f"likelihood_stats {K}x{T}",
            lambda: likelihood_stats(r, tau, points, backend="numpy"),
            lambda: likelihood_stats(r, tau, points, backend="numba"),
        )
        results.append(speedup)

    code = default_code()
    llr = rng.normal(size=(50, 102)) * 3.0

    def decode_all(backend):
        return [
            viterbi_decode(row, code.next_state, code.out_bits, code.memory, backend=backend)
            for row in llr
        ]

    exact = all(np.array_equal(a, b) for a, b in zip(decode_all("numpy"), decode_all("numba")))
    print(f"\nsequence decoder, 50 codewords of 102 bits (bit-exact: {exact})")
    _, _, speedup = benchmark_operation(
        "viterbi_decode 50x102",
        lambda: decode_all("numpy"),
        lambda: decode_all("numba"),
        iterations=20,
    )
    results.append(speedup)

    codes = scenario.spreading_matrix()
    slot = generate_slot(scenario, codes, derive_rng(0, "slot", 0))

    def run_detector():
        return detect_ssl(slot.Y, codes, scenario.constellation)

    set_backend("numpy")
    run_detector()
    start = time.perf_counter()
    for _ in range(10):
        run_detector()
    t_np = (time.perf_counter() - start) / 10
    set_backend("numba")
    run_detector()
    start = time.perf_counter()
    for _ in range(10):
        run_detector()
    t_nb = (time.perf_counter() - start) / 10
    set_backend("auto")
    print("\nfull detector run (K=500, M=70, T=10):")
    print(f"  NumPy:  {t_np * 1000:.3f} ms")
    print(f"  Numba:  {t_nb * 1000:.3f} ms")
    print(f"  Speedup: {t_np / t_nb:.2f}x")
    results.append(t_np / t_nb)

    print(f"\n{'-' * 70}")
    print(f"Average speedup: {sum(results) / len(results):.2f}x "
          f"(min {min(results):.2f}x, max {max(results):.2f}x)")


if __name__ == "__main__":
    main()
