"""Convolutional coding, soft demapping, and the packing path."""
import itertools

import mpmath
import numpy as np
import pytest

from oampmmv.coding import (
    ConvolutionalCode,
    approx_bit_llr,
    average_abs_llr,
    bits_to_symbols,
    default_code,
    exact_bit_llr,
    symbols_to_bits,
)
from oampmmv.exceptions import ConfigurationError
from oampmmv.model import make_constellation

QPSK = make_constellation(4, "qpsk")
CODE = default_code()


def _reference_encode(info, generators, constraint_length):
    # independent direct-convolution encoder: output j at step i xors the
    # input bits selected by generator j's taps, most recent bit first
    m = constraint_length - 1
    stream = np.concatenate([np.asarray(info, dtype=np.int64), np.zeros(m, dtype=np.int64)])
    out = []
    for i in range(len(stream)):
        for g in generators:
            acc = 0
            for d in range(constraint_length):
                tap = (g >> (constraint_length - 1 - d)) & 1
                if tap and i - d >= 0:
                    acc ^= int(stream[i - d])
            out.append(acc)
    return np.array(out, dtype=np.int8)


def test_code_geometry():
    assert CODE.rate == pytest.approx(1 / 3)
    assert CODE.tail_bits == 2
    assert CODE.coded_length(8) == 30
    assert CODE.info_length(102) == 32  # fits 51 QPSK symbols
    with pytest.raises(ConfigurationError):
        CODE.info_length(6)


def test_all_zero_input_gives_all_zero_codeword():
    out = CODE.encode(np.zeros(10, dtype=np.int8))
    assert np.all(out == 0)


def test_encoder_matches_reference_implementation():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        info = rng.integers(0, 2, size=n)
        got = CODE.encode(info)
        want = _reference_encode(info, CODE.generators, CODE.constraint_length)
        np.testing.assert_array_equal(got, want)
    # a longer-memory code through the same table builder
    other = ConvolutionalCode(generators=(0o15, 0o17), constraint_length=4)
    for _ in range(20):
        info = rng.integers(0, 2, size=int(rng.integers(1, 30)))
        np.testing.assert_array_equal(
            other.encode(info), _reference_encode(info, (0o15, 0o17), 4)
        )


def test_minimum_distance_is_eight():
    weights = []
    for bits in itertools.product((0, 1), repeat=6):
        if any(bits):
            weights.append(int(CODE.encode(np.array(bits)).sum()))
    assert min(weights) == 8


def test_decode_inverts_encode_on_clean_llrs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        info = rng.integers(0, 2, size=int(rng.integers(1, 60)))
        coded = CODE.encode(info)
        llr = np.where(coded == 0, 5.0, -5.0)
        np.testing.assert_array_equal(CODE.decode(llr), info)


def test_decode_corrects_any_single_flip():
    rng = np.random.default_rng(2)
    for n_info in (4, 8, 12):
        for _ in range(4):
            info = rng.integers(0, 2, size=n_info)
            coded = CODE.encode(info)
            for pos in range(len(coded)):
                llr = np.where(coded == 0, 4.0, -4.0)
                llr[pos] = -llr[pos]
                np.testing.assert_array_equal(CODE.decode(llr), info)


def test_decode_corrects_three_flips():
    # minimum distance 8 guarantees correction of up to three hard flips
    rng = np.random.default_rng(3)
    info = rng.integers(0, 2, size=16)
    coded = CODE.encode(info)
    for _ in range(30):
        llr = np.where(coded == 0, 4.0, -4.0).astype(float)
        flips = rng.choice(len(coded), size=3, replace=False)
        llr[flips] = -llr[flips]
        np.testing.assert_array_equal(CODE.decode(llr), info)


def test_llr_zero_on_decision_boundary():
    out = exact_bit_llr(np.array([0.0 + 0.0j]), 0.5, QPSK)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)
    np.testing.assert_allclose(approx_bit_llr(np.array([0.0 + 0.0j]), 0.5, QPSK), 0.0, atol=1e-12)


def test_llr_scales_inversely_with_noise_variance():
    rng = np.random.default_rng(4)
    est = rng.normal(size=7) + 1j * rng.normal(size=7)
    for fn in (exact_bit_llr, approx_bit_llr):
        a = fn(est, 0.4, QPSK)
        b = fn(est, 0.2, QPSK)
        np.testing.assert_allclose(b, 2.0 * a, rtol=1e-9)


def test_exact_llr_matches_high_precision_sum():
    mpmath.mp.dps = 40
    rng = np.random.default_rng(5)
    est = rng.normal(size=12) + 1j * rng.normal(size=12)
    sigma2 = 0.3
    got = exact_bit_llr(est, sigma2, QPSK)
    for i, e in enumerate(est):
        for b in range(2):
            zero, one = QPSK.bit_subsets(b)
            num = sum(mpmath.exp(-abs(e - QPSK.points[l]) ** 2 / sigma2) for l in zero)
            den = sum(mpmath.exp(-abs(e - QPSK.points[l]) ** 2 / sigma2) for l in one)
            assert got[i, b] == pytest.approx(float(mpmath.log(num / den)), rel=1e-9)


def test_qpsk_max_log_equals_exact():
    # per-axis Gray labels make the shared cross-axis factor cancel exactly
    rng = np.random.default_rng(6)
    est = rng.normal(size=200) + 1j * rng.normal(size=200)
    np.testing.assert_allclose(
        approx_bit_llr(est, 0.7, QPSK), exact_bit_llr(est, 0.7, QPSK), rtol=1e-9, atol=1e-9
    )


def test_sign_agreement_on_many_points():
    rng = np.random.default_rng(7)
    est = rng.normal(scale=1.5, size=10_000) + 1j * rng.normal(scale=1.5, size=10_000)
    a = approx_bit_llr(est, 0.5, QPSK)
    e = exact_bit_llr(est, 0.5, QPSK)
    assert np.all(np.sign(a) == np.sign(e))


def test_average_abs_llr_values():
    llr = np.array([[[2.0, -4.0]]])  # one symbol, two bits
    assert average_abs_llr(llr)[0] == pytest.approx(3.0)
    assert average_abs_llr(np.zeros((5, 3, 2)))[0] == 0.0
    rng = np.random.default_rng(8)
    x = rng.normal(size=(6, 4, 2))
    np.testing.assert_allclose(average_abs_llr(x), np.abs(x).mean(axis=(1, 2)), rtol=1e-13)


def test_packing_roundtrip():
    rng = np.random.default_rng(9)
    for T in (6, 10, 51):
        n_info = CODE.info_length(T * 2)
        info = rng.integers(0, 2, size=n_info)
        symbols = bits_to_symbols(CODE.encode(info), T, QPSK)
        assert symbols.shape == (T,)
        back = symbols_to_bits(symbols, 0.1, QPSK, CODE)
        np.testing.assert_array_equal(back, info)


def test_packing_reconstruction_matches_reference_encoder():
    rng = np.random.default_rng(10)
    T = 12
    n_info = CODE.info_length(T * 2)
    info = rng.integers(0, 2, size=n_info)
    ref_coded = _reference_encode(info, CODE.generators, CODE.constraint_length)
    padded = np.zeros(T * 2, dtype=np.int8)
    padded[: len(ref_coded)] = ref_coded
    want = QPSK.points[QPSK.index_of_bits(padded)]
    got = bits_to_symbols(CODE.encode(info), T, QPSK)
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_packing_rejects_overflow():
    with pytest.raises(ConfigurationError):
        bits_to_symbols(np.zeros(21, dtype=np.int8), 10, QPSK)
