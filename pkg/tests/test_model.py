"""System model: constellations, spreading codes, slot generation, config."""
import io
import os

import numpy as np
import pytest

from oampmmv.exceptions import ConfigurationError, SingularEstimateError
from oampmmv.model import (
    ChannelModel,
    Scenario,
    build_partial_dft,
    derive_rng,
    effective_sensing_matrix,
    generate_slot,
    make_constellation,
    sample_activity,
    scenario_from_config,
)


def test_qpsk_points_and_energy():
    cons = make_constellation(4, "qpsk")
    expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    assert sorted(np.round(cons.points, 12), key=lambda z: (z.real, z.imag)) == sorted(
        np.round(expected, 12), key=lambda z: (z.real, z.imag)
    )
    assert np.mean(np.abs(cons.points) ** 2) == pytest.approx(1.0, abs=1e-14)


def test_qpsk_bit_sets_split_evenly():
    cons = make_constellation(4, "qpsk")
    for b in range(2):
        zeros, ones = cons.bit_subsets(b)
        assert len(zeros) == 2 and len(ones) == 2
        both = np.concatenate([zeros, ones])
        assert np.array_equal(np.sort(both), np.arange(4))


def test_qam16_unit_energy_direct_sum():
    cons = make_constellation(16, "qam")
    # independent recomputation of the average symbol energy
    total = 0.0
    for p in cons.points:
        total += p.real * p.real + p.imag * p.imag
    assert total / 16 == pytest.approx(1.0, abs=1e-12)


def test_gray_labels_differ_in_one_bit_for_neighbours():
    cons = make_constellation(16, "qam")
    pts = cons.points
    labels = cons.bit_map
    # nearest neighbours on the grid differ in exactly one bit
    dmin = np.min([np.abs(a - b) for i, a in enumerate(pts) for b in pts[i + 1 :]])
    for i, a in enumerate(pts):
        for j, b in enumerate(pts):
            if i < j and abs(a - b) < dmin * 1.001:
                assert np.sum(labels[i] != labels[j]) == 1


def test_bit_roundtrip_all_orders():
    for order, scheme in ((4, "qpsk"), (16, "qam"), (64, "qam")):
        cons = make_constellation(order, scheme)
        idx = np.arange(order)
        bits = cons.bit_map[idx].reshape(-1)
        back = cons.index_of_bits(bits)
        assert np.array_equal(back, idx)


def test_full_dft_is_unitary():
    codes = build_partial_dft(4, 4, np.random.default_rng(0))
    S = codes.entries
    np.testing.assert_allclose(S @ S.conj().T, np.eye(4), atol=1e-12)


def test_partial_dft_row_count_and_magnitude():
    codes = build_partial_dft(500, 70, np.random.default_rng(3))
    assert codes.entries.shape == (70, 500)
    assert len(set(codes.selected_rows.tolist())) == 70
    np.testing.assert_allclose(np.abs(codes.entries), 1 / np.sqrt(500), atol=1e-14)


def test_partial_dft_gram_identity_oracle():
    # explicit O(M^2 K) Gram product against the orthogonality claim
    for seed in range(10):
        codes = build_partial_dft(8, 3, np.random.default_rng(seed))
        S = codes.entries
        gram = np.empty((3, 3), dtype=complex)
        for a in range(3):
            for b in range(3):
                gram[a, b] = np.sum(S[a] * np.conj(S[b]))
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-12)


def test_partial_dft_column_norms():
    codes = build_partial_dft(500, 70, np.random.default_rng(1))
    norms = np.sum(np.abs(codes.entries) ** 2, axis=0)
    np.testing.assert_allclose(norms, 70 / 500, atol=1e-12)


def test_fft_operator_matches_dense_matrix():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        codes = build_partial_dft(16, 5, rng)
        X = rng.normal(size=(16, 3)) + 1j * rng.normal(size=(16, 3))
        np.testing.assert_allclose(codes.forward(X), codes.entries @ X, atol=1e-12)
        Y = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            codes.adjoint(Y), codes.entries.conj().T @ Y, atol=1e-12
        )


def test_effective_matrix_identity_when_estimates_exact():
    rng = np.random.default_rng(7)
    codes = build_partial_dft(12, 6, rng)
    h = rng.normal(size=(6, 12)) + 1j * rng.normal(size=(6, 12))
    chan = ChannelModel(gains=h, estimates=h.copy())
    out = effective_sensing_matrix(codes, chan)
    np.testing.assert_allclose(out.entries, codes.entries, atol=1e-12)


def test_effective_matrix_column_scaling():
    rng = np.random.default_rng(8)
    codes = build_partial_dft(6, 4, rng)
    chan = ChannelModel(
        gains=np.full((4, 6), 2.0 + 0j), estimates=np.ones((4, 6), dtype=complex)
    )
    out = effective_sensing_matrix(codes, chan)
    np.testing.assert_allclose(out.entries, 2.0 * codes.entries, atol=1e-12)


def test_effective_matrix_per_device_diagonal_oracle():
    # per-device diagonal subchannels scale column k elementwise
    for seed in range(6):
        rng = np.random.default_rng(seed)
        codes = build_partial_dft(10, 5, rng)
        h = rng.normal(size=(5, 10)) + 1j * rng.normal(size=(5, 10))
        hhat = rng.normal(size=(5, 10)) + 1j * rng.normal(size=(5, 10))
        out = effective_sensing_matrix(codes, ChannelModel(gains=h, estimates=hhat))
        oracle = np.empty_like(codes.entries)
        for k in range(10):
            oracle[:, k] = np.diag(h[:, k] / hhat[:, k]) @ codes.entries[:, k]
        np.testing.assert_allclose(out.entries, oracle, atol=1e-12)


def test_effective_matrix_rejects_zero_estimate():
    rng = np.random.default_rng(9)
    codes = build_partial_dft(4, 2, rng)
    est = np.ones((2, 4), dtype=complex)
    est[1, 2] = 0.0
    chan = ChannelModel(gains=np.ones((2, 4), dtype=complex), estimates=est)
    with pytest.raises(SingularEstimateError):
        effective_sensing_matrix(codes, chan)


def test_sample_activity_exact_count():
    act = sample_activity(500, 50, np.random.default_rng(0))
    assert len(act.support) == 50
    assert int(act.indicators.sum()) == 50
    assert np.array_equal(np.flatnonzero(act.indicators), act.support)


def test_sample_activity_empty():
    act = sample_activity(5, 0, np.random.default_rng(4))
    assert act.support.size == 0
    assert int(act.indicators.sum()) == 0


def test_sample_activity_deterministic():
    a = sample_activity(100, 10, np.random.default_rng(42))
    b = sample_activity(100, 10, np.random.default_rng(42))
    assert np.array_equal(a.support, b.support)


def test_slot_all_zero_when_silent():
    sc = Scenario(n_devices=20, n_active=0, n_obs=8, n_symbols=3)
    assert sc.noise_var == 0.0
    codes = sc.spreading_matrix()
    slot = generate_slot(sc, codes, derive_rng(0, "slot", 0))
    np.testing.assert_allclose(slot.Y, 0.0, atol=1e-15)


def test_slot_noiseless_identity():
    sc = Scenario(n_devices=20, n_active=5, n_obs=8, n_symbols=3, snr_db=np.inf)
    codes = sc.spreading_matrix()
    slot = generate_slot(sc, codes, derive_rng(0, "slot", 1))
    np.testing.assert_allclose(slot.Y, codes.forward(slot.X), atol=1e-14)


def test_slot_support_constant_across_symbols():
    sc = Scenario(n_devices=50, n_active=7, n_obs=20, n_symbols=6)
    codes = sc.spreading_matrix()
    for i in range(20):
        slot = generate_slot(sc, codes, derive_rng(3, "slot", i))
        supports = [np.flatnonzero(np.abs(slot.X[:, t]) > 0) for t in range(6)]
        for s in supports[1:]:
            assert np.array_equal(s, supports[0])
        assert np.array_equal(supports[0], slot.activity.support)
        active = slot.X[slot.activity.support]
        dists = np.min(
            np.abs(active[..., None] - sc.constellation.points[None, None, :]), axis=-1
        )
        assert np.max(dists) < 1e-14


def test_empirical_snr_matches_configured():
    # Monte-Carlo estimate of E||Sx||^2 / E||w||^2 over 10^4 slots
    sc = Scenario()
    codes = sc.spreading_matrix()
    sig = 0.0
    noise = 0.0
    for i in range(10_000):
        slot = generate_slot(sc, codes, derive_rng(11, "slot", i))
        sig += np.sum(np.abs(slot.Y - slot.W) ** 2)
        noise += np.sum(np.abs(slot.W) ** 2)
    snr_db = 10 * np.log10(sig / noise)
    assert abs(snr_db - sc.snr_db) < 0.1


def test_noise_var_values():
    assert Scenario().noise_var == pytest.approx(0.01, rel=1e-12)
    assert Scenario(n_active=0).noise_var == 0.0
    assert Scenario(snr_db=0.0).noise_var == pytest.approx(0.1, rel=1e-12)


def test_scenario_validation():
    with pytest.raises(ConfigurationError):
        Scenario(n_active=501)
    with pytest.raises(ConfigurationError):
        Scenario(n_obs=0)
    with pytest.raises(ConfigurationError):
        Scenario(n_obs=501)
    with pytest.raises(ConfigurationError):
        Scenario(n_symbols=0)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text(
        "# comment line\nK = 100\nKa=10\nM=30\nT = 4\nsnr_db = 6.5\nmodulation = qpsk\nseed = 9\n"
    )
    sc = scenario_from_config(str(path))
    assert (sc.n_devices, sc.n_active, sc.n_obs, sc.n_symbols) == (100, 10, 30, 4)
    assert sc.snr_db == 6.5
    assert sc.master_seed == 9


def test_config_overrides_win(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("K=100\nKa=10\nM=30\n")
    sc = scenario_from_config(str(path), {"M": 40, "seed": 2})
    assert sc.n_obs == 40
    assert sc.master_seed == 2


def test_config_defaults_without_file():
    sc = scenario_from_config(None, {"T": 3})
    assert sc.n_devices == 500 and sc.n_symbols == 3


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("bogus=1\n")
    with pytest.raises(ConfigurationError):
        scenario_from_config(str(path))
    with pytest.raises(ConfigurationError):
        scenario_from_config(None, {"bogus": 1})


def test_config_rejects_bad_value(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("K=abc\n")
    with pytest.raises(ConfigurationError):
        scenario_from_config(str(path))


def test_derive_rng_reproducible_and_distinct():
    a = derive_rng(5, "slot", 0).normal(size=4)
    b = derive_rng(5, "slot", 0).normal(size=4)
    c = derive_rng(5, "slot", 1).normal(size=4)
    d = derive_rng(5, "spreading").normal(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_generate_slot_deterministic():
    sc = Scenario(n_devices=40, n_active=6, n_obs=12, n_symbols=4, master_seed=17)
    codes = sc.spreading_matrix()
    s1 = generate_slot(sc, codes, derive_rng(17, "slot", 5))
    s2 = generate_slot(sc, codes, derive_rng(17, "slot", 5))
    np.testing.assert_array_equal(s1.Y, s2.Y)
    np.testing.assert_array_equal(s1.symbol_indices, s2.symbol_indices)
