"""Round-based interference cancellation."""
import numpy as np
import pytest

from oampmmv.coding import approx_bit_llr, average_abs_llr, bits_to_symbols, default_code
from oampmmv.detectors import DetectorConfig, detect_ssl
from oampmmv.exceptions import ConfigurationError
from oampmmv.model import Scenario, derive_rng, generate_slot
from oampmmv.sic import SICConfig, decode_support, sic_detect

CODE = default_code()


def _coded_slot(sc, i):
    """Slot whose active rows carry valid codewords, plus the payloads."""
    codes = sc.spreading_matrix()
    cons = sc.constellation
    rng = derive_rng(sc.master_seed, "slot", i)
    n_info = CODE.info_length(sc.n_symbols * cons.bits_per_symbol)
    info = rng.integers(0, 2, size=(sc.n_active, n_info)).astype(np.int8)
    idx = np.empty((sc.n_active, sc.n_symbols), dtype=np.int64)
    capacity = sc.n_symbols * cons.bits_per_symbol
    for a in range(sc.n_active):
        coded = CODE.encode(info[a])
        padded = np.zeros(capacity, dtype=np.int8)
        padded[: len(coded)] = coded
        idx[a] = cons.index_of_bits(padded)
    slot = generate_slot(sc, codes, rng, symbol_indices=idx)
    return codes, slot, info


EASY = Scenario(n_symbols=30, snr_db=10.0, master_seed=11)


def test_single_pass_when_budget_covers_everything():
    codes, slot, info = _coded_slot(EASY, 0)
    cfg = SICConfig(n_per_round=100, max_rounds=10, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    assert len(res.rounds) == 1
    assert np.array_equal(res.kappa, slot.activity.support)
    # a single full-budget round reduces to the plain detect-then-decode path
    plain = detect_ssl(slot.Y, codes, EASY.constellation)
    plain_decoded = decode_support(plain, EASY.constellation, CODE)
    assert set(res.decoded) == set(plain_decoded)
    for k, bits in res.decoded.items():
        np.testing.assert_array_equal(bits, plain_decoded[k])
    # and every payload is right at this easy operating point
    for a, k in enumerate(slot.activity.support):
        np.testing.assert_array_equal(res.decoded[int(k)], info[a])


def test_rounds_are_disjoint_and_kappa_is_their_union():
    codes, slot, _ = _coded_slot(EASY, 1)
    cfg = SICConfig(n_per_round=8, max_rounds=10, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    seen = set()
    for rnd in res.rounds:
        batch = set(int(k) for k in rnd.cancelled)
        assert not (batch & seen)
        assert len(batch) <= 8
        seen |= batch
    assert seen == set(int(k) for k in res.kappa)
    assert set(res.decoded) == seen
    assert np.array_equal(np.flatnonzero(res.indicators), res.kappa)


def test_round_budget_bounds_cancellations():
    codes, slot, _ = _coded_slot(EASY, 2)
    cfg = SICConfig(n_per_round=5, max_rounds=3, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    assert len([r for r in res.rounds if len(r.cancelled)]) <= 3
    assert len(res.kappa) <= 5 * 3


def test_residual_subtraction_replays_bit_exactly():
    codes, slot, _ = _coded_slot(EASY, 3)
    cfg = SICConfig(n_per_round=10, max_rounds=10, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    assert len(res.rounds) > 1
    # rebuild each round's subtraction in order; identical ops, identical floats
    Y_res = slot.Y.copy()
    for rnd in res.rounds:
        if len(rnd.cancelled) == 0:
            continue
        X_round = np.zeros_like(res.x_cancelled)
        for k in rnd.cancelled:
            X_round[k] = bits_to_symbols(
                CODE.encode(res.decoded[int(k)]), EASY.n_symbols, EASY.constellation
            )
        Y_res = Y_res - codes.forward(X_round)
        assert float(np.sum(np.abs(Y_res) ** 2)) == rnd.residual_energy
    total = np.zeros_like(res.x_cancelled)
    for k in res.kappa:
        total[k] = bits_to_symbols(
            CODE.encode(res.decoded[int(k)]), EASY.n_symbols, EASY.constellation
        )
    np.testing.assert_array_equal(total, res.x_cancelled)


def test_perfect_cancellation_leaves_noise_energy():
    codes, slot, info = _coded_slot(EASY, 4)
    cfg = SICConfig(n_per_round=10, max_rounds=10, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    for a, k in enumerate(slot.activity.support):
        np.testing.assert_array_equal(res.decoded[int(k)], info[a])
    noise_energy = float(np.sum(np.abs(slot.W) ** 2))
    assert res.rounds[-1].residual_energy == pytest.approx(noise_energy, rel=1e-9)


def test_ranking_takes_most_reliable_first():
    codes, slot, _ = _coded_slot(EASY, 5)
    cfg = SICConfig(n_per_round=4, max_rounds=10, detector="ssl")
    res = sic_detect(slot.Y, codes, EASY.constellation, CODE, cfg)
    first = res.rounds[0]
    assert first.n_new_detected > 4 and len(first.cancelled) == 4
    # recompute the reliability ranking of the first round's detection
    det = detect_ssl(slot.Y, codes, EASY.constellation)
    new = det.support
    rel = average_abs_llr(
        approx_bit_llr(det.x_hat[new], max(det.sigma2, 1e-30), EASY.constellation)
    )
    want = set(int(k) for k in new[np.argsort(-rel, kind="stable")[:4]])
    assert set(int(k) for k in first.cancelled) == want


def test_config_validation():
    codes, slot, _ = _coded_slot(EASY, 6)
    with pytest.raises(ConfigurationError):
        sic_detect(slot.Y, codes, EASY.constellation, CODE, SICConfig(detector="amp"))
    with pytest.raises(ConfigurationError):
        sic_detect(slot.Y, codes, EASY.constellation, CODE, SICConfig(n_per_round=0))
