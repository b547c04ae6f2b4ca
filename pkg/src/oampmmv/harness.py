"""Monte-Carlo harness: trial loops, sweeps, and result files.

Slots are derived from the scenario's master seed and the slot index only,
so different detectors evaluated on the same scenario see identical slots
(matched seeds) and disjoint slot ranges can run in different workers and be
merged afterwards. Set OAMPMMV_WORKERS to fan trials out over processes.
"""
from __future__ import annotations

import csv
import json
import os
import subprocess
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import amp_mmv, gene_aided_oamp, oracle_ls
from .coding import ConvolutionalCode, default_code
from .detectors import DetectionResult, DetectorConfig, detect_asl, detect_ssl
from .exceptions import ConfigurationError, NumericalFailure
from .metrics import compute_adep, compute_mse, count_bit_errors, wilson_interval
from .model import Scenario, SlotData, SpreadingMatrix, derive_rng, generate_slot
from .sic import SICConfig, SICResult, decode_support, sic_detect

__all__ = [
    "DETECTOR_NAMES",
    "TrialRecord",
    "run_trials",
    "run_coded_trials",
    "mse_trace",
    "SweepSpec",
    "SweepRow",
    "run_sweep",
    "emit_results",
    "load_results",
    "scenario_snapshot",
    "worker_count",
]

DETECTOR_NAMES = ("ssl", "asl", "gene-aided", "amp-mmv", "oracle-ls")


def scenario_snapshot(scenario: Scenario) -> dict:
    cons = scenario.constellation
    return {
        "K": scenario.n_devices,
        "Ka": scenario.n_active,
        "M": scenario.n_obs,
        "T": scenario.n_symbols,
        "snr_db": scenario.snr_db,
        "modulation": "qpsk" if cons.scheme == "qpsk" else f"{cons.scheme}{cons.order}",
        "seed": scenario.master_seed,
    }


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OAMPMMV_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class TrialRecord:
    """Mergeable counters from a batch of slots for one detector."""

    detector: str
    scenario: dict
    n_slots: int = 0
    n_failures: int = 0
    act_errors: int = 0
    act_total: int = 0
    bit_errors: int = 0
    bit_total: int = 0
    mse_sum: float = 0.0
    mse_slots: int = 0
    iter_sum: int = 0
    wall_time: float = 0.0

    @property
    def adep(self) -> float:
        return self.act_errors / self.act_total if self.act_total else 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bit_total if self.bit_total else 0.0

    @property
    def mse(self) -> float:
        return self.mse_sum / self.mse_slots if self.mse_slots else float("nan")

    @property
    def mean_iterations(self) -> float:
        done = self.n_slots - self.n_failures
        return self.iter_sum / done if done else float("nan")

    def merge(self, other: "TrialRecord") -> "TrialRecord":
        if other.detector != self.detector or other.scenario != self.scenario:
            raise ConfigurationError("cannot merge records from different runs")
        return TrialRecord(
            detector=self.detector,
            scenario=self.scenario,
            n_slots=self.n_slots + other.n_slots,
            n_failures=self.n_failures + other.n_failures,
            act_errors=self.act_errors + other.act_errors,
            act_total=self.act_total + other.act_total,
            bit_errors=self.bit_errors + other.bit_errors,
            bit_total=self.bit_total + other.bit_total,
            mse_sum=self.mse_sum + other.mse_sum,
            mse_slots=self.mse_slots + other.mse_slots,
            iter_sum=self.iter_sum + other.iter_sum,
            wall_time=self.wall_time + other.wall_time,
        )

    __add__ = merge


def _dispatch(
    name: str,
    slot: SlotData,
    scenario: Scenario,
    codes: SpreadingMatrix,
    config: DetectorConfig,
):
    cons = scenario.constellation
    if name == "ssl":
        return detect_ssl(slot.Y, codes, cons, config)
    if name == "asl":
        return detect_asl(slot.Y, codes, cons, config)
    if name == "amp-mmv":
        return amp_mmv(slot.Y, codes, cons, config)
    if name == "gene-aided":
        return gene_aided_oamp(
            slot.Y, codes, cons, slot.activity.support, scenario.noise_var, config
        )
    if name == "oracle-ls":
        x_hat = oracle_ls(slot.Y, codes, slot.activity.support)
        return DetectionResult(
            x_hat=x_hat,
            sparsity_ratio=slot.activity.indicators.astype(np.float64),
            support=slot.activity.support.copy(),
            indicators=slot.activity.indicators.copy(),
            iterations=1,
            sigma2=scenario.noise_var,
            trace=None,
            detector="oracle-ls",
        )
    raise ConfigurationError(f"unknown detector '{name}'")


def _trials_range(args) -> TrialRecord:
    scenario, name, config, start, count = args
    codes = scenario.spreading_matrix()
    cons = scenario.constellation
    rec = TrialRecord(detector=name, scenario=scenario_snapshot(scenario))
    t0 = time.perf_counter()
    for i in range(start, start + count):
        slot = generate_slot(scenario, codes, derive_rng(scenario.master_seed, "slot", i))
        rec.n_slots += 1
        try:
            res = _dispatch(name, slot, scenario, codes, config)
        except NumericalFailure:
            rec.n_failures += 1
            continue
        rec.iter_sum += res.iterations
        rec.act_errors += int(np.sum(res.indicators != slot.activity.indicators))
        rec.act_total += scenario.n_devices
        wrong, total = count_bit_errors(
            res.x_hat, slot.symbol_indices, slot.activity.support, res.indicators, cons
        )
        rec.bit_errors += wrong
        rec.bit_total += total
        rec.mse_sum += compute_mse(res.x_hat, slot.X)
        rec.mse_slots += 1
    rec.wall_time = time.perf_counter() - t0
    return rec


def run_trials(
    scenario: Scenario,
    detector: str,
    n_trials: int,
    config: DetectorConfig = DetectorConfig(),
    trial_offset: int = 0,
    workers: int | None = None,
) -> TrialRecord:
    """Uncoded Monte-Carlo evaluation of one detector on n_trials slots."""
    if detector not in DETECTOR_NAMES:
        raise ConfigurationError(f"unknown detector '{detector}'")
    if n_trials < 1:
        raise ConfigurationError("need at least one trial")
    workers = workers if workers is not None else worker_count()
    if workers <= 1 or n_trials < 2 * workers:
        return _trials_range((scenario, detector, config, trial_offset, n_trials))
    bounds = np.linspace(0, n_trials, workers + 1).astype(int)
    jobs = [
        (scenario, detector, config, trial_offset + int(a), int(b - a))
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(workers) as pool:
        parts = pool.map(_coded_or_plain_worker, [("plain", j) for j in jobs])
    out = parts[0]
    for part in parts[1:]:
        out = out.merge(part)
    return out


def _coded_slot(scenario: Scenario, codes, code: ConvolutionalCode, rng, n_info: int):
    cons = scenario.constellation
    T = scenario.n_symbols
    # info bits drawn first, then generate_slot consumes the same stream
    info = rng.integers(0, 2, size=(scenario.n_active, n_info)).astype(np.int8)
    idx = np.empty((scenario.n_active, T), dtype=np.int64)
    capacity = T * cons.bits_per_symbol
    for a in range(scenario.n_active):
        coded = code.encode(info[a])
        padded = np.zeros(capacity, dtype=np.int8)
        padded[: len(coded)] = coded
        idx[a] = cons.index_of_bits(padded)
    slot = generate_slot(scenario, codes, rng, symbol_indices=idx)
    return slot, info


def _coded_trials_range(args) -> TrialRecord:
    scenario, name, config, sic_config, start, count = args
    codes = scenario.spreading_matrix()
    cons = scenario.constellation
    code = default_code()
    n_info = code.info_length(scenario.n_symbols * cons.bits_per_symbol)
    label = name if sic_config is None else f"{name}+sic"
    rec = TrialRecord(detector=label, scenario=scenario_snapshot(scenario))
    t0 = time.perf_counter()
    for i in range(start, start + count):
        rng = derive_rng(scenario.master_seed, "slot", i)
        slot, info = _coded_slot(scenario, codes, code, rng, n_info)
        rec.n_slots += 1
        try:
            if sic_config is not None:
                sic_res = sic_detect(
                    slot.Y, codes, cons, code, replace(sic_config, detector=name)
                )
                indicators = sic_res.indicators
                decoded = sic_res.decoded
                iters = sum(1 for _ in sic_res.rounds)
            else:
                res = _dispatch(name, slot, scenario, codes, config)
                indicators = res.indicators
                decoded = decode_support(res, cons, code)
                iters = res.iterations
                rec.mse_sum += compute_mse(res.x_hat, slot.X)
                rec.mse_slots += 1
        except NumericalFailure:
            rec.n_failures += 1
            continue
        rec.iter_sum += iters
        rec.act_errors += int(np.sum(indicators != slot.activity.indicators))
        rec.act_total += scenario.n_devices
        total = scenario.n_active * n_info
        correct = 0
        for a, k in enumerate(slot.activity.support):
            bits = decoded.get(int(k))
            if bits is not None:
                correct += int(np.sum(bits == info[a]))
        rec.bit_errors += total - correct
        rec.bit_total += total
    rec.wall_time = time.perf_counter() - t0
    return rec


def _coded_or_plain_worker(tagged):
    kind, job = tagged
    return _trials_range(job) if kind == "plain" else _coded_trials_range(job)


def run_coded_trials(
    scenario: Scenario,
    detector: str,
    n_trials: int,
    config: DetectorConfig = DetectorConfig(),
    sic_config: SICConfig | None = None,
    trial_offset: int = 0,
    workers: int | None = None,
) -> TrialRecord:
    """Coded Monte-Carlo evaluation; BER counts information bits.

    With sic_config the round-based cancellation loop runs per slot and
    activity comes from the cancelled set; otherwise the plain detector runs
    once and every detected device is decoded.
    """
    if detector not in ("ssl", "asl"):
        raise ConfigurationError("coded runs support the ssl and asl detectors")
    if n_trials < 1:
        raise ConfigurationError("need at least one trial")
    workers = workers if workers is not None else worker_count()
    if workers <= 1 or n_trials < 2 * workers:
        return _coded_trials_range((scenario, detector, config, sic_config, trial_offset, n_trials))
    bounds = np.linspace(0, n_trials, workers + 1).astype(int)
    jobs = [
        (scenario, detector, config, sic_config, trial_offset + int(a), int(b - a))
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    import multiprocessing as mp

    with mp.get_context("spawn").Pool(workers) as pool:
        parts = pool.map(_coded_or_plain_worker, [("coded", j) for j in jobs])
    out = parts[0]
    for part in parts[1:]:
        out = out.merge(part)
    return out


def mse_trace(
    scenario: Scenario,
    detector: str,
    n_slots: int,
    config: DetectorConfig,
) -> np.ndarray:
    """Mean per-iteration MSE of the denoised estimate against the truth.

    Early-stopped runs hold their final value to the configured iteration
    count.
    """
    codes = scenario.spreading_matrix()
    cons = scenario.constellation
    cfg = replace(config, record_history=True)
    acc = np.zeros(cfg.max_iters)
    for i in range(n_slots):
        slot = generate_slot(scenario, codes, derive_rng(scenario.master_seed, "slot", i))
        res = _dispatch(detector, slot, scenario, codes, cfg)
        per_iter = np.array(
            [compute_mse(mu, slot.X) for mu in res.trace.mu_history]
        )
        if len(per_iter) < cfg.max_iters:
            per_iter = np.concatenate(
                [per_iter, np.full(cfg.max_iters - len(per_iter), per_iter[-1])]
            )
        acc += per_iter
    return acc / n_slots


# ---------------------------------------------------------------------------
# sweeps and result files


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: vary `axis` over `values` for each detector."""

    scenario: Scenario
    axis: str  # "M", "snr_db", "T", "lambda0", or "n_per_round"
    values: tuple
    detectors: tuple = ("ssl", "asl")
    n_trials: int = 100
    config: DetectorConfig = field(default_factory=DetectorConfig)
    coded: bool = False
    sic: SICConfig | None = None


@dataclass
class SweepRow:
    axis: float
    detector: str
    adep: float
    adep_ci: float
    ber: float
    ber_ci: float
    mse: float
    trials: int
    failures: int
    adep_censored: bool = False
    ber_censored: bool = False


_AXIS_FIELDS = {"M": "n_obs", "snr_db": "snr_db", "T": "n_symbols"}


def _apply_axis(spec: SweepSpec, value):
    if spec.axis in _AXIS_FIELDS:
        scenario = replace(spec.scenario, **{_AXIS_FIELDS[spec.axis]: value})
        return scenario, spec.config, spec.sic
    if spec.axis == "lambda0":
        return spec.scenario, replace(spec.config, lambda_init=float(value)), spec.sic
    if spec.axis == "n_per_round":
        if spec.sic is None:
            raise ConfigurationError("n_per_round sweeps need a cancellation config")
        return spec.scenario, spec.config, replace(spec.sic, n_per_round=int(value))
    raise ConfigurationError(f"unknown sweep axis '{spec.axis}'")


def _record_to_row(rec: TrialRecord, value) -> SweepRow:
    lo, hi = wilson_interval(rec.act_errors, rec.act_total)
    blo, bhi = wilson_interval(rec.bit_errors, rec.bit_total)
    adep, adep_cens = rec.adep, False
    if rec.act_total and rec.act_errors == 0:
        adep, adep_cens = 1.0 / rec.act_total, True
    ber, ber_cens = rec.ber, False
    if rec.bit_total and rec.bit_errors == 0:
        ber, ber_cens = 1.0 / rec.bit_total, True
    return SweepRow(
        axis=float(value),
        detector=rec.detector,
        adep=float(adep),
        adep_ci=float(hi - lo) / 2.0,
        ber=float(ber),
        ber_ci=float(bhi - blo) / 2.0,
        mse=float(rec.mse),
        trials=rec.n_slots,
        failures=rec.n_failures,
        adep_censored=adep_cens,
        ber_censored=ber_cens,
    )


def run_sweep(spec: SweepSpec, progress=None) -> list:
    """Evaluate every (axis value, detector) pair; rows in sweep order."""
    rows = []
    for value in spec.values:
        scenario, config, sic = _apply_axis(spec, value)
        for name in spec.detectors:
            if spec.coded:
                rec = run_coded_trials(scenario, name, spec.n_trials, config, sic)
            else:
                rec = run_trials(scenario, name, spec.n_trials, config)
            rows.append(_record_to_row(rec, value))
            if progress is not None:
                progress(rows[-1])
    return rows


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _format_rate(value: float, censored: bool) -> str:
    return ("<" + repr(value)) if censored else repr(value)


CSV_HEADER = ["axis", "detector", "adep", "adep_ci", "ber", "ber_ci", "mse", "trials", "failures"]


def emit_results(rows, csv_path: str, manifest: dict | None = None) -> str:
    """Write the sweep CSV plus a JSON manifest next to it.

    Zero-error rates are written as "<resolution" where the resolution is
    one error over the evaluated total. Returns the manifest path.
    """
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    repr(row.axis),
                    row.detector,
                    _format_rate(row.adep, row.adep_censored),
                    repr(row.adep_ci),
                    _format_rate(row.ber, row.ber_censored),
                    repr(row.ber_ci),
                    repr(row.mse),
                    row.trials,
                    row.failures,
                ]
            )
    payload = {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "git": _git_describe(),
        "rows": len(rows),
    }
    if manifest:
        payload.update(manifest)
    manifest_path = csv_path + ".manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def _parse_rate(cell: str):
    if cell.startswith("<"):
        return float(cell[1:]), True
    return float(cell), False


def load_results(csv_path: str) -> list:
    """Inverse of emit_results for the CSV part."""
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigurationError(f"unexpected results header {header}")
        for rec in reader:
            adep, adep_cens = _parse_rate(rec[2])
            ber, ber_cens = _parse_rate(rec[4])
            rows.append(
                SweepRow(
                    axis=float(rec[0]),
                    detector=rec[1],
                    adep=adep,
                    adep_ci=float(rec[3]),
                    ber=ber,
                    ber_ci=float(rec[5]),
                    mse=float(rec[6]),
                    trials=int(rec[7]),
                    failures=int(rec[8]),
                    adep_censored=adep_cens,
                    ber_censored=ber_cens,
                )
            )
    return rows
