"""Retrospective replay evaluation and regret studies.

Replay runs the engine autonomously over consecutive (state, settings)
pairs of a trajectory dataset, scoring the engine's accepted settings
against the next recorded settings in z-scored units (MSE, MAE, and
per-parameter R-squared averaged over parameters). Regret studies run
synthetic cycles against a simulated clinician and track rejected rounds
per cycle, with NoImg/NoPref ablations switching off the waveform path or
freezing preference scores.
"""

from __future__ import annotations

import csv
import io
import json
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bandit import cycle_regret
from .clinician import ClinicianProfile, SimulatedClinician, always_accept
from .config import load_registry
from .contracts import (
    SETTING_PARAMS,
    ContractValidator,
    ModeRegistry,
    PatientState,
    VentilatorSettings,
    mask_settings,
)
from .engine import EncounterSnapshot, EngineConfig, build_runtime, run_cycle
from .memory import MemoryStore
from .waveform import WaveformScenario, generate_segment

VARIANTS = ("full", "nopref", "noimg", "noimgnopref")

_CSV_COLUMNS = ("encounter_id", "t", "weight_kg", "mode",
                "peep", "fio2", "pressure_support", "inspiratory_pressure", "resp_rate_set",
                "spo2", "heart_rate", "map", "ph", "paco2", "pao2",
                "tidal_volume_obs", "resp_rate_obs", "sawtooth", "scooped", "waveform_seed")


class DatasetError(ValueError):
    """The trajectory file yielded no usable encounters or invalid statistics."""


@dataclass(frozen=True)
class TrajectoryRecord:
    encounter_id: str
    state: PatientState
    settings: VentilatorSettings
    waveform: Optional[dict] = None


@dataclass
class TrajectoryDataset:
    """Validated time-ordered records plus per-parameter normalization stats."""

    encounters: list
    stats: dict  # param -> (mean, std)
    n_records: int
    skipped: list = field(default_factory=list)  # (line_number, reason)

    @property
    def n_pairs(self) -> int:
        return sum(len(records) - 1 for records in self.encounters)


def _record_from_payload(payload: dict, validator: ContractValidator) -> TrajectoryRecord:
    state_payload = {"timestamp": payload["t"], "weight_kg": payload["weight_kg"]}
    for name, value in payload.get("state", {}).items():
        if value is not None:
            state_payload[name] = value
    checked_state = validator.validate_message("patient_state", state_payload)
    if not checked_state.ok:
        raise ValueError(f"state: {checked_state.errors[0].path}: {checked_state.errors[0].expected}")
    settings_payload = {k: v for k, v in payload["settings"].items() if v is not None}
    checked_settings = validator.validate_message("ventilator_settings", settings_payload)
    if not checked_settings.ok:
        raise ValueError(
            f"settings: {checked_settings.errors[0].path}: {checked_settings.errors[0].expected}")
    return TrajectoryRecord(
        encounter_id=str(payload["encounter_id"]),
        state=checked_state.value,
        settings=checked_settings.value,
        waveform=payload.get("waveform"),
    )


def _parse_csv_row(row: dict) -> dict:
    def num(name):
        raw = row.get(name, "")
        return float(raw) if raw not in ("", None) else None

    payload = {
        "encounter_id": row["encounter_id"],
        "t": float(row["t"]),
        "weight_kg": float(row["weight_kg"]),
        "state": {name: num(name) for name in
                  ("spo2", "heart_rate", "map", "ph", "paco2", "pao2",
                   "tidal_volume_obs", "resp_rate_obs")},
        "settings": {"mode": row["mode"],
                     **{p: num(p) for p in SETTING_PARAMS}},
    }
    if row.get("sawtooth", "") in ("1", "true", "True"):
        payload["waveform"] = {
            "sawtooth": True,
            "scooped": row.get("scooped", "") in ("1", "true", "True"),
            "seed": int(float(row.get("waveform_seed") or 0)),
        }
    return payload


def load_trajectories(path, registry: Optional[ModeRegistry] = None) -> TrajectoryDataset:
    """Load and validate a JSON-lines or CSV trajectory file.

    Malformed rows are skipped and reported with their line numbers.
    Raises DatasetError when no encounter has at least two valid records or
    when a normalized parameter has zero variance.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    validator = ContractValidator(registry or load_registry())

    by_encounter: dict = {}
    order: list = []
    skipped: list = []
    n_records = 0

    def ingest(line_number: int, payload) -> None:
        nonlocal n_records
        try:
            record = _record_from_payload(payload, validator)
        except (ValueError, KeyError, TypeError) as exc:
            skipped.append((line_number, str(exc)))
            return
        if record.encounter_id not in by_encounter:
            by_encounter[record.encounter_id] = []
            order.append(record.encounter_id)
        by_encounter[record.encounter_id].append(record)
        n_records += 1

    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            for i, row in enumerate(reader, start=2):  # header is line 1
                try:
                    ingest(i, _parse_csv_row(row))
                except (ValueError, KeyError, TypeError) as exc:
                    skipped.append((i, str(exc)))
    else:
        with open(path, encoding="utf-8") as handle:
            for i, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    ingest(i, json.loads(line))
                except json.JSONDecodeError as exc:
                    skipped.append((i, f"invalid JSON: {exc}"))

    encounters = []
    for encounter_id in order:
        records = by_encounter[encounter_id]
        if len(records) < 2:
            skipped.append((-1, f"encounter {encounter_id}: fewer than 2 records"))
            continue
        records.sort(key=lambda r: r.state.timestamp)
        encounters.append(records)
    if not encounters:
        raise DatasetError("no encounter with at least two valid records")

    stats = {}
    for param in SETTING_PARAMS:
        values = [getattr(r.settings, param) for records in encounters for r in records
                  if getattr(r.settings, param) is not None]
        if not values:
            continue
        arr = np.asarray(values, dtype=float)
        mean = float(arr.mean())
        std = float(arr.std())
        if std == 0.0:
            raise DatasetError(f"zero variance for {param}")
        stats[param] = (mean, std)

    return TrajectoryDataset(encounters=encounters, stats=stats, n_records=n_records,
                             skipped=skipped)


# ---------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class ReplayMetrics:
    mse: float
    mae: float
    r2: float
    n_pairs: int
    per_parameter: dict
    mode_accuracy: float
    n_failures: int
    completion_failure_rate: float
    agent_stats: dict = field(default_factory=dict)  # per-role calls/malformed/failures

    def to_payload(self) -> dict:
        return {
            "mse": self.mse, "mae": self.mae, "r2": self.r2, "n_pairs": self.n_pairs,
            "per_parameter": {k: dict(v) for k, v in sorted(self.per_parameter.items())},
            "mode_accuracy": self.mode_accuracy,
            "n_failures": self.n_failures,
            "completion_failure_rate": self.completion_failure_rate,
            "agent_stats": self.agent_stats,
        }


def compute_error_metrics(entries, mode_pairs=(), n_failures: int = 0,
                          n_attempted: int = 0) -> ReplayMetrics:
    """Aggregate (parameter, true_z, predicted_z) entries into replay metrics.

    MSE/MAE pool every (pair, parameter) residual; R-squared is computed per
    parameter against that parameter's mean over the evaluated pairs, then
    averaged over parameters (parameters with zero variance in the
    evaluation window are excluded from the average). All sums use exactly
    rounded accumulation, so results are independent of arrival order and a
    mean predictor scores an R-squared of exactly zero.
    """
    by_param: dict = {}
    for param, y_true, y_pred in entries:
        by_param.setdefault(param, []).append((y_true, y_pred))

    n_total = sum(len(pairs) for pairs in by_param.values())
    if n_total:
        mse = math.fsum((yt - yp) ** 2 for pairs in by_param.values() for yt, yp in pairs) / n_total
        mae = math.fsum(abs(yt - yp) for pairs in by_param.values() for yt, yp in pairs) / n_total
    else:
        mse = 0.0
        mae = 0.0

    per_parameter = {}
    r2_values = []
    for param in sorted(by_param):
        pairs = by_param[param]
        n = len(pairs)
        ss_res = math.fsum((yt - yp) ** 2 for yt, yp in pairs)
        entry = {"mse": ss_res / n,
                 "mae": math.fsum(abs(yt - yp) for yt, yp in pairs) / n,
                 "n": n}
        mean = math.fsum(yt for yt, _ in pairs) / n
        ss_tot = math.fsum((yt - mean) ** 2 for yt, _ in pairs)
        if ss_tot > 0.0:
            entry["r2"] = 1.0 - ss_res / ss_tot
            r2_values.append(entry["r2"])
        else:
            entry["r2"] = None
        per_parameter[param] = entry
    r2 = math.fsum(r2_values) / len(r2_values) if r2_values else 0.0

    mode_pairs = list(mode_pairs)
    mode_accuracy = (sum(1 for t, p in mode_pairs if t == p) / len(mode_pairs)) if mode_pairs else 1.0
    failure_rate = (n_failures / n_attempted) if n_attempted else 0.0
    return ReplayMetrics(mse=mse, mae=mae, r2=r2, n_pairs=n_attempted - n_failures,
                         per_parameter=per_parameter, mode_accuracy=mode_accuracy,
                         n_failures=n_failures, completion_failure_rate=failure_rate)


# ---------------------------------------------------------------------------
# Autonomous next-step replay


def _segment_for(record: TrajectoryRecord):
    info = record.waveform
    if not info or not (info.get("sawtooth") or info.get("scooped")):
        return None
    scenario = WaveformScenario(sawtooth=bool(info.get("sawtooth")),
                                scooped=bool(info.get("scooped")),
                                snr_db=18.0)
    return generate_segment(scenario, seed=int(info.get("seed", 0)))


def replay_next_step(dataset: TrajectoryDataset, *, no_img: bool = False, no_pref: bool = False,
                     fault_rate: float = 0.0, seed: int = 0, k_max: int = 5,
                     config_dir: Optional[str] = None,
                     store: Optional[MemoryStore] = None) -> ReplayMetrics:
    """Predict each next recorded setting with the engine running autonomously.

    The simulated reviewer accepts the first safety-passing proposal; hold
    cycles predict unchanged settings. Pairs whose cycle fails count toward
    the completion-failure rate and are excluded from the error metrics.
    """
    own_dir = None
    if store is None:
        own_dir = tempfile.TemporaryDirectory(prefix="vdss-replay-")
        store = MemoryStore(Path(own_dir.name) / "memory.jsonl")
    try:
        runtime = build_runtime(store, config_dir, fault_rate=fault_rate, fault_seed=seed)
        config = EngineConfig(k_max=k_max, enable_waveform=not no_img,
                              enable_preference=not no_pref, seed=seed)
        registry = runtime.registry

        entries = []
        mode_pairs = []
        n_failures = 0
        n_attempted = 0

        for records in dataset.encounters:
            for i in range(len(records) - 1):
                current, nxt = records[i], records[i + 1]
                n_attempted += 1
                snapshot = EncounterSnapshot(
                    encounter_id=current.encounter_id,
                    state=current.state,
                    settings=mask_settings(current.settings, registry),
                    waveform=None if no_img else _segment_for(current),
                )
                record = run_cycle(runtime, snapshot, "replay", config, always_accept,
                                   cycle_index=i)
                if record.status == "failed":
                    n_failures += 1
                    continue
                if record.status == "accepted":
                    predicted = record.accepted_settings
                else:  # hold: predict no change
                    predicted = snapshot.settings
                mode_pairs.append((nxt.settings.mode, predicted.mode))
                current_spec = registry.get(current.settings.mode)
                next_spec = registry.get(nxt.settings.mode)
                for param in SETTING_PARAMS:
                    if param not in current_spec.applicable or param not in next_spec.applicable:
                        continue
                    y_true = getattr(nxt.settings, param)
                    y_pred = getattr(predicted, param) if param in registry.get(predicted.mode).applicable else None
                    if y_true is None or y_pred is None or param not in dataset.stats:
                        continue
                    mean, std = dataset.stats[param]
                    entries.append((param, (y_true - mean) / std, (y_pred - mean) / std))
        metrics = compute_error_metrics(entries, mode_pairs, n_failures, n_attempted)
        return ReplayMetrics(**{**metrics.__dict__, "agent_stats": runtime.stats.snapshot()})
    finally:
        if own_dir is not None:
            store.close()
            own_dir.cleanup()


# ---------------------------------------------------------------------------
# Regret studies


@dataclass(frozen=True)
class RegretSeries:
    variant: str
    seed: int
    regrets: tuple
    rolling_mean: tuple
    n_failed: int

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["cycle_index", "regret", "rolling_mean_10"])
        for i, (regret, rolling) in enumerate(zip(self.regrets, self.rolling_mean)):
            writer.writerow([i, regret, f"{rolling:.4f}"])
        return out.getvalue()

    def window_mean(self, start: int, end: int) -> float:
        window = self.regrets[start:end]
        return float(np.mean(window)) if window else 0.0


def _rolling(values, window: int = 10) -> tuple:
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(float(np.mean(values[lo:i + 1])))
    return tuple(out)


_SCENARIOS = ("hypoxemia", "excess_oxygen", "acidosis", "asynchrony", "stable", "insufficient")
_SCENARIO_WEIGHTS = (0.28, 0.18, 0.17, 0.22, 0.10, 0.05)


def _study_snapshot(kind: str, index: int, seed: int, rng: np.random.Generator) -> EncounterSnapshot:
    mode = "PRVC" if rng.random() < 0.5 else "VC_AC"
    settings = VentilatorSettings(mode=mode, peep=float(rng.integers(6, 11)),
                                  fio2=float(rng.integers(8, 12) * 5),
                                  resp_rate_set=float(rng.integers(14, 19)))
    state = {
        "spo2": float(rng.uniform(94, 96.5)),
        "heart_rate": float(rng.uniform(70, 100)),
        "map": float(rng.uniform(68, 85)),
        "ph": float(rng.uniform(7.36, 7.44)),
        "paco2": float(rng.uniform(36, 44)),
        "pao2": float(rng.uniform(80, 110)),
        "tidal_volume_obs": float(rng.uniform(380, 520)),
        "resp_rate_obs": float(rng.uniform(14, 20)),
    }
    waveform = None
    if kind == "hypoxemia":
        state["spo2"] = float(rng.uniform(84, 91))
        state["pao2"] = float(rng.uniform(45, 60))
    elif kind == "excess_oxygen":
        state["spo2"] = float(rng.uniform(97, 99.5))
        settings = VentilatorSettings(mode=mode, peep=settings.peep,
                                      fio2=float(rng.integers(12, 17) * 5),
                                      resp_rate_set=settings.resp_rate_set)
    elif kind == "acidosis":
        state["ph"] = float(rng.uniform(7.18, 7.24))
        state["paco2"] = float(rng.uniform(56, 70))
    elif kind == "asynchrony":
        state["resp_rate_obs"] = float(rng.uniform(31, 35))
        waveform = generate_segment(
            WaveformScenario(sawtooth=True, scooped=bool(rng.random() < 0.7), snr_db=18.0),
            seed=int(rng.integers(0, 2**31 - 1)))
    elif kind == "insufficient":
        state["ph"] = None
        state["paco2"] = None
        state["pao2"] = None

    payload_state = PatientState(
        timestamp=float(index) * 3600.0,
        weight_kg=float(rng.uniform(55, 100)),
        **{k: (round(v, 3) if isinstance(v, float) else v) for k, v in state.items()},
    )
    return EncounterSnapshot(encounter_id=f"study-{seed}-{index:04d}", state=payload_state,
                             settings=settings, waveform=waveform)


def run_regret_study(n_cycles: int, profile: ClinicianProfile, variant: str = "full",
                     seed: int = 0, k_max: int = 5, config_dir: Optional[str] = None,
                     store: Optional[MemoryStore] = None) -> RegretSeries:
    """Run synthetic cycles against one simulated clinician and track regret.

    Preference state persists across cycles for the full/NoImg variants;
    NoPref variants rank with frozen uniform scores. Failed cycles are
    excluded from the series and reported separately.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    enable_waveform = variant in ("full", "nopref")
    enable_preference = variant in ("full", "noimg")

    own_dir = None
    if store is None:
        own_dir = tempfile.TemporaryDirectory(prefix="vdss-regret-")
        store = MemoryStore(Path(own_dir.name) / "memory.jsonl")
    try:
        runtime = build_runtime(store, config_dir)
        config = EngineConfig(k_max=k_max, enable_waveform=enable_waveform,
                              enable_preference=enable_preference, seed=seed)
        rng = np.random.default_rng(seed)
        reviewer = SimulatedClinician(profile)
        regrets = []
        n_failed = 0
        for i in range(n_cycles):
            kind = str(rng.choice(_SCENARIOS, p=_SCENARIO_WEIGHTS))
            snapshot = _study_snapshot(kind, i, seed, rng)
            record = run_cycle(runtime, snapshot, profile.clinician_id, config, reviewer,
                               cycle_index=i)
            if record.status == "failed":
                n_failed += 1
                continue
            regrets.append(cycle_regret(record, k_max))
        return RegretSeries(variant=variant, seed=seed, regrets=tuple(regrets),
                            rolling_mean=_rolling(regrets), n_failed=n_failed)
    finally:
        if own_dir is not None:
            store.close()
            own_dir.cleanup()
