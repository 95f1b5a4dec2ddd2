"""Synthetic ICU cohort generator.

Produces encounters from a small stochastic transition model: a latent
severity process drives vitals and blood gases given the active settings,
and a noisy rule-following "recorded clinician" titrates the settings in
response. Exists solely to make the replay harness and demos runnable.
The cohort is synthetic and carries no clinical validity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .contracts import VentilatorSettings

_MODE_WEIGHTS = {"PRVC": 0.30, "VC_AC": 0.25, "PC_AC": 0.20, "SIMV_VC": 0.15, "PSV": 0.10}

_BOUNDS = {"peep": (0, 24), "fio2": (21, 100), "pressure_support": (0, 30),
           "inspiratory_pressure": (5, 40), "resp_rate_set": (4, 60)}

_APPLICABLE = {
    "VC_AC": ("peep", "fio2", "resp_rate_set"),
    "PC_AC": ("peep", "fio2", "inspiratory_pressure", "resp_rate_set"),
    "PRVC": ("peep", "fio2", "resp_rate_set"),
    "PSV": ("peep", "fio2", "pressure_support"),
    "SIMV_VC": ("peep", "fio2", "pressure_support", "resp_rate_set"),
}

STEP_SECONDS = 3600.0


@dataclass(frozen=True)
class SynthesisConfig:
    n_encounters: int = 10
    min_steps: int = 6
    max_steps: int = 14
    seed: int = 0


def _initial_settings(mode: str, rng: np.random.Generator) -> dict:
    values = {
        "peep": float(rng.integers(5, 13)),
        "fio2": float(rng.integers(6, 17) * 5),
        "resp_rate_set": float(rng.integers(12, 23)),
        "pressure_support": float(rng.integers(8, 17)),
        "inspiratory_pressure": float(rng.integers(12, 25)),
    }
    return {p: values[p] for p in _APPLICABLE[mode]}


def _observe(severity: float, settings: dict, weight: float, asynchrony: bool,
             rng: np.random.Generator) -> dict:
    fio2 = settings.get("fio2", 21.0)
    peep = settings.get("peep", 0.0)
    rr_set = settings.get("resp_rate_set")
    ps = settings.get("pressure_support", 0.0)
    rr_eff = rr_set if rr_set is not None else 12.0 + 8.0 * severity

    oxygen_deficit = 26.0 * severity - 0.12 * (fio2 - 21.0) - 0.5 * peep
    spo2 = float(np.clip(97.5 - max(0.0, oxygen_deficit) + rng.normal(0, 1.0), 75, 100))
    paco2 = float(np.clip(40.0 + 20.0 * severity - 0.9 * (rr_eff - 14.0) - 0.25 * ps
                          + rng.normal(0, 2.0), 22, 95))
    ph = float(np.clip(7.40 - 0.0075 * (paco2 - 40.0) + rng.normal(0, 0.012), 7.05, 7.65))
    state = {
        "spo2": round(spo2, 1),
        "heart_rate": round(float(np.clip(80 + 32 * severity + rng.normal(0, 5), 45, 160)), 1),
        "map": round(float(np.clip(80 - 14 * severity - 0.6 * peep + rng.normal(0, 3), 40, 110)), 1),
        "ph": round(ph, 3),
        "paco2": round(paco2, 1),
        "pao2": round(float(np.clip(65 + 2.2 * (spo2 - 88) + rng.normal(0, 4), 35, 220)), 1),
        "tidal_volume_obs": round(float(weight * np.clip(6.2 + 2.2 * severity + rng.normal(0, 0.4),
                                                         4.0, 10.5)), 1),
        "resp_rate_obs": round(float(np.clip(rr_eff + 5 * severity + (4 if asynchrony else 0)
                                             + rng.normal(0, 1.2), 8, 44)), 1),
    }
    # Occasional missing labs; sometimes the whole gas panel is absent.
    if rng.random() < 0.04:
        state["ph"] = None
        state["paco2"] = None
        state["pao2"] = None
    else:
        for lab in ("ph", "paco2", "pao2"):
            if rng.random() < 0.03:
                state[lab] = None
    return state


def _clinician_response(state: dict, settings: dict, asynchrony: bool, style: float,
                        rng: np.random.Generator) -> dict:
    """Noisy rule-following titration producing the next recorded settings."""
    new = dict(settings)

    def nudge(param: str, step: float):
        if param not in new:
            return
        lo, hi = _BOUNDS[param]
        new[param] = float(np.clip(new[param] + step, lo, hi))

    spo2 = state.get("spo2")
    ph = state.get("ph")
    paco2 = state.get("paco2")
    acted = False
    if spo2 is not None and spo2 < 92:
        nudge("fio2", 10 + round(10 * style))
        if spo2 < 88 and rng.random() < 0.5:
            nudge("peep", 2)
        acted = True
    elif spo2 is not None and spo2 >= 97 and new.get("fio2", 21) >= 50:
        nudge("fio2", -(10 + round(5 * style)))
        acted = True
    if ph is not None and paco2 is not None:
        if ph < 7.30 and paco2 > 50:
            nudge("resp_rate_set", 4)
            nudge("pressure_support", 3)
            acted = True
        elif ph > 7.50 and paco2 < 32:
            nudge("resp_rate_set", -4)
            acted = True
    if asynchrony and not acted and rng.random() < 0.7:
        nudge("resp_rate_set", -2 - round(2 * style))
        nudge("pressure_support", 2)
    return new


def generate_cohort(config: SynthesisConfig) -> list:
    """Time-ordered records per encounter, JSONL-ready."""
    rng = np.random.default_rng(config.seed)
    modes = list(_MODE_WEIGHTS)
    probs = np.array([_MODE_WEIGHTS[m] for m in modes])
    records = []
    for e in range(config.n_encounters):
        encounter_id = f"enc-{config.seed:03d}-{e:04d}"
        mode = str(rng.choice(modes, p=probs))
        weight = round(float(rng.uniform(50, 110)), 1)
        settings = _initial_settings(mode, rng)
        severity = float(rng.uniform(0.25, 0.85))
        style = float(rng.uniform(0.0, 1.0))  # per-encounter assertiveness of the recorded clinician
        n_steps = int(rng.integers(config.min_steps, config.max_steps + 1))
        encounter_records = []
        for step in range(n_steps):
            asynchrony = bool(mode != "PSV" and rng.random() < 0.15)
            state = _observe(severity, settings, weight, asynchrony, rng)
            record = {
                "encounter_id": encounter_id,
                "t": step * STEP_SECONDS,
                "weight_kg": weight,
                "state": state,
                "settings": {"mode": mode, **{k: v for k, v in settings.items()}},
            }
            if asynchrony:
                record["waveform"] = {
                    "sawtooth": True,
                    "scooped": bool(rng.random() < 0.6),
                    "seed": int(rng.integers(0, 2**31 - 1)),
                }
            encounter_records.append(record)

            settings = _clinician_response(state, settings, asynchrony, style, rng)
            drift = rng.normal(-0.03, 0.05)
            if rng.random() < 0.08:
                drift += rng.uniform(0.1, 0.3)
            if state.get("spo2") is not None and state["spo2"] < 92 and settings.get("fio2", 0) > record["settings"].get("fio2", 0):
                drift -= 0.03  # treatment helps
            severity = float(np.clip(severity + drift, 0.02, 1.0))

        # Comfort-titration jitter: a recorded course never holds a parameter
        # perfectly flat, and downstream z-scoring requires variance in every
        # emitted column.
        for param in _APPLICABLE[mode]:
            values = {r["settings"][param] for r in encounter_records}
            if len(values) <= 1:
                last = encounter_records[-1]["settings"]
                lo, hi = _BOUNDS[param]
                nudge = 1.0 if last[param] + 1.0 <= hi else -1.0
                last[param] = float(np.clip(last[param] + nudge, lo, hi))
        records.extend(encounter_records)
    return records


def write_jsonl(records: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def settings_from_record(record: dict) -> VentilatorSettings:
    raw = record["settings"]
    return VentilatorSettings(
        mode=raw["mode"],
        **{p: raw.get(p) for p in ("peep", "fio2", "pressure_support",
                                   "inspiratory_pressure", "resp_rate_set")})
