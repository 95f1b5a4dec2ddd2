"""HTTP service exposing the cycle lifecycle to the clinician console.

All durable state lives in the memory store; the service itself only keeps
live cycle runners, so restarting it against the same log reproduces every
terminal cycle status. Cycles run asynchronously: starting one returns
immediately, the console polls the review endpoint, and feedback
submissions resume the suspended runner under a per-cycle lock so
duplicate submissions cannot double-apply effects.

Errors use a uniform ``{code, message, path}`` body. A static bearer token
(``VDSS_API_TOKEN`` or ``create_app(token=...)``) guards all endpoints when
configured.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .bandit import PREFERENCE_CATEGORIES, record_regret
from .contracts import FEATURE_DIM, to_payload
from .engine import CycleRunner, EncounterSnapshot, EngineConfig, PendingReview, build_runtime
from .memory import MemoryStore
from .replay import load_trajectories
from .waveform import WaveformScenario, generate_segment

import numpy as np


class ApiError(Exception):
    def __init__(self, status_code: int, code: str, message: str, path: str = ""):
        self.status_code = status_code
        self.code = code
        self.message = message
        self.path = path
        super().__init__(message)


@dataclass
class _CycleEntry:
    runner: CycleRunner
    encounter_id: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    error: Optional[str] = None


@dataclass
class _ServiceState:
    runtime: object
    encounters: dict = field(default_factory=dict)   # encounter_id -> [TrajectoryRecord]
    cycles: dict = field(default_factory=dict)       # cycle_id -> _CycleEntry
    active_by_encounter: dict = field(default_factory=dict)
    cycle_counters: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _pending_payload(pending: PendingReview, runner: CycleRunner) -> dict:
    registry = runner.runtime.registry
    target_mode = pending.proposal.mode_change or runner.current_settings.mode
    spec = registry.get(target_mode)
    return {
        "cycle_id": pending.cycle_id,
        "round_index": pending.round_index,
        "k_max": pending.k_max,
        "proposal": to_payload(pending.proposal),
        "current_settings": to_payload(runner.current_settings),
        "bounds": {p: list(spec.bounds[p]) for p in sorted(spec.applicable)},
        "safety": {
            "verdict": pending.safety.verdict,
            "violations": [to_payload(v) for v in pending.safety.violations],
            "warnings": list(pending.safety.warnings),
        },
        "preference_context": [{"category": c, "score": s} for c, s in pending.preference_context],
        "evidence_refs": list(pending.evidence_refs),
    }


def create_app(store_path, config_dir: Optional[str] = None, token: Optional[str] = None,
               default_k_max: int = 5, static_dir: Optional[str] = None) -> FastAPI:
    token = token if token is not None else os.environ.get("VDSS_API_TOKEN")
    store = MemoryStore(Path(store_path))
    runtime = build_runtime(store, config_dir)
    state = _ServiceState(runtime=runtime)
    app = FastAPI(title="vdss", version="0.1.0")
    app.state.vdss = state
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=static_dir, html=True), name="console")

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code,
                            content={"code": exc.code, "message": exc.message, "path": exc.path})

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if token and request.url.path != "/healthz":
            supplied = request.headers.get("Authorization", "")
            if supplied != f"Bearer {token}":
                return JSONResponse(status_code=401, content={
                    "code": "unauthorized", "message": "missing or invalid token", "path": ""})
        return await call_next(request)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/datasets/load")
    async def load_dataset(body: dict):
        path = body.get("path")
        if not path:
            raise ApiError(400, "bad_request", "body must name a dataset path", "path")
        try:
            dataset = load_trajectories(path, runtime.registry)
        except FileNotFoundError:
            raise ApiError(404, "not_found", f"dataset file {path} not found", "path")
        except ValueError as exc:
            raise ApiError(422, "invalid_dataset", str(exc), "path")
        with state.lock:
            for records in dataset.encounters:
                state.encounters[records[0].encounter_id] = records
        return {"encounters": len(dataset.encounters), "records": dataset.n_records,
                "skipped": len(dataset.skipped)}

    @app.get("/encounters")
    async def list_encounters():
        with state.lock:
            items = [{"encounter_id": eid, "records": len(records),
                      "mode": records[-1].settings.mode}
                     for eid, records in sorted(state.encounters.items())]
        return {"encounters": items}

    def _resolve_encounter(encounter_id: str, window_end: Optional[float],
                           waveform_enabled: bool) -> EncounterSnapshot:
        with state.lock:
            records = state.encounters.get(encounter_id)
        if records is None:
            raise ApiError(404, "not_found", f"encounter {encounter_id} is not loaded", "encounter_id")
        eligible = records
        if window_end is not None:
            eligible = [r for r in records if r.state.timestamp <= window_end]
            if not eligible:
                raise ApiError(422, "empty_window", "no record inside the requested window", "window")
        current = eligible[-1]  # latest record in the window is the current state
        waveform = None
        info = current.waveform
        if waveform_enabled and info and (info.get("sawtooth") or info.get("scooped")):
            waveform = generate_segment(
                WaveformScenario(sawtooth=bool(info.get("sawtooth")),
                                 scooped=bool(info.get("scooped")), snr_db=18.0),
                seed=int(info.get("seed", 0)))
        return EncounterSnapshot(encounter_id=encounter_id, state=current.state,
                                 settings=current.settings, waveform=waveform)

    @app.post("/encounters/{encounter_id}/cycles")
    async def start_cycle(encounter_id: str, body: dict):
        clinician_id = body.get("clinician_id")
        if not clinician_id:
            raise ApiError(400, "bad_request", "clinician_id required", "clinician_id")
        window = body.get("window") or {}
        snapshot = _resolve_encounter(encounter_id, window.get("end"),
                                      bool(body.get("waveform_enabled", True)))
        config = EngineConfig(k_max=int(body.get("k_max", default_k_max)),
                              enable_waveform=bool(body.get("waveform_enabled", True)),
                              enable_preference=True)
        with state.lock:
            active = state.active_by_encounter.get(encounter_id)
            if active is not None:
                raise ApiError(409, "conflict", f"encounter {encounter_id} already has active cycle {active}",
                               "encounter_id")
            index = state.cycle_counters.get(encounter_id, 0)
            state.cycle_counters[encounter_id] = index + 1
            runner = CycleRunner(runtime, snapshot, clinician_id, config, cycle_index=index)
            entry = _CycleEntry(runner=runner, encounter_id=encounter_id)
            state.cycles[runner.cycle_id] = entry
            state.active_by_encounter[encounter_id] = runner.cycle_id

        def _advance():
            try:
                with entry.lock:
                    runner.start()
            except Exception as exc:  # noqa: BLE001 - surfaced through the review endpoint
                entry.error = f"{type(exc).__name__}: {exc}"
            finally:
                if runner.status in ("accepted", "hold", "exhausted", "failed") or entry.error:
                    with state.lock:
                        if state.active_by_encounter.get(encounter_id) == runner.cycle_id:
                            del state.active_by_encounter[encounter_id]

        threading.Thread(target=_advance, daemon=True).start()
        return {"cycle_id": runner.cycle_id, "status": "running"}

    def _entry(cycle_id: str) -> Optional[_CycleEntry]:
        with state.lock:
            return state.cycles.get(cycle_id)

    def _terminal_from_store(cycle_id: str) -> Optional[str]:
        for payload in store.cycle_records():
            if payload["record"]["cycle_id"] == cycle_id:
                return payload["record"]["status"]
        return None

    @app.get("/cycles/{cycle_id}/review")
    async def get_review(cycle_id: str):
        entry = _entry(cycle_id)
        if entry is None:
            status = _terminal_from_store(cycle_id)
            if status is None:
                raise ApiError(404, "not_found", f"unknown cycle {cycle_id}", "cycle_id")
            return {"status": status, "review": None}
        if entry.error:
            raise ApiError(503, "backend_unavailable", entry.error, "cycle_id")
        runner = entry.runner
        if runner.status == "in_review" and runner.pending is not None:
            return {"status": "in_review", "review": _pending_payload(runner.pending, runner)}
        if runner.status in ("accepted", "hold", "exhausted", "failed"):
            return {"status": runner.status, "review": None}
        return {"status": "running", "review": None}

    @app.post("/cycles/{cycle_id}/feedback")
    async def submit_feedback(cycle_id: str, body: dict):
        entry = _entry(cycle_id)
        if entry is None:
            raise ApiError(404, "not_found", f"unknown cycle {cycle_id}", "cycle_id")
        body = dict(body)
        expected_round = body.pop("round_index", None)  # optional staleness guard, not contract data
        checked = runtime.validator.validate_message("clinician_feedback", body)
        if not checked.ok:
            first = checked.errors[0]
            raise ApiError(422, "invalid_feedback", f"expected {first.expected}, found {first.found}",
                           first.path)
        with entry.lock:
            runner = entry.runner
            if runner.status != "in_review":
                raise ApiError(409, "conflict",
                               f"cycle {cycle_id} is not awaiting review (status={runner.status})",
                               "cycle_id")
            if expected_round is not None and runner.pending is not None \
                    and expected_round != runner.pending.round_index:
                raise ApiError(409, "conflict", "feedback targets a stale round", "round_index")
            outcome = runner.resume(checked.value)
        if runner.status in ("accepted", "hold", "exhausted", "failed"):
            with state.lock:
                if state.active_by_encounter.get(entry.encounter_id) == cycle_id:
                    del state.active_by_encounter[entry.encounter_id]
            return {"status": runner.status, "review": None}
        return {"status": "in_review", "review": _pending_payload(outcome, runner)}

    @app.get("/cycles/{cycle_id}/trail")
    async def cycle_trail(cycle_id: str):
        entry = _entry(cycle_id)
        encounter_id = entry.encounter_id if entry else None
        if encounter_id is None:
            for payload in store.cycle_records():
                if payload["record"]["cycle_id"] == cycle_id:
                    encounter_id = payload["encounter_id"]
                    break
        if encounter_id is None:
            raise ApiError(404, "not_found", f"unknown cycle {cycle_id}", "cycle_id")
        trail = store.export_trail(encounter_id)
        envelopes = [e for e in trail["envelopes"]
                     if e["payload"].get("cycle_id") == cycle_id
                     or e["payload"].get("record", {}).get("cycle_id") == cycle_id]
        return {"cycle_id": cycle_id, "encounter_id": encounter_id, "envelopes": envelopes}

    @app.get("/encounters/{encounter_id}/trail")
    async def encounter_trail(encounter_id: str):
        return store.export_trail(encounter_id)

    @app.get("/clinicians/{clinician_id}/preferences")
    async def preferences(clinician_id: str):
        pref = store.load_preference_state(clinician_id, runtime.hyperparams)
        arms = []
        for i, category in enumerate(PREFERENCE_CATEGORIES):
            theta = np.linalg.solve(pref.design[i], pref.response[i])
            arms.append({
                "category": category,
                "bias_weight": float(theta[FEATURE_DIM - 1]),
                "theta": [float(v) for v in theta],
            })
        return {"clinician_id": clinician_id, "update_count": pref.update_count, "arms": arms}

    @app.get("/clinicians/{clinician_id}/regret")
    async def regret(clinician_id: str):
        series = []
        n_failed = 0
        window: list = []
        for payload in store.cycle_records(clinician_id=clinician_id):
            checked = runtime.validator.validate_message("cycle_record", payload["record"])
            if not checked.ok:
                continue
            record = checked.value
            if record.status == "failed":
                n_failed += 1
                continue
            value = record_regret(record)
            window.append(value)
            series.append({
                "cycle_index": len(series),
                "cycle_id": record.cycle_id,
                "regret": value,
                "rolling_mean_10": float(np.mean(window[-10:])),
            })
        return {"clinician_id": clinician_id, "series": series, "n_failed": n_failed}

    return app
