"""Layered memory: append-only long-term log plus short-term context.

The long-term store is a single newline-delimited JSON file of envelopes
``{offset, timestamp, kind, payload, content_hash}``. Offsets are dense and
strictly increasing, payload hashes make tampering detectable, and a torn
final line (interrupted write) is truncated away on reload. Nothing is ever
rewritten in place, so the log doubles as the auditable evidence trail.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

from .bandit import BanditHyperparams, PreferenceState
from .contracts import ContractValidator, VentilatorSettings, canonical_json

KINDS = ("cycle_record", "preference_snapshot", "note")


class IntegrityError(Exception):
    """A stored envelope failed hash verification or is structurally invalid."""

    def __init__(self, offset: int, detail: str):
        self.offset = offset
        super().__init__(f"log integrity violation at offset {offset}: {detail}")


class StorageError(Exception):
    """The append could not be made durable; no partial write is visible."""


def payload_hash(payload: Any) -> str:
    return "sha256:" + hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ShortTermContext:
    """Most recent notes (newest first) plus the last accepted settings."""

    notes: tuple
    last_accepted_settings: Optional[VentilatorSettings]
    note_offsets: tuple = ()


class MemoryStore:
    """Single-writer append-only store with in-memory index.

    Appends are serialized and fsynced before returning; readers see a
    consistent prefix. ``clock`` provides envelope timestamps when the
    caller does not pass one explicitly (engines pass logical clocks so
    audit exports are byte-reproducible).
    """

    def __init__(self, path, clock=None, validator: Optional[ContractValidator] = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._validator = validator
        self._lock = threading.Lock()
        self._envelopes: list = []
        self._by_encounter: dict = {}          # encounter_id -> [envelope]
        self._records_by_clinician: dict = {}  # clinician_id -> [cycle_record payload]
        self._all_records: list = []
        self._snapshot_by_clinician: dict = {}  # clinician_id -> latest snapshot envelope
        self._load()
        self._handle = open(self.path, "a", encoding="utf-8")

    def _index(self, envelope: dict) -> None:
        payload = envelope["payload"]
        encounter_id = payload.get("encounter_id")
        if encounter_id is not None:
            self._by_encounter.setdefault(encounter_id, []).append(envelope)
        if envelope["kind"] == "cycle_record":
            self._all_records.append(payload)
            clinician = payload["record"].get("clinician_id")
            self._records_by_clinician.setdefault(clinician, []).append(payload)
        elif envelope["kind"] == "preference_snapshot":
            self._snapshot_by_clinician[payload.get("clinician_id")] = envelope

    def close(self) -> None:
        self._handle.close()

    # -- loading ------------------------------------------------------------

    def _load(self) -> None:
        if not self.path.exists():
            self.path.touch()
            return
        raw = self.path.read_bytes()
        if not raw:
            return
        valid_bytes = 0
        lines = raw.split(b"\n")
        trailing_newline = raw.endswith(b"\n")
        if trailing_newline:
            lines = lines[:-1]
        for i, line in enumerate(lines):
            is_last = i == len(lines) - 1
            torn_candidate = is_last and not trailing_newline
            try:
                envelope = json.loads(line.decode("utf-8"))
                if not isinstance(envelope, dict):
                    raise ValueError("envelope is not an object")
                offset = envelope["offset"]
                kind = envelope["kind"]
                payload = envelope["payload"]
                stored_hash = envelope["content_hash"]
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                if torn_candidate:
                    break  # torn final record: ignore and truncate
                raise IntegrityError(i, f"unreadable envelope: {exc}") from exc
            if offset != i:
                raise IntegrityError(i, f"offset {offset} out of sequence")
            if kind not in KINDS:
                raise IntegrityError(i, f"unknown kind {kind!r}")
            if payload_hash(payload) != stored_hash:
                raise IntegrityError(i, "content hash mismatch")
            self._envelopes.append(envelope)
            self._index(envelope)
            valid_bytes += len(line) + 1
        if valid_bytes < len(raw):
            with open(self.path, "r+b") as handle:
                handle.truncate(valid_bytes)

    # -- appending ----------------------------------------------------------

    def _now(self) -> float:
        if self._clock is not None:
            return float(self._clock())
        return time.time()

    def append(self, kind: str, payload: Any, timestamp: Optional[float] = None) -> int:
        return self.append_many([(kind, payload, timestamp)])[0]

    def append_many(self, entries: Iterable) -> list:
        """Append a group of envelopes atomically: all become durable or none."""
        with self._lock:
            start_offset = len(self._envelopes)
            envelopes = []
            lines = []
            for i, (kind, payload, timestamp) in enumerate(entries):
                if kind not in KINDS:
                    raise ValueError(f"unknown envelope kind {kind!r}")
                self._validate_payload(kind, payload)
                envelope = {
                    "offset": start_offset + i,
                    "timestamp": timestamp if timestamp is not None else self._now(),
                    "kind": kind,
                    "payload": payload,
                    "content_hash": payload_hash(payload),
                }
                envelopes.append(envelope)
                lines.append(canonical_json(envelope) + "\n")
            if not envelopes:
                return []
            position = self._handle.seek(0, os.SEEK_END)
            try:
                self._handle.write("".join(lines))
                self._handle.flush()
                os.fsync(self._handle.fileno())
            except OSError as exc:
                try:
                    self._handle.truncate(position)
                except OSError:
                    pass
                raise StorageError(f"append failed: {exc}") from exc
            self._envelopes.extend(envelopes)
            for envelope in envelopes:
                self._index(envelope)
            return [e["offset"] for e in envelopes]

    def _validate_payload(self, kind: str, payload: Any) -> None:
        if not isinstance(payload, dict):
            raise ValueError(f"{kind} payload must be an object")
        if kind == "cycle_record":
            missing = {"encounter_id", "record"} - payload.keys()
        elif kind == "note":
            missing = {"encounter_id", "cycle_id", "clinician_id", "text"} - payload.keys()
        else:
            missing = {"clinician_id", "state"} - payload.keys()
        if missing:
            raise ValueError(f"{kind} payload missing {sorted(missing)}")
        if self._validator is not None and kind == "cycle_record":
            checked = self._validator.validate_message("cycle_record", payload["record"])
            if not checked.ok:
                raise ValueError(f"cycle_record payload invalid: {checked.errors[:3]}")

    # -- reading ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._envelopes)

    def envelopes(self, kind: Optional[str] = None) -> list:
        with self._lock:
            if kind is None:
                return list(self._envelopes)
            return [e for e in self._envelopes if e["kind"] == kind]

    def get(self, offset: int) -> dict:
        with self._lock:
            return self._envelopes[offset]

    def context_window(self, encounter_id: str, n: int = 3) -> ShortTermContext:
        """The n most recent notes for the encounter, most-recent-first."""
        if n < 0:
            raise ValueError("n must be >= 0")
        notes = []
        offsets = []
        last_settings = None
        with self._lock:
            for envelope in self._by_encounter.get(encounter_id, ()):
                kind = envelope["kind"]
                payload = envelope["payload"]
                if kind == "note":
                    notes.append(payload["text"])
                    offsets.append(envelope["offset"])
                elif kind == "cycle_record":
                    record = payload["record"]
                    if record.get("status") == "accepted" and record.get("accepted_settings"):
                        raw = record["accepted_settings"]
                        last_settings = VentilatorSettings(
                            mode=raw["mode"],
                            **{p: raw.get(p) for p in
                               ("peep", "fio2", "pressure_support", "inspiratory_pressure", "resp_rate_set")})
        notes = notes[::-1][:n]
        offsets = offsets[::-1][:n]
        return ShortTermContext(notes=tuple(notes), last_accepted_settings=last_settings,
                                note_offsets=tuple(offsets))

    def load_preference_state(self, clinician_id: str,
                              hyperparams: Optional[BanditHyperparams] = None) -> PreferenceState:
        """Most recent snapshot for the clinician, or a fresh state if none exists."""
        with self._lock:
            latest = self._snapshot_by_clinician.get(clinician_id)
        if latest is None:
            return PreferenceState.fresh(clinician_id, hyperparams)
        return PreferenceState.from_payload(latest["payload"]["state"])

    def cycle_records(self, encounter_id: Optional[str] = None,
                      clinician_id: Optional[str] = None) -> list:
        """Cycle-record payloads in append order, optionally filtered."""
        with self._lock:
            if clinician_id is not None:
                rows = list(self._records_by_clinician.get(clinician_id, ()))
                if encounter_id is not None:
                    rows = [p for p in rows if p.get("encounter_id") == encounter_id]
                return rows
            if encounter_id is not None:
                return [e["payload"] for e in self._by_encounter.get(encounter_id, ())
                        if e["kind"] == "cycle_record"]
            return list(self._all_records)

    def export_trail(self, encounter_id: str) -> dict:
        """Full evidence trail for one encounter as a JSON-ready document."""
        with self._lock:
            envelopes = list(self._by_encounter.get(encounter_id, ()))
        return {"encounter_id": encounter_id, "envelopes": envelopes}
