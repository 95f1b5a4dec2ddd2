"""Uniform agent invocation with pluggable backends and failure accounting.

Every reasoning role is called through :func:`invoke_agent`, which
validates the input against the role's input schema, runs the configured
backend, validates the output against the role's output schema, and
retries a bounded number of times when the backend emits a malformed
payload. Scripted backends make the whole pipeline deterministic and
runnable without any model API; the remote backend speaks a generic
chat-completion protocol configured by environment variables.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional

from ..contracts import ContractValidator, MessageValidation, to_payload

MAX_RETRY_CEILING = 5


class AgentRole(str, Enum):
    WAVEFORM_ANALYZER = "waveform_analyzer"
    DETECTION = "detection"
    PHASE_GOAL_MANAGER = "phase_goal_manager"
    GATE = "gate"
    STRATEGY_SELECTOR = "strategy_selector"
    MODE_SELECT = "mode_select"
    PARAMETER_PLANNER = "parameter_planner"
    REFLECT = "reflect"
    NOTE_GENERATOR = "note_generator"


# role -> (input schema id, output schema id); exactly one of each per role.
ROLE_SCHEMAS: Mapping[AgentRole, tuple] = {
    AgentRole.WAVEFORM_ANALYZER: ("waveform_segment", "waveform_cues"),
    AgentRole.DETECTION: ("detection_input", "state_summary"),
    AgentRole.PHASE_GOAL_MANAGER: ("phase_goal_input", "phase_goals"),
    AgentRole.GATE: ("gate_input", "branch_decision"),
    AgentRole.STRATEGY_SELECTOR: ("strategy_input", "strategy_choice"),
    AgentRole.MODE_SELECT: ("mode_select_input", "mode_choice"),
    AgentRole.PARAMETER_PLANNER: ("planner_input", "candidate_set"),
    AgentRole.REFLECT: ("reflect_input", "revision_directive"),
    AgentRole.NOTE_GENERATOR: ("note_input", "note_output"),
}


class RoleFailure(Exception):
    """Every attempt for a role produced schema-violating output."""

    def __init__(self, role: AgentRole, attempts: int, last: MessageValidation):
        self.role = role
        self.attempts = attempts
        self.last = last
        detail = "; ".join(f"{e.path}: expected {e.expected}, found {e.found}" for e in last.errors[:3])
        super().__init__(f"{role.value} failed after {attempts} attempts ({detail})")


class BackendUnavailable(Exception):
    """The backend could not be reached at all."""


class FeasibilityExhausted(Exception):
    """The planner found no candidate satisfying bounds and constraints."""


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_ms: float = 0.0

    def __post_init__(self):
        if not (0 <= self.max_retries <= MAX_RETRY_CEILING):
            raise ValueError(f"max_retries must be within [0, {MAX_RETRY_CEILING}]")
        if self.backoff_ms < 0:
            raise ValueError("backoff_ms must be >= 0")


@dataclass
class _RoleCounters:
    calls: int = 0
    malformed_outputs: int = 0
    failures_after_retry: int = 0


@dataclass
class InvocationStats:
    """Thread-safe counters for calls, malformed outputs, and hard failures."""

    per_role: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _bucket(self, role: AgentRole) -> _RoleCounters:
        return self.per_role.setdefault(role.value, _RoleCounters())

    def record_call(self, role: AgentRole) -> None:
        with self._lock:
            self._bucket(role).calls += 1

    def record_malformed(self, role: AgentRole) -> None:
        with self._lock:
            self._bucket(role).malformed_outputs += 1

    def record_failure(self, role: AgentRole) -> None:
        with self._lock:
            self._bucket(role).failures_after_retry += 1

    @property
    def calls(self) -> int:
        return sum(c.calls for c in self.per_role.values())

    @property
    def malformed_outputs(self) -> int:
        return sum(c.malformed_outputs for c in self.per_role.values())

    @property
    def failures_after_retry(self) -> int:
        return sum(c.failures_after_retry for c in self.per_role.values())

    def calls_for(self, role: AgentRole) -> int:
        return self.per_role.get(role.value, _RoleCounters()).calls

    def snapshot(self) -> dict:
        with self._lock:
            return {
                role: {"calls": c.calls, "malformed_outputs": c.malformed_outputs,
                       "failures_after_retry": c.failures_after_retry}
                for role, c in sorted(self.per_role.items())
            }


class Backend:
    """One backend serves all roles: payload in, payload out."""

    def run(self, role: AgentRole, payload: Any) -> Any:  # pragma: no cover - interface
        raise NotImplementedError


def invoke_agent(role: AgentRole, input_value: Any, backend: Backend,
                 policy: RetryPolicy, stats: InvocationStats,
                 validator: ContractValidator) -> Any:
    """Run one role invocation with schema checks on both sides.

    Returns the typed, validated output. Raises RoleFailure when every
    attempt produced malformed output, BackendUnavailable when the backend
    cannot be reached, and ValueError when the *input* violates its schema
    (a caller bug, not a backend fault).
    """
    in_schema, out_schema = ROLE_SCHEMAS[role]
    payload = to_payload(input_value)
    checked = validator.validate_message(in_schema, payload)
    if not checked.ok:
        raise ValueError(f"input for {role.value} violates {in_schema}: {checked.errors[:3]}")

    stats.record_call(role)
    attempts = policy.max_retries + 1
    last: Optional[MessageValidation] = None
    for attempt in range(attempts):
        raw = backend.run(role, payload)
        result = validator.validate_message(out_schema, raw)
        if result.ok:
            return result.value
        stats.record_malformed(role)
        last = result
        if attempt + 1 < attempts and policy.backoff_ms:
            time.sleep(policy.backoff_ms / 1000.0)
    stats.record_failure(role)
    raise RoleFailure(role, attempts, last)
