"""Domain types and the schema-validation layer for inter-agent messages.

Every value exchanged between pipeline stages, persisted to the audit log,
or sent over the wire is one of the frozen dataclasses below. Each type has
a closed schema (unknown fields are rejected) registered in ``SCHEMAS``;
``validate_message`` turns an untyped payload tree into a typed value or a
list of field-level errors without ever raising on malformed input.

The JSON documents published under ``schemas/v1/`` are generated from the
same ``SCHEMAS`` table, so code and published contract cannot drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Mapping, Optional

# ---------------------------------------------------------------------------
# Fixed vocabularies

SETTING_PARAMS = ("peep", "fio2", "pressure_support", "inspiratory_pressure", "resp_rate_set")

SEVERITIES = ("none", "mild", "moderate", "severe")
_SEVERITY_RANK = {s: i for i, s in enumerate(SEVERITIES)}

PHASES = ("acute", "stabilization", "weaning")

GOALS = (
    "improve_oxygenation",
    "normalize_ventilation",
    "lung_protection",
    "improve_synchrony",
    "hemodynamic_stability",
    "reduce_support",
    "maintain_stability",
)

STRATEGIES = (
    "oxygenation",
    "ventilation_acid_base",
    "lung_protection",
    "synchrony_comfort",
    "hemodynamics",
    "weaning",
)

ASYNCHRONY_PATTERNS = ("sawtooth", "scooped_plateau", "double_trigger", "ineffective_effort", "none")

WAVEFORM_QUALITIES = ("good", "degraded", "unusable")

FEEDBACK_REASONS = ("wrong_priority", "wrong_mode", "parameter_magnitude", "feasibility", "other")

CYCLE_STATUSES = ("accepted", "hold", "exhausted", "failed")

RESUME_STAGES = ("strategy", "mode_select", "parameter_plan")

CONSTRAINT_KINDS = (
    "param_ceiling",
    "param_floor",
    "max_step",
    "forbid_parameter",
    "forbid_mode",
    "forbid_strategy",
    "forbid_repeat",
)

# The twelve long-term preference categories, in canonical arm order.
PREFERENCE_CATEGORIES = (
    "mode_level_change",
    "stay_in_mode",
    "conservative_small_step",
    "target_driven_assertive",
    "prio_oxygenation",
    "prio_ventilation_acid_base",
    "prio_lung_protection",
    "prio_hemodynamics",
    "prio_synchrony_comfort",
    "prio_weaning",
    "single_key_parameter_first",
    "defer_when_insufficient",
)

# Dimension of the context feature vector carried in CycleContext.
FEATURE_DIM = 12

# Bound on how many parameters a single proposal may touch.
MAX_SETTING_UPDATES = 3

# Evidence refs in a StateSummary must point at one of these sources.
_STATE_FIELDS = (
    "spo2", "heart_rate", "map", "ph", "paco2", "pao2",
    "tidal_volume_obs", "resp_rate_obs", "weight_kg",
)
EVIDENCE_REFS = _STATE_FIELDS + ("fio2_set",) + tuple(
    f"waveform.{p}" for p in ASYNCHRONY_PATTERNS if p != "none"
) + ("waveform.quality",)


def severity_rank(severity: str) -> int:
    return _SEVERITY_RANK[severity]


def canonical_json(payload: Any) -> str:
    """Canonical encoding used for hashing and byte-stable persistence."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Mode registry


class UnknownModeError(KeyError):
    """A settings or proposal value references a mode not in the registry."""


@dataclass(frozen=True)
class ModeSpec:
    id: str
    display_name: str
    brand: str
    applicable: frozenset
    bounds: Mapping[str, tuple]      # param -> (min, max)
    max_delta: Mapping[str, float]   # param -> largest per-cycle change


@dataclass(frozen=True)
class ModeRegistry:
    """Per-mode applicability masks plus bounds and per-cycle delta limits."""

    modes: tuple

    def __post_init__(self):
        if len(self.modes) < 4:
            raise ValueError("mode registry requires at least 4 modes")
        for spec in self.modes:
            for param, (lo, hi) in spec.bounds.items():
                if not lo < hi:
                    raise ValueError(f"{spec.id}.{param}: bounds min must be < max")
            for param, delta in spec.max_delta.items():
                if not delta > 0:
                    raise ValueError(f"{spec.id}.{param}: delta must be > 0")

    def __contains__(self, mode_id: str) -> bool:
        return any(m.id == mode_id for m in self.modes)

    def get(self, mode_id: str) -> ModeSpec:
        for spec in self.modes:
            if spec.id == mode_id:
                return spec
        raise UnknownModeError(mode_id)

    def mode_ids(self) -> tuple:
        return tuple(m.id for m in self.modes)

    @staticmethod
    def from_config(registry_cfg: Mapping, limits_cfg: Mapping) -> "ModeRegistry":
        """Build from mode_registry.json plus the global safety_limits.json tables."""
        bounds = {p: tuple(v) for p, v in limits_cfg["bounds"].items()}
        deltas = {p: float(v) for p, v in limits_cfg["max_cycle_delta"].items()}
        modes = []
        for entry in registry_cfg["modes"]:
            applicable = frozenset(entry["applicable"])
            mode_bounds = dict(bounds)
            for p, v in entry.get("bounds_override", {}).items():
                mode_bounds[p] = tuple(v)
            mode_deltas = dict(deltas)
            for p, v in entry.get("delta_override", {}).items():
                mode_deltas[p] = float(v)
            modes.append(ModeSpec(
                id=entry["id"],
                display_name=entry["display_name"],
                brand=entry["brand"],
                applicable=applicable,
                bounds={p: mode_bounds[p] for p in applicable},
                max_delta={p: mode_deltas[p] for p in applicable},
            ))
        return ModeRegistry(modes=tuple(modes))


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class PatientState:
    """Bedside state variables at one point in an encounter."""

    timestamp: float
    weight_kg: float
    spo2: Optional[float] = None
    heart_rate: Optional[float] = None
    map: Optional[float] = None
    ph: Optional[float] = None
    paco2: Optional[float] = None
    pao2: Optional[float] = None
    tidal_volume_obs: Optional[float] = None
    resp_rate_obs: Optional[float] = None
    waveform_ref: Optional[str] = None

    def missing_fields(self, names) -> tuple:
        return tuple(n for n in names if getattr(self, n) is None)


@dataclass(frozen=True)
class VentilatorSettings:
    """Action variables: ventilation mode plus the numeric settings it exposes.

    Parameters inapplicable under the mode are ``None`` and serialize as absent.
    """

    mode: str
    peep: Optional[float] = None
    fio2: Optional[float] = None
    pressure_support: Optional[float] = None
    inspiratory_pressure: Optional[float] = None
    resp_rate_set: Optional[float] = None

    def values(self) -> dict:
        """Present parameter values, in canonical parameter order."""
        return {p: getattr(self, p) for p in SETTING_PARAMS if getattr(self, p) is not None}

    def with_updates(self, updates: Mapping[str, float], mode: Optional[str] = None) -> "VentilatorSettings":
        merged = {p: getattr(self, p) for p in SETTING_PARAMS}
        merged.update(updates)
        return VentilatorSettings(mode=mode or self.mode, **merged)


@dataclass(frozen=True)
class WaveformCues:
    """Structured bedside cues extracted from pressure/flow traces."""

    quality: str
    asynchrony_patterns: tuple
    suspicious_events: tuple = ()
    observed_state: str = ""
    uncertainty: float = 0.0


@dataclass(frozen=True)
class Abnormality:
    code: str
    severity: str
    evidence: tuple


@dataclass(frozen=True)
class StateSummary:
    """Detection output: graded abnormalities with evidence references."""

    abnormalities: tuple
    evidence_sufficient: bool
    narrative: str = ""

    def max_severity(self) -> str:
        worst = "none"
        for ab in self.abnormalities:
            if severity_rank(ab.severity) > severity_rank(worst):
                worst = ab.severity
        return worst


@dataclass(frozen=True)
class PhaseGoals:
    phase: str
    primary_goal: str
    secondary_goals: tuple = ()


@dataclass(frozen=True)
class BranchDecision:
    branch: str  # "hold" | "adjust"
    reason: str


@dataclass(frozen=True)
class Proposal:
    """One round's executable setting update, tagged with preference categories."""

    cycle_id: str
    round_index: int
    strategy: str
    setting_updates: Mapping[str, float]  # param -> proposed absolute value
    category_tags: tuple
    rationale: str
    mode_change: Optional[str] = None

    def updates_key(self) -> str:
        """Canonical identity of the proposed change, for repeat suppression."""
        return canonical_json({"mode": self.mode_change, "updates": dict(self.setting_updates)})


@dataclass(frozen=True)
class ClinicianFeedback:
    decision: str  # "accept" | "reject"
    reason_category: Optional[str] = None
    disputed_parameters: tuple = ()
    rationale: str = ""


@dataclass(frozen=True)
class PreferenceSignal:
    """Cycle-end evidence about the clinician's tuning style."""

    evidenced_by_accept: tuple = ()
    evidenced_only_by_reject: tuple = ()


@dataclass(frozen=True)
class TraceEntry:
    """One proposal-feedback exchange within a cycle."""

    proposal: Proposal
    feedback: ClinicianFeedback


@dataclass(frozen=True)
class CycleContext:
    """Decision input assembled from the data hub and layered memory."""

    current_state: PatientState
    current_settings: VentilatorSettings
    short_term: tuple = ()
    long_term_refs: tuple = ()
    feature_vector: tuple = ()


@dataclass(frozen=True)
class CycleRecord:
    """Full audit record of one adjustment cycle."""

    cycle_id: str
    clinician_id: str
    context: CycleContext
    trace: tuple  # ((Proposal, ClinicianFeedback), ...)
    rounds: int
    accepted_settings: Optional[VentilatorSettings]
    note: str
    preference_signal: PreferenceSignal
    status: str


@dataclass(frozen=True)
class Constraint:
    """One structured revision constraint accumulated across rejected rounds."""

    kind: str
    parameter: Optional[str] = None
    value: Optional[float] = None
    mode: Optional[str] = None
    strategy: Optional[str] = None
    updates_key: Optional[str] = None


@dataclass(frozen=True)
class RevisionDirective:
    resume_stage: str
    constraints: tuple


# Role IO envelopes ---------------------------------------------------------


@dataclass(frozen=True)
class WaveformSegment:
    """Raw numeric pressure/flow series for the waveform analyzer."""

    sample_rate_hz: float
    pressure: tuple
    flow: tuple


@dataclass(frozen=True)
class DetectionInput:
    state: PatientState
    cues: Optional[WaveformCues] = None
    settings: Optional[VentilatorSettings] = None


@dataclass(frozen=True)
class PhaseGoalInput:
    state: PatientState
    settings: VentilatorSettings
    summary: StateSummary


@dataclass(frozen=True)
class GateInput:
    summary: StateSummary
    goals: PhaseGoals


@dataclass(frozen=True)
class StrategyInput:
    summary: StateSummary
    goals: PhaseGoals
    settings: VentilatorSettings
    forbidden_strategies: tuple = ()


@dataclass(frozen=True)
class StrategyChoice:
    strategy: str
    rationale: str


@dataclass(frozen=True)
class ModeSelectInput:
    settings: VentilatorSettings
    summary: StateSummary
    goals: PhaseGoals
    strategy: str
    forbidden_modes: tuple = ()


@dataclass(frozen=True)
class ModeChoice:
    mode_change: Optional[str]
    rationale: str


@dataclass(frozen=True)
class PlannerInput:
    cycle_id: str
    round_index: int
    strategy: str
    goals: PhaseGoals
    current: VentilatorSettings
    summary: StateSummary
    category_scores: Mapping[str, float]
    constraints: tuple = ()
    mode_change: Optional[str] = None


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple


@dataclass(frozen=True)
class ReflectInput:
    feedback: ClinicianFeedback
    rejected: Proposal
    current: VentilatorSettings


@dataclass(frozen=True)
class NoteInput:
    cycle_id: str
    clinician_id: str
    status: str
    gate_reason: str
    trace: tuple
    accepted_settings: Optional[VentilatorSettings] = None
    goals: Optional[PhaseGoals] = None
    summary: Optional[StateSummary] = None


@dataclass(frozen=True)
class NoteOutput:
    note: str
    signal: PreferenceSignal


# ---------------------------------------------------------------------------
# Serialization


def to_payload(value: Any) -> Any:
    """Convert a domain value to a JSON-ready tree. ``None`` fields are omitted."""
    if is_dataclass(value) and not isinstance(value, type):
        out = {}
        for f in fields(value):
            v = getattr(value, f.name)
            if v is None:
                continue
            out[f.name] = to_payload(v)
        return out
    if isinstance(value, Mapping):
        return {k: to_payload(v) for k, v in sorted(value.items())}
    if isinstance(value, frozenset):
        return sorted(to_payload(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [to_payload(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Schema table (closed contracts)
#
# Schemas are expressed in a small JSON-Schema subset: type, properties,
# required, additionalProperties, enum, minimum/maximum/exclusiveMinimum,
# minLength, items, minItems/maxItems, uniqueItems, $ref, nullable,
# maxProperties, propertyNames.


def _num(minimum=None, maximum=None, nullable=False, exclusive_minimum=None):
    s: dict = {"type": "number"}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    if exclusive_minimum is not None:
        s["exclusiveMinimum"] = exclusive_minimum
    if nullable:
        s["nullable"] = True
    return s


def _int(minimum=None, maximum=None):
    s: dict = {"type": "integer"}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    return s


def _str(non_empty=False, nullable=False):
    s: dict = {"type": "string"}
    if non_empty:
        s["minLength"] = 1
    if nullable:
        s["nullable"] = True
    return s


def _bool():
    return {"type": "boolean"}


def _enum(values, nullable=False):
    s: dict = {"type": "string", "enum": list(values)}
    if nullable:
        s["nullable"] = True
    return s


def _arr(items, min_items=None, max_items=None, unique=False):
    s: dict = {"type": "array", "items": items}
    if min_items is not None:
        s["minItems"] = min_items
    if max_items is not None:
        s["maxItems"] = max_items
    if unique:
        s["uniqueItems"] = True
    return s


def _ref(name, nullable=False):
    s: dict = {"$ref": name}
    if nullable:
        s["nullable"] = True
    return s


def _obj(properties, required=None):
    return {
        "type": "object",
        "properties": properties,
        "required": sorted(required if required is not None else properties.keys()),
        "additionalProperties": False,
    }


def _setting_map(max_properties=None):
    s: dict = {
        "type": "object",
        "propertyNames": {"enum": list(SETTING_PARAMS)},
        "additionalProperties": {"type": "number"},
    }
    if max_properties is not None:
        s["maxProperties"] = max_properties
    return s


SCHEMAS: dict = {
    "patient_state": _obj(
        {
            "timestamp": _num(minimum=0),
            "weight_kg": _num(exclusive_minimum=0),
            "spo2": _num(0, 100, nullable=True),
            "heart_rate": _num(0, nullable=True),
            "map": _num(0, nullable=True),
            "ph": _num(6.0, 8.0, nullable=True),
            "paco2": _num(0, nullable=True),
            "pao2": _num(0, nullable=True),
            "tidal_volume_obs": _num(0, nullable=True),
            "resp_rate_obs": _num(0, nullable=True),
            "waveform_ref": _str(nullable=True),
        },
        required=["timestamp", "weight_kg"],
    ),
    "ventilator_settings": _obj(
        {
            "mode": _str(non_empty=True),
            "peep": _num(nullable=True),
            "fio2": _num(nullable=True),
            "pressure_support": _num(nullable=True),
            "inspiratory_pressure": _num(nullable=True),
            "resp_rate_set": _num(nullable=True),
        },
        required=["mode"],
    ),
    "waveform_cues": _obj(
        {
            "quality": _enum(WAVEFORM_QUALITIES),
            "asynchrony_patterns": _arr(_enum(ASYNCHRONY_PATTERNS), min_items=1, unique=True),
            "suspicious_events": _arr(_str()),
            "observed_state": _str(),
            "uncertainty": _num(0.0, 1.0),
        },
        required=["quality", "asynchrony_patterns", "uncertainty"],
    ),
    "abnormality": _obj(
        {
            "code": _str(non_empty=True),
            "severity": _enum(SEVERITIES),
            "evidence": _arr(_enum(EVIDENCE_REFS), min_items=1),
        }
    ),
    "state_summary": _obj(
        {
            "abnormalities": _arr(_ref("abnormality")),
            "evidence_sufficient": _bool(),
            "narrative": _str(),
        },
        required=["abnormalities", "evidence_sufficient"],
    ),
    "phase_goals": _obj(
        {
            "phase": _enum(PHASES),
            "primary_goal": _enum(GOALS),
            "secondary_goals": _arr(_enum(GOALS), unique=True),
        },
        required=["phase", "primary_goal"],
    ),
    "branch_decision": _obj(
        {
            "branch": _enum(("hold", "adjust")),
            "reason": _str(non_empty=True),
        }
    ),
    "proposal": _obj(
        {
            "cycle_id": _str(non_empty=True),
            "round_index": _int(minimum=1),
            "strategy": _enum(STRATEGIES),
            "mode_change": _str(nullable=True),
            "setting_updates": _setting_map(max_properties=MAX_SETTING_UPDATES),
            "category_tags": _arr(_enum(PREFERENCE_CATEGORIES), min_items=1, unique=True),
            "rationale": _str(),
        },
        required=["cycle_id", "round_index", "strategy", "setting_updates", "category_tags", "rationale"],
    ),
    "clinician_feedback": _obj(
        {
            "decision": _enum(("accept", "reject")),
            "reason_category": _enum(FEEDBACK_REASONS, nullable=True),
            "disputed_parameters": _arr(_enum(SETTING_PARAMS), unique=True),
            "rationale": _str(),
        },
        required=["decision"],
    ),
    "preference_signal": _obj(
        {
            "evidenced_by_accept": _arr(_enum(PREFERENCE_CATEGORIES), unique=True),
            "evidenced_only_by_reject": _arr(_enum(PREFERENCE_CATEGORIES), unique=True),
        }
    ),
    "cycle_context": _obj(
        {
            "current_state": _ref("patient_state"),
            "current_settings": _ref("ventilator_settings"),
            "short_term": _arr(_str()),
            "long_term_refs": _arr(_int(minimum=0)),
            "feature_vector": _arr(_num(), min_items=FEATURE_DIM, max_items=FEATURE_DIM),
        }
    ),
    "trace_entry": _obj(
        {
            "proposal": _ref("proposal"),
            "feedback": _ref("clinician_feedback"),
        }
    ),
    "cycle_record": _obj(
        {
            "cycle_id": _str(non_empty=True),
            "clinician_id": _str(non_empty=True),
            "context": _ref("cycle_context"),
            "trace": _arr(_ref("trace_entry")),
            "rounds": _int(minimum=0),
            "accepted_settings": _ref("ventilator_settings", nullable=True),
            "note": _str(),
            "preference_signal": _ref("preference_signal"),
            "status": _enum(CYCLE_STATUSES),
        },
        required=["cycle_id", "clinician_id", "context", "trace", "rounds", "note",
                  "preference_signal", "status"],
    ),
    "constraint": _obj(
        {
            "kind": _enum(CONSTRAINT_KINDS),
            "parameter": _enum(SETTING_PARAMS, nullable=True),
            "value": _num(nullable=True),
            "mode": _str(nullable=True),
            "strategy": _enum(STRATEGIES, nullable=True),
            "updates_key": _str(nullable=True),
        },
        required=["kind"],
    ),
    "revision_directive": _obj(
        {
            "resume_stage": _enum(RESUME_STAGES),
            "constraints": _arr(_ref("constraint"), min_items=1),
        }
    ),
    "waveform_segment": _obj(
        {
            "sample_rate_hz": _num(exclusive_minimum=0),
            "pressure": _arr(_num()),
            "flow": _arr(_num()),
        }
    ),
    "detection_input": _obj(
        {
            "state": _ref("patient_state"),
            "cues": _ref("waveform_cues", nullable=True),
            "settings": _ref("ventilator_settings", nullable=True),
        },
        required=["state"],
    ),
    "phase_goal_input": _obj(
        {
            "state": _ref("patient_state"),
            "settings": _ref("ventilator_settings"),
            "summary": _ref("state_summary"),
        }
    ),
    "gate_input": _obj(
        {
            "summary": _ref("state_summary"),
            "goals": _ref("phase_goals"),
        }
    ),
    "strategy_input": _obj(
        {
            "summary": _ref("state_summary"),
            "goals": _ref("phase_goals"),
            "settings": _ref("ventilator_settings"),
            "forbidden_strategies": _arr(_enum(STRATEGIES), unique=True),
        },
        required=["summary", "goals", "settings"],
    ),
    "strategy_choice": _obj(
        {
            "strategy": _enum(STRATEGIES),
            "rationale": _str(non_empty=True),
        }
    ),
    "mode_select_input": _obj(
        {
            "settings": _ref("ventilator_settings"),
            "summary": _ref("state_summary"),
            "goals": _ref("phase_goals"),
            "strategy": _enum(STRATEGIES),
            "forbidden_modes": _arr(_str(), unique=True),
        },
        required=["settings", "summary", "goals", "strategy"],
    ),
    "mode_choice": _obj(
        {
            "mode_change": _str(nullable=True),
            "rationale": _str(non_empty=True),
        },
        required=["rationale"],
    ),
    "planner_input": _obj(
        {
            "cycle_id": _str(non_empty=True),
            "round_index": _int(minimum=1),
            "strategy": _enum(STRATEGIES),
            "goals": _ref("phase_goals"),
            "current": _ref("ventilator_settings"),
            "summary": _ref("state_summary"),
            "category_scores": {
                "type": "object",
                "propertyNames": {"enum": list(PREFERENCE_CATEGORIES)},
                "additionalProperties": {"type": "number"},
            },
            "constraints": _arr(_ref("constraint")),
            "mode_change": _str(nullable=True),
        },
        required=["cycle_id", "round_index", "strategy", "goals", "current", "summary",
                  "category_scores"],
    ),
    "candidate_set": _obj(
        {
            "candidates": _arr(_ref("proposal"), min_items=1),
        }
    ),
    "reflect_input": _obj(
        {
            "feedback": _ref("clinician_feedback"),
            "rejected": _ref("proposal"),
            "current": _ref("ventilator_settings"),
        }
    ),
    "note_input": _obj(
        {
            "cycle_id": _str(non_empty=True),
            "clinician_id": _str(non_empty=True),
            "status": _enum(CYCLE_STATUSES),
            "gate_reason": _str(),
            "trace": _arr(_ref("trace_entry")),
            "accepted_settings": _ref("ventilator_settings", nullable=True),
            "goals": _ref("phase_goals", nullable=True),
            "summary": _ref("state_summary", nullable=True),
        },
        required=["cycle_id", "clinician_id", "status", "gate_reason", "trace"],
    ),
    "note_output": _obj(
        {
            "note": _str(non_empty=True),
            "signal": _ref("preference_signal"),
        }
    ),
}


# ---------------------------------------------------------------------------
# Structural validation


@dataclass(frozen=True)
class FieldError:
    path: str
    expected: str
    found: str


@dataclass(frozen=True)
class MessageValidation:
    """Outcome of validating one payload against one schema."""

    schema_id: str
    value: Any = None
    errors: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.errors


def _found(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return f"boolean {value}"
    if isinstance(value, (int, float)):
        return f"number {value!r}"
    if isinstance(value, str):
        return f"string {value!r}" if len(value) <= 40 else f"string of length {len(value)}"
    if isinstance(value, list):
        return f"array of length {len(value)}"
    if isinstance(value, dict):
        return f"object with keys {sorted(value.keys())[:6]}"
    return type(value).__name__


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_node(schema: Mapping, value: Any, path: str, errors: list) -> None:
    if "$ref" in schema:
        if value is None and schema.get("nullable"):
            return
        target = SCHEMAS.get(schema["$ref"])
        if target is None:
            errors.append(FieldError(path, f"schema {schema['$ref']}", "unresolvable $ref"))
            return
        _check_node(target, value, path, errors)
        return

    if value is None:
        if schema.get("nullable"):
            return
        errors.append(FieldError(path, schema.get("type", "value"), "null"))
        return

    kind = schema.get("type")
    if kind == "object":
        if not isinstance(value, dict):
            errors.append(FieldError(path, "object", _found(value)))
            return
        props = schema.get("properties")
        if props is not None:
            for req in schema.get("required", ()):
                if req not in value:
                    errors.append(FieldError(_join(path, req), "required field", "absent"))
            if schema.get("additionalProperties") is False:
                for key in value:
                    if key not in props:
                        errors.append(FieldError(_join(path, key), "no unknown fields (closed contract)", "present"))
            for key, sub in props.items():
                if key in value:
                    _check_node(sub, value[key], _join(path, key), errors)
        else:
            names = schema.get("propertyNames")
            value_schema = schema.get("additionalProperties")
            if schema.get("maxProperties") is not None and len(value) > schema["maxProperties"]:
                errors.append(FieldError(
                    path,
                    f"at most {schema['maxProperties']} entries (compactness bound |updates| <= {schema['maxProperties']})",
                    f"{len(value)} entries"))
            for key, sub_value in value.items():
                if names and key not in names["enum"]:
                    errors.append(FieldError(_join(path, key), f"key in {names['enum']}", f"key {key!r}"))
                if isinstance(value_schema, dict):
                    _check_node(value_schema, sub_value, _join(path, key), errors)
        return

    if kind == "array":
        if not isinstance(value, list):
            errors.append(FieldError(path, "array", _found(value)))
            return
        if schema.get("minItems") is not None and len(value) < schema["minItems"]:
            errors.append(FieldError(path, f"at least {schema['minItems']} items", f"{len(value)} items"))
        if schema.get("maxItems") is not None and len(value) > schema["maxItems"]:
            errors.append(FieldError(path, f"at most {schema['maxItems']} items", f"{len(value)} items"))
        if schema.get("uniqueItems"):
            seen = set()
            for item in value:
                key = canonical_json(item)
                if key in seen:
                    errors.append(FieldError(path, "unique items", f"duplicate {item!r}"))
                    break
                seen.add(key)
        for i, item in enumerate(value):
            _check_node(schema["items"], item, f"{path}[{i}]", errors)
        return

    if kind == "string":
        if not isinstance(value, str):
            errors.append(FieldError(path, "string", _found(value)))
            return
        if "enum" in schema and value not in schema["enum"]:
            errors.append(FieldError(path, f"one of {schema['enum']}", _found(value)))
        if schema.get("minLength") and len(value) < schema["minLength"]:
            errors.append(FieldError(path, "non-empty required", "empty string"))
        return

    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(FieldError(path, "integer", _found(value)))
            return
    elif kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(FieldError(path, "number", _found(value)))
            return
        if not math.isfinite(value):
            errors.append(FieldError(path, "finite number", repr(value)))
            return
    else:
        if kind == "boolean" and not isinstance(value, bool):
            errors.append(FieldError(path, "boolean", _found(value)))
        return

    if schema.get("minimum") is not None and value < schema["minimum"]:
        errors.append(FieldError(path, f">= {schema['minimum']}", _found(value)))
    if schema.get("maximum") is not None and value > schema["maximum"]:
        errors.append(FieldError(path, f"<= {schema['maximum']}", _found(value)))
    if schema.get("exclusiveMinimum") is not None and value <= schema["exclusiveMinimum"]:
        errors.append(FieldError(path, f"> {schema['exclusiveMinimum']}", _found(value)))


# ---------------------------------------------------------------------------
# Typed builders (run only after structural validation passed)


def _build(schema_id: str, p: Any) -> Any:
    if p is None:
        return None
    b = _BUILDERS[schema_id]
    return b(p)


def _build_patient_state(p):
    return PatientState(
        timestamp=float(p["timestamp"]),
        weight_kg=float(p["weight_kg"]),
        spo2=p.get("spo2"), heart_rate=p.get("heart_rate"), map=p.get("map"),
        ph=p.get("ph"), paco2=p.get("paco2"), pao2=p.get("pao2"),
        tidal_volume_obs=p.get("tidal_volume_obs"), resp_rate_obs=p.get("resp_rate_obs"),
        waveform_ref=p.get("waveform_ref"),
    )


def _build_settings(p):
    return VentilatorSettings(
        mode=p["mode"],
        **{name: p.get(name) for name in SETTING_PARAMS},
    )


def _build_cues(p):
    return WaveformCues(
        quality=p["quality"],
        asynchrony_patterns=tuple(sorted(p["asynchrony_patterns"])),
        suspicious_events=tuple(p.get("suspicious_events", ())),
        observed_state=p.get("observed_state", ""),
        uncertainty=float(p["uncertainty"]),
    )


def _build_summary(p):
    return StateSummary(
        abnormalities=tuple(
            Abnormality(code=a["code"], severity=a["severity"], evidence=tuple(a["evidence"]))
            for a in p["abnormalities"]
        ),
        evidence_sufficient=p["evidence_sufficient"],
        narrative=p.get("narrative", ""),
    )


def _build_goals(p):
    return PhaseGoals(
        phase=p["phase"],
        primary_goal=p["primary_goal"],
        secondary_goals=tuple(p.get("secondary_goals", ())),
    )


def _build_proposal(p):
    return Proposal(
        cycle_id=p["cycle_id"],
        round_index=p["round_index"],
        strategy=p["strategy"],
        mode_change=p.get("mode_change"),
        setting_updates=dict(sorted(p["setting_updates"].items())),
        category_tags=tuple(sorted(p["category_tags"])),
        rationale=p["rationale"],
    )


def _build_feedback(p):
    return ClinicianFeedback(
        decision=p["decision"],
        reason_category=p.get("reason_category"),
        disputed_parameters=tuple(p.get("disputed_parameters", ())),
        rationale=p.get("rationale", ""),
    )


def _build_signal(p):
    return PreferenceSignal(
        evidenced_by_accept=tuple(sorted(p["evidenced_by_accept"])),
        evidenced_only_by_reject=tuple(sorted(p["evidenced_only_by_reject"])),
    )


def _build_context(p):
    return CycleContext(
        current_state=_build_patient_state(p["current_state"]),
        current_settings=_build_settings(p["current_settings"]),
        short_term=tuple(p["short_term"]),
        long_term_refs=tuple(p["long_term_refs"]),
        feature_vector=tuple(float(v) for v in p["feature_vector"]),
    )


def _build_trace(entries):
    return tuple(TraceEntry(_build_proposal(e["proposal"]), _build_feedback(e["feedback"]))
                 for e in entries)


def _build_record(p):
    return CycleRecord(
        cycle_id=p["cycle_id"],
        clinician_id=p["clinician_id"],
        context=_build_context(p["context"]),
        trace=_build_trace(p["trace"]),
        rounds=p["rounds"],
        accepted_settings=_build_settings(p["accepted_settings"]) if p.get("accepted_settings") else None,
        note=p["note"],
        preference_signal=_build_signal(p["preference_signal"]),
        status=p["status"],
    )


def _build_constraint(p):
    return Constraint(
        kind=p["kind"],
        parameter=p.get("parameter"),
        value=p.get("value"),
        mode=p.get("mode"),
        strategy=p.get("strategy"),
        updates_key=p.get("updates_key"),
    )


def _build_directive(p):
    return RevisionDirective(
        resume_stage=p["resume_stage"],
        constraints=tuple(_build_constraint(c) for c in p["constraints"]),
    )


_BUILDERS = {
    "patient_state": _build_patient_state,
    "ventilator_settings": _build_settings,
    "waveform_cues": _build_cues,
    "abnormality": lambda p: Abnormality(p["code"], p["severity"], tuple(p["evidence"])),
    "state_summary": _build_summary,
    "phase_goals": _build_goals,
    "branch_decision": lambda p: BranchDecision(p["branch"], p["reason"]),
    "proposal": _build_proposal,
    "clinician_feedback": _build_feedback,
    "preference_signal": _build_signal,
    "cycle_context": _build_context,
    "cycle_record": _build_record,
    "constraint": _build_constraint,
    "revision_directive": _build_directive,
    "waveform_segment": lambda p: WaveformSegment(
        float(p["sample_rate_hz"]), tuple(p["pressure"]), tuple(p["flow"])),
    "detection_input": lambda p: DetectionInput(
        _build_patient_state(p["state"]),
        _build_cues(p["cues"]) if p.get("cues") else None,
        _build_settings(p["settings"]) if p.get("settings") else None),
    "phase_goal_input": lambda p: PhaseGoalInput(
        _build_patient_state(p["state"]), _build_settings(p["settings"]), _build_summary(p["summary"])),
    "gate_input": lambda p: GateInput(_build_summary(p["summary"]), _build_goals(p["goals"])),
    "strategy_input": lambda p: StrategyInput(
        _build_summary(p["summary"]), _build_goals(p["goals"]), _build_settings(p["settings"]),
        tuple(p.get("forbidden_strategies", ()))),
    "strategy_choice": lambda p: StrategyChoice(p["strategy"], p["rationale"]),
    "mode_select_input": lambda p: ModeSelectInput(
        _build_settings(p["settings"]), _build_summary(p["summary"]), _build_goals(p["goals"]),
        p["strategy"], tuple(p.get("forbidden_modes", ()))),
    "mode_choice": lambda p: ModeChoice(p.get("mode_change"), p["rationale"]),
    "planner_input": lambda p: PlannerInput(
        cycle_id=p["cycle_id"], round_index=p["round_index"], strategy=p["strategy"],
        goals=_build_goals(p["goals"]), current=_build_settings(p["current"]),
        summary=_build_summary(p["summary"]), category_scores=dict(p["category_scores"]),
        constraints=tuple(_build_constraint(c) for c in p.get("constraints", ())),
        mode_change=p.get("mode_change")),
    "candidate_set": lambda p: CandidateSet(tuple(_build_proposal(c) for c in p["candidates"])),
    "reflect_input": lambda p: ReflectInput(_build_feedback(p["feedback"]), _build_proposal(p["rejected"]),
                                            _build_settings(p["current"])),
    "note_input": lambda p: NoteInput(
        cycle_id=p["cycle_id"], clinician_id=p["clinician_id"], status=p["status"],
        gate_reason=p["gate_reason"], trace=_build_trace(p["trace"]),
        accepted_settings=_build_settings(p["accepted_settings"]) if p.get("accepted_settings") else None,
        goals=_build_goals(p["goals"]) if p.get("goals") else None,
        summary=_build_summary(p["summary"]) if p.get("summary") else None),
    "note_output": lambda p: NoteOutput(p["note"], _build_signal(p["signal"])),
}


# ---------------------------------------------------------------------------
# Cross-field invariant checks


def _check_cues(v: WaveformCues) -> list:
    errs = []
    if "none" in v.asynchrony_patterns and len(v.asynchrony_patterns) > 1:
        errs.append(FieldError("asynchrony_patterns", "'none' mutually exclusive with other patterns",
                               str(list(v.asynchrony_patterns))))
    return errs


def _check_goals(v: PhaseGoals) -> list:
    if v.primary_goal in v.secondary_goals:
        return [FieldError("secondary_goals", "primary_goal not repeated in secondary_goals",
                           v.primary_goal)]
    return []


def _check_proposal(v: Proposal) -> list:
    errs = []
    if not v.setting_updates and v.mode_change is None:
        errs.append(FieldError("setting_updates", "non-empty unless mode_change present", "empty"))
    return errs


def _check_feedback(v: ClinicianFeedback) -> list:
    if v.decision == "reject" and v.reason_category is None:
        return [FieldError("reason_category", "required when decision is reject", "absent")]
    return []


def _check_signal(v: PreferenceSignal) -> list:
    overlap = set(v.evidenced_by_accept) & set(v.evidenced_only_by_reject)
    if overlap:
        return [FieldError("evidenced_only_by_reject", "disjoint from evidenced_by_accept",
                           str(sorted(overlap)))]
    return []


def _check_record(v: CycleRecord) -> list:
    errs = []
    if v.rounds != len(v.trace):
        errs.append(FieldError("rounds", f"equal to trace length {len(v.trace)}", str(v.rounds)))
    if v.status == "accepted":
        if not v.trace or v.trace[-1].feedback.decision != "accept":
            errs.append(FieldError("trace", "last feedback is accept when status=accepted",
                                   "missing or non-accept final feedback"))
        if v.accepted_settings is None:
            errs.append(FieldError("accepted_settings", "present when status=accepted", "absent"))
    if v.status == "hold" and v.trace:
        errs.append(FieldError("trace", "empty when status=hold", f"{len(v.trace)} entries"))
    errs.extend(_check_signal(v.preference_signal))
    return errs


def _check_context(v: CycleContext) -> list:
    errs = []
    if len(v.feature_vector) != FEATURE_DIM:
        errs.append(FieldError("feature_vector", f"dimension {FEATURE_DIM}", str(len(v.feature_vector))))
    if any(not math.isfinite(x) for x in v.feature_vector):
        errs.append(FieldError("feature_vector", "all entries finite", "non-finite entry"))
    return errs


def _check_segment(v: WaveformSegment) -> list:
    if len(v.pressure) != len(v.flow):
        return [FieldError("flow", f"same length as pressure ({len(v.pressure)})", str(len(v.flow)))]
    return []


def _check_candidates(v: CandidateSet) -> list:
    errs = []
    for i, c in enumerate(v.candidates):
        for e in _check_proposal(c):
            errs.append(FieldError(f"candidates[{i}].{e.path}", e.expected, e.found))
    return errs


_INVARIANT_CHECKS = {
    "waveform_cues": _check_cues,
    "phase_goals": _check_goals,
    "proposal": _check_proposal,
    "clinician_feedback": _check_feedback,
    "preference_signal": _check_signal,
    "cycle_record": _check_record,
    "cycle_context": _check_context,
    "waveform_segment": _check_segment,
    "candidate_set": _check_candidates,
    "detection_input": lambda v: _check_cues(v.cues) if v.cues else [],
    "reflect_input": lambda v: _check_feedback(v.feedback) + _check_proposal(v.rejected),
}


class ContractValidator:
    """Validates payload trees against the closed schema table.

    Needs a mode registry so VentilatorSettings can be checked against
    per-mode applicability and bounds.
    """

    def __init__(self, registry: ModeRegistry):
        self.registry = registry

    def validate_message(self, schema_id: str, payload: Any) -> MessageValidation:
        """Validate and build a typed value. Total: never raises on bad input."""
        if schema_id not in SCHEMAS:
            return MessageValidation(schema_id, errors=(
                FieldError("", f"registered schema id (one of {sorted(SCHEMAS)[:8]}...)",
                           f"unknown schema {schema_id!r}"),))
        errors: list = []
        _check_node(SCHEMAS[schema_id], payload, "", errors)
        if errors:
            return MessageValidation(schema_id, errors=tuple(errors))
        try:
            value = _build(schema_id, payload)
        except Exception as exc:  # defensive: validation must stay total
            return MessageValidation(schema_id, errors=(
                FieldError("", "buildable payload", f"{type(exc).__name__}: {exc}"),))
        checker = _INVARIANT_CHECKS.get(schema_id)
        if checker:
            errors = list(checker(value))
        errors.extend(self._registry_checks(schema_id, value))
        if errors:
            return MessageValidation(schema_id, errors=tuple(errors))
        return MessageValidation(schema_id, value=value)

    def _registry_checks(self, schema_id: str, value: Any) -> list:
        errs: list = []
        if schema_id == "ventilator_settings":
            errs.extend(self._check_settings(value, ""))
        elif schema_id == "cycle_record":
            if value.accepted_settings is not None:
                errs.extend(self._check_settings(value.accepted_settings, "accepted_settings."))
            errs.extend(self._check_settings(value.context.current_settings, "context.current_settings."))
        elif schema_id == "cycle_context":
            errs.extend(self._check_settings(value.current_settings, "current_settings."))
        return errs

    def _check_settings(self, settings: VentilatorSettings, prefix: str) -> list:
        errs: list = []
        try:
            spec = self.registry.get(settings.mode)
        except UnknownModeError:
            return [FieldError(prefix + "mode", f"registered mode (one of {self.registry.mode_ids()})",
                               settings.mode)]
        for param in SETTING_PARAMS:
            val = getattr(settings, param)
            if val is None:
                continue
            if param not in spec.applicable:
                errs.append(FieldError(prefix + param, f"absent ({param} inapplicable in {settings.mode})",
                                       _found(val)))
                continue
            lo, hi = spec.bounds[param]
            if not (lo <= val <= hi):
                errs.append(FieldError(prefix + param, f"within [{lo}, {hi}]", _found(val)))
        return errs


def mask_settings(settings: VentilatorSettings, registry: ModeRegistry) -> VentilatorSettings:
    """Drop parameters that are inapplicable under the settings' mode.

    Idempotent; never adds fields. Raises UnknownModeError for unregistered modes.
    """
    spec = registry.get(settings.mode)
    kept = {p: getattr(settings, p) for p in SETTING_PARAMS if p in spec.applicable}
    return VentilatorSettings(mode=settings.mode, **kept)


def export_schemas() -> dict:
    """The published schemas/v1 documents: schema id -> JSON-serializable dict."""
    docs = {}
    for schema_id, schema in SCHEMAS.items():
        doc = json.loads(json.dumps(schema))  # deep copy
        _externalize_refs(doc)
        doc = {"$id": f"vdss/v1/{schema_id}.json", **doc}
        docs[schema_id] = doc
    return docs


def _externalize_refs(node: Any) -> None:
    if isinstance(node, dict):
        if "$ref" in node and not node["$ref"].endswith(".json"):
            node["$ref"] = f"{node['$ref']}.json"
        for v in node.values():
            _externalize_refs(v)
    elif isinstance(node, list):
        for v in node:
            _externalize_refs(v)
