"""The adjustment-cycle state machine.

One cycle runs detection -> phase goals -> hold/adjust gate, then loops
strategy -> mode selection -> parameter planning -> safety checks ->
clinician review until a proposal is accepted or the round budget is
spent. The runner suspends at every review checkpoint, so a cycle can wait
for feedback without blocking other encounters. Rejections are routed
through the reflect stage, which names the minimal stage to revisit;
everything upstream of that stage is reused from the per-cycle cache.

Closure is atomic: the cycle record, the clinician-facing note, and (for
accepted cycles) exactly one preference update plus its snapshot are
appended to memory together, stamped with a logical clock derived from the
encounter so repeated runs are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .agents import (
    AgentRole,
    Backend,
    FeasibilityExhausted,
    InvocationStats,
    RetryPolicy,
    RoleFailure,
    invoke_agent,
)
from .agents.faults import FaultInjectingBackend
from .agents.scripted import ScriptedBackend, gate_decision, generate_note, reflect_route
from .bandit import (
    BanditHyperparams,
    CategoryScores,
    ContextFeaturizer,
    apply_signal_update,
    bandit_update,
    preference_scores,
)
from .config import load_config_file, load_registry
from .contracts import (
    BranchDecision,
    ClinicianFeedback,
    Constraint,
    ContractValidator,
    CycleContext,
    CycleRecord,
    DetectionInput,
    GateInput,
    ModeSelectInput,
    NoteInput,
    PatientState,
    PhaseGoalInput,
    PlannerInput,
    PreferenceSignal,
    Proposal,
    ReflectInput,
    StrategyInput,
    TraceEntry,
    VentilatorSettings,
    WaveformSegment,
    mask_settings,
    to_payload,
)
from .memory import MemoryStore
from .safety import SafetyReport, run_safety_checks

__all__ = [
    "EngineConfig", "EncounterSnapshot", "PendingReview", "CycleRunner", "Runtime",
    "build_runtime", "run_cycle", "gate_decision", "reflect_route", "close_cycle",
    "InvalidCycleState",
]

_WAVEFORM_TOKENS = ("waveform", "sawtooth", "scoop", "asynchrony", "trace")
_MAX_INTERNAL_REPLANS = 3


class InvalidCycleState(Exception):
    """An operation was applied to a cycle not in the required state."""


@dataclass(frozen=True)
class EngineConfig:
    k_max: int = 5
    enable_waveform: bool = True
    enable_preference: bool = True
    seed: int = 0
    backends: Mapping[str, str] = field(default_factory=dict)  # role value -> backend id
    short_term_window: int = 3

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


@dataclass(frozen=True)
class EncounterSnapshot:
    """Inputs for one cycle: current state, current settings, optional waveform."""

    encounter_id: str
    state: PatientState
    settings: VentilatorSettings
    waveform: Optional[WaveformSegment] = None


@dataclass(frozen=True)
class PendingReview:
    """A safety-passing proposal suspended at the clinician checkpoint."""

    cycle_id: str
    round_index: int
    k_max: int
    proposal: Proposal
    safety: SafetyReport
    preference_context: tuple  # top-3 (category, score)
    evidence_refs: tuple


class Runtime:
    """Shared services: config tables, backends, memory, and counters."""

    def __init__(self, store: MemoryStore, registry, validator: ContractValidator,
                 featurizer: ContextFeaturizer, hyperparams: BanditHyperparams,
                 detection_rules: Mapping, planner_templates: Mapping, reflect_rules: Mapping,
                 backends: Mapping[str, Backend], policy: RetryPolicy,
                 update_on_hold: bool = False):
        self.store = store
        self.registry = registry
        self.validator = validator
        self.featurizer = featurizer
        self.hyperparams = hyperparams
        self.detection_rules = detection_rules
        self.planner_templates = planner_templates
        self.reflect_rules = reflect_rules
        self.backends = dict(backends)
        self.policy = policy
        self.update_on_hold = update_on_hold
        self.stats = InvocationStats()
        self.bandit_updates = 0
        self.hold_updates = 0

    def backend_for(self, role: AgentRole, config: EngineConfig) -> Backend:
        backend_id = config.backends.get(role.value, "scripted")
        return self.backends[backend_id]

    def invoke(self, role: AgentRole, input_value, config: EngineConfig):
        return invoke_agent(role, input_value, self.backend_for(role, config),
                            self.policy, self.stats, self.validator)


def build_runtime(store: MemoryStore, config_dir: Optional[str] = None,
                  policy: Optional[RetryPolicy] = None, fault_rate: float = 0.0,
                  fault_seed: int = 0,
                  extra_backends: Optional[Mapping[str, Backend]] = None) -> Runtime:
    """Assemble a runtime from the layered config files plus a memory store."""
    registry = load_registry(config_dir)
    validator = ContractValidator(registry)
    bandit_cfg = load_config_file("bandit.json", config_dir)
    scripted = ScriptedBackend(
        registry=registry,
        detection_rules=load_config_file("detection_rules.json", config_dir),
        planner_templates=load_config_file("planner_templates.json", config_dir),
        reflect_rules=load_config_file("reflect_rules.json", config_dir),
        validator=validator,
    )
    backends: dict = {"scripted": scripted}
    if fault_rate > 0:
        backends["scripted"] = FaultInjectingBackend(scripted, fault_rate, seed=fault_seed)
    if extra_backends:
        backends.update(extra_backends)
    return Runtime(
        store=store,
        registry=registry,
        validator=validator,
        featurizer=ContextFeaturizer.from_config(bandit_cfg),
        hyperparams=BanditHyperparams(
            ridge_lambda=float(bandit_cfg.get("ridge_lambda", 1.0)),
            exploration_alpha=float(bandit_cfg.get("exploration_alpha", 1.0)),
            negative_evidence_beta=float(bandit_cfg.get("negative_evidence_beta", 0.5)),
        ),
        detection_rules=scripted.detection_rules,
        planner_templates=scripted.planner_templates,
        reflect_rules=scripted.reflect_rules,
        backends=backends,
        policy=policy or RetryPolicy(),
        update_on_hold=bool(bandit_cfg.get("update_on_hold", False)),
    )


class CycleRunner:
    """Drives one cycle, suspending at each review checkpoint.

    ``start`` runs to the first checkpoint or a terminal record; ``resume``
    consumes one feedback and continues. A runner serves a single cycle and
    is not reused.
    """

    def __init__(self, runtime: Runtime, encounter: EncounterSnapshot, clinician_id: str,
                 config: EngineConfig, cycle_index: int = 0):
        self.runtime = runtime
        self.encounter = encounter
        self.clinician_id = clinician_id
        self.config = config
        self.cycle_id = f"{encounter.encounter_id}-c{cycle_index:04d}"
        self.status = "created"
        self.trace: list = []
        self.constraints: list = []
        self.k = 0
        self.pending: Optional[PendingReview] = None
        self.record: Optional[CycleRecord] = None
        self._cache: dict = {}
        self._event_seq = 0
        self._cues = None
        self._summary = None
        self._goals = None
        self._gate: Optional[BranchDecision] = None
        self._context: Optional[CycleContext] = None
        self._x = None
        self._pref_state = None
        self._scores: Optional[CategoryScores] = None
        self._accepted: Optional[VentilatorSettings] = None
        self._current = mask_settings(encounter.settings, runtime.registry)

    @property
    def current_settings(self) -> VentilatorSettings:
        return self._current

    # -- clock ---------------------------------------------------------------

    def _tick(self) -> float:
        self._event_seq += 1
        return self.encounter.state.timestamp + self._event_seq * 1e-3

    def _invoke(self, role: AgentRole, value):
        return self.runtime.invoke(role, value, self.config)

    # -- public lifecycle ----------------------------------------------------

    def start(self):
        if self.status != "created":
            raise InvalidCycleState(f"cycle {self.cycle_id} already started")
        self.status = "running"
        try:
            return self._run_front_half()
        except (RoleFailure, FeasibilityExhausted):
            return self._close("failed")

    def resume(self, feedback: ClinicianFeedback):
        if self.status != "in_review" or self.pending is None:
            raise InvalidCycleState(f"cycle {self.cycle_id} is not awaiting review (status={self.status})")
        proposal = self.pending.proposal
        self.pending = None
        self.status = "running"
        self.trace.append(TraceEntry(proposal, feedback))
        if feedback.decision == "accept":
            merged = self._current.with_updates(proposal.setting_updates, proposal.mode_change)
            self._accepted = mask_settings(merged, self.runtime.registry)
            return self._close("accepted")
        if self.k >= self.config.k_max:
            return self._close("exhausted")
        try:
            directive = self._invoke(AgentRole.REFLECT, ReflectInput(feedback, proposal, self._current))
            self.constraints.extend(directive.constraints)
            if directive.resume_stage == "strategy":
                self._cache.pop("strategy", None)
                self._cache.pop("mode_choice", None)
            elif directive.resume_stage == "mode_select":
                self._cache.pop("mode_choice", None)
            self._maybe_refresh_waveform(feedback)
            return self._next_round()
        except (RoleFailure, FeasibilityExhausted):
            return self._close("failed")

    # -- pipeline ------------------------------------------------------------

    def _run_front_half(self):
        runtime = self.runtime
        short_term = runtime.store.context_window(self.encounter.encounter_id,
                                                  self.config.short_term_window)
        if self.config.enable_waveform and self.encounter.waveform is not None:
            self._cues = self._invoke(AgentRole.WAVEFORM_ANALYZER, self.encounter.waveform)
        self._summary = self._invoke(
            AgentRole.DETECTION, DetectionInput(self.encounter.state, self._cues, self._current))
        self._goals = self._invoke(
            AgentRole.PHASE_GOAL_MANAGER,
            PhaseGoalInput(self.encounter.state, self._current, self._summary))
        self._x = runtime.featurizer.featurize(
            self.encounter.state, self._current, self._goals, self._cues, self._summary)
        self._context = CycleContext(
            current_state=self.encounter.state,
            current_settings=self._current,
            short_term=short_term.notes,
            long_term_refs=short_term.note_offsets,
            feature_vector=self._x,
        )
        if self.config.enable_preference:
            self._pref_state = runtime.store.load_preference_state(self.clinician_id,
                                                                   runtime.hyperparams)
            self._scores = preference_scores(self._pref_state, self._x)
        else:
            self._scores = CategoryScores.uniform(0.0)
        self._gate = self._invoke(AgentRole.GATE, GateInput(self._summary, self._goals))
        if self._gate.branch == "hold":
            return self._close("hold")
        return self._next_round()

    def _forbidden(self, kind: str, attr: str) -> tuple:
        return tuple(sorted({getattr(c, attr) for c in self.constraints
                             if c.kind == kind and getattr(c, attr)}))

    def _next_round(self):
        self.k += 1
        if "strategy" not in self._cache:
            self._cache["strategy"] = self._invoke(
                AgentRole.STRATEGY_SELECTOR,
                StrategyInput(self._summary, self._goals, self._current,
                              self._forbidden("forbid_strategy", "strategy")))
        strategy = self._cache["strategy"].strategy
        if "mode_choice" not in self._cache:
            self._cache["mode_choice"] = self._invoke(
                AgentRole.MODE_SELECT,
                ModeSelectInput(self._current, self._summary, self._goals, strategy,
                                self._forbidden("forbid_mode", "mode")))
        mode_change = self._cache["mode_choice"].mode_change

        for _ in range(_MAX_INTERNAL_REPLANS):
            planner_input = PlannerInput(
                cycle_id=self.cycle_id, round_index=self.k, strategy=strategy,
                goals=self._goals, current=self._current, summary=self._summary,
                category_scores=dict(self._scores.score),
                constraints=tuple(self.constraints), mode_change=mode_change)
            candidate_set = self._invoke(AgentRole.PARAMETER_PLANNER, planner_input)
            failing: list = []
            for candidate in candidate_set.candidates:
                report = run_safety_checks(candidate, self._current, self.runtime.registry)
                if report.passed:
                    return self._suspend(candidate, report)
                failing.append((candidate, report))
            # Safety rejected every candidate: replan internally with the
            # violations as constraints. No clinician round is consumed.
            for candidate, report in failing:
                self.constraints.extend(_violation_constraints(candidate, report))
                self.constraints.append(Constraint(kind="forbid_repeat",
                                                   updates_key=candidate.updates_key()))
        raise FeasibilityExhausted(f"no safety-passing candidate for cycle {self.cycle_id}")

    def _suspend(self, proposal: Proposal, report: SafetyReport) -> PendingReview:
        evidence = []
        for ab in self._summary.abnormalities:
            for ref in ab.evidence:
                if ref not in evidence:
                    evidence.append(ref)
        self.pending = PendingReview(
            cycle_id=self.cycle_id,
            round_index=self.k,
            k_max=self.config.k_max,
            proposal=proposal,
            safety=report,
            preference_context=tuple(self._scores.top(3)),
            evidence_refs=tuple(evidence),
        )
        self.status = "in_review"
        return self.pending

    def _maybe_refresh_waveform(self, feedback: ClinicianFeedback) -> None:
        if not (self.config.enable_waveform and self.encounter.waveform is not None):
            return
        rationale = feedback.rationale.lower()
        if any(token in rationale for token in _WAVEFORM_TOKENS):
            self._cues = self._invoke(AgentRole.WAVEFORM_ANALYZER, self.encounter.waveform)

    # -- closure ---------------------------------------------------------------

    def _close(self, status: str) -> CycleRecord:
        gate_reason = self._gate.reason if self._gate is not None else ""
        note_input = NoteInput(
            cycle_id=self.cycle_id, clinician_id=self.clinician_id, status=status,
            gate_reason=gate_reason, trace=tuple(self.trace),
            accepted_settings=self._accepted, goals=self._goals, summary=self._summary)
        try:
            note_out = self._invoke(AgentRole.NOTE_GENERATOR, note_input)
            note, signal = note_out.note, note_out.signal
        except RoleFailure:
            status = "failed"
            self._accepted = None
            note = f"cycle {self.cycle_id} (clinician {self.clinician_id}): failed during note generation"
            signal = PreferenceSignal()

        record = CycleRecord(
            cycle_id=self.cycle_id,
            clinician_id=self.clinician_id,
            context=self._context or self._fallback_context(),
            trace=tuple(self.trace),
            rounds=len(self.trace),
            accepted_settings=self._accepted if status == "accepted" else None,
            note=note,
            preference_signal=signal,
            status=status,
        )

        entries = [
            ("cycle_record",
             {"encounter_id": self.encounter.encounter_id, "record": to_payload(record)},
             self._tick()),
            ("note",
             {"encounter_id": self.encounter.encounter_id, "cycle_id": self.cycle_id,
              "clinician_id": self.clinician_id, "text": note},
             self._tick()),
        ]
        if status == "accepted" and self.config.enable_preference:
            accepted_proposal = self.trace[-1].proposal
            new_state = bandit_update(self._pref_state, self._x, accepted_proposal,
                                      tuple(self.trace), signal)
            self.runtime.bandit_updates += 1
            entries.append(("preference_snapshot",
                            {"clinician_id": self.clinician_id,
                             "encounter_id": self.encounter.encounter_id,
                             "cycle_id": self.cycle_id,
                             "state": new_state.to_payload()},
                            self._tick()))
        elif (status == "hold" and self.runtime.update_on_hold and self.config.enable_preference
              and signal.evidenced_by_accept and self._x is not None):
            new_state = apply_signal_update(self._pref_state, self._x, signal)
            self.runtime.hold_updates += 1
            entries.append(("preference_snapshot",
                            {"clinician_id": self.clinician_id,
                             "encounter_id": self.encounter.encounter_id,
                             "cycle_id": self.cycle_id,
                             "state": new_state.to_payload()},
                            self._tick()))

        self.runtime.store.append_many(entries)
        self.status = status
        self.record = record
        return record

    def _fallback_context(self) -> CycleContext:
        # A failure before context assembly still needs a well-formed record.
        x = self.runtime.featurizer.featurize(self.encounter.state, self._current,
                                              self._goals, self._cues, self._summary)
        return CycleContext(current_state=self.encounter.state, current_settings=self._current,
                            short_term=(), long_term_refs=(), feature_vector=x)


def _violation_constraints(candidate: Proposal, report: SafetyReport) -> list:
    constraints = []
    for violation in report.violations:
        if violation.check_id == "bounds":
            lo, hi = violation.limit.strip("[]").split(",")
            proposed = candidate.setting_updates.get(violation.parameter)
            if proposed is not None and proposed > float(hi):
                constraints.append(Constraint(kind="param_ceiling", parameter=violation.parameter,
                                              value=float(hi)))
            else:
                constraints.append(Constraint(kind="param_floor", parameter=violation.parameter,
                                              value=float(lo)))
        elif violation.check_id == "delta_limit":
            limit = float(violation.limit.split("<=")[-1])
            constraints.append(Constraint(kind="max_step", parameter=violation.parameter, value=limit))
        elif violation.check_id == "mode_compatibility":
            constraints.append(Constraint(kind="forbid_parameter", parameter=violation.parameter))
        elif violation.check_id == "unknown_mode":
            constraints.append(Constraint(kind="forbid_mode", mode=violation.proposed_value))
    return constraints


def close_cycle(note_input: NoteInput):
    """Deterministic closure: render the note and extract the preference signal."""
    out = generate_note(note_input)
    return out.note, out.signal


def run_cycle(runtime: Runtime, encounter: EncounterSnapshot, clinician_id: str,
              config: EngineConfig,
              review: Callable[[PendingReview], ClinicianFeedback],
              cycle_index: int = 0) -> CycleRecord:
    """Drive one full cycle with a feedback callback standing in for the console."""
    runner = CycleRunner(runtime, encounter, clinician_id, config, cycle_index)
    outcome = runner.start()
    while isinstance(outcome, PendingReview):
        outcome = runner.resume(review(outcome))
    return outcome
