"""Deterministic rule-based implementations of every reasoning role.

These are first-class backends, not test doubles: they make the full
adjustment cycle runnable and reproducible without any model API. Each
function is pure in its inputs plus the rule tables loaded from config.
"""

from __future__ import annotations

from typing import Any, Mapping, Optional, Sequence

from ..bandit import rank_candidates
from ..contracts import (
    GOALS,
    STRATEGIES,
    Abnormality,
    BranchDecision,
    CandidateSet,
    ClinicianFeedback,
    Constraint,
    ModeChoice,
    ModeRegistry,
    NoteInput,
    NoteOutput,
    PatientState,
    PhaseGoals,
    PlannerInput,
    PreferenceSignal,
    Proposal,
    RevisionDirective,
    StateSummary,
    StrategyChoice,
    VentilatorSettings,
    WaveformCues,
    severity_rank,
    to_payload,
)
from ..waveform import extract_cues
from . import ROLE_SCHEMAS, AgentRole, Backend, FeasibilityExhausted

# ---------------------------------------------------------------------------
# Detection


def _rule_env(state: PatientState, settings: Optional[VentilatorSettings]) -> dict:
    env = {name: getattr(state, name) for name in
           ("spo2", "heart_rate", "map", "ph", "paco2", "pao2", "tidal_volume_obs", "resp_rate_obs")}
    env["weight_kg"] = state.weight_kg
    if state.tidal_volume_obs is not None and state.weight_kg:
        env["tidal_volume_per_kg"] = state.tidal_volume_obs / state.weight_kg
    else:
        env["tidal_volume_per_kg"] = None
    env["fio2_set"] = settings.fio2 if settings is not None else None
    return env


_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def scripted_detection(state: PatientState, cues: Optional[WaveformCues],
                       settings: Optional[VentilatorSettings], rules_cfg: Mapping) -> StateSummary:
    """Threshold rule table over state fields plus waveform cue escalation."""
    env = _rule_env(state, settings)
    abnormalities: list = []
    seen_codes: set = set()

    for rule in rules_cfg["rules"]:
        if rule["code"] in seen_codes:
            continue
        values = [(env.get(field), op, bound) for field, op, bound in rule["when"]]
        if any(v is None for v, _, _ in values):
            continue
        if all(_OPS[op](v, bound) for v, op, bound in values):
            abnormalities.append(Abnormality(rule["code"], rule["severity"], tuple(rule["evidence"])))
            seen_codes.add(rule["code"])

    if cues is not None:
        patterns = tuple(p for p in cues.asynchrony_patterns if p != "none")
        for rule in rules_cfg.get("cue_rules", ()):
            if rule["code"] in seen_codes:
                continue
            if len(patterns) < rule.get("min_patterns", 1):
                continue
            if any(req not in patterns for req in rule.get("require", ())):
                continue
            evidence = tuple(f"waveform.{p}" for p in patterns)
            abnormalities.append(Abnormality(rule["code"], rule["severity"], evidence))
            seen_codes.add(rule["code"])

    required = rules_cfg["required_fields"]
    missing = state.missing_fields(required)
    sufficient = len(missing) <= rules_cfg["max_missing_fields"]

    if abnormalities:
        worst = max(abnormalities, key=lambda a: severity_rank(a.severity))
        narrative = f"{len(abnormalities)} abnormality finding(s); worst: {worst.code} ({worst.severity})"
    else:
        narrative = "no abnormality findings"
    if missing:
        narrative += f"; missing fields: {', '.join(missing)}"

    return StateSummary(abnormalities=tuple(abnormalities), evidence_sufficient=sufficient,
                        narrative=narrative)


# ---------------------------------------------------------------------------
# Phase and goals

_PRIMARY_GOAL_BY_CODE = {
    "hypoxemia": "improve_oxygenation",
    "respiratory_acidosis": "normalize_ventilation",
    "respiratory_alkalosis": "normalize_ventilation",
    "tachypnea": "normalize_ventilation",
    "ventilator_asynchrony": "improve_synchrony",
    "auto_peep_risk": "improve_synchrony",
    "high_tidal_volume": "lung_protection",
    "hypotension": "hemodynamic_stability",
    "excess_oxygen_support": "reduce_support",
    "tachycardia": "hemodynamic_stability",
}

# Deterministic tie-break order when severities are equal.
_CODE_PRIORITY = (
    "hypoxemia", "hypotension", "respiratory_acidosis", "high_tidal_volume",
    "ventilator_asynchrony", "auto_peep_risk", "respiratory_alkalosis", "tachypnea",
    "excess_oxygen_support", "tachycardia",
)


def _top_abnormality(summary: StateSummary) -> Optional[Abnormality]:
    ranked = sorted(
        summary.abnormalities,
        key=lambda a: (-severity_rank(a.severity),
                       _CODE_PRIORITY.index(a.code) if a.code in _CODE_PRIORITY else len(_CODE_PRIORITY)),
    )
    return ranked[0] if ranked else None


def scripted_phase_goals(state: PatientState, settings: VentilatorSettings,
                         summary: StateSummary) -> PhaseGoals:
    fio2 = settings.fio2 or 21.0
    peep = settings.peep or 0.0
    ps = settings.pressure_support
    worst = summary.max_severity()

    if worst == "severe" or fio2 >= 60 or peep >= 12:
        phase = "acute"
    elif severity_rank(worst) < severity_rank("moderate") and fio2 <= 40 and peep <= 8 and (ps is None or ps <= 12):
        phase = "weaning"
    else:
        phase = "stabilization"

    top = _top_abnormality(summary)
    if top is not None and severity_rank(top.severity) >= severity_rank("mild"):
        primary = _PRIMARY_GOAL_BY_CODE.get(top.code, "maintain_stability")
    else:
        primary = "reduce_support" if phase == "weaning" else "maintain_stability"

    secondary = []
    if phase == "acute" and primary != "lung_protection":
        secondary.append("lung_protection")
    if phase == "weaning" and primary != "reduce_support":
        secondary.append("reduce_support")
    if primary != "maintain_stability" and phase != "acute":
        secondary.append("maintain_stability")
    secondary = [g for g in dict.fromkeys(secondary) if g in GOALS and g != primary]
    return PhaseGoals(phase=phase, primary_goal=primary, secondary_goals=tuple(secondary))


# ---------------------------------------------------------------------------
# Hold/adjust gate


def gate_decision(summary: StateSummary, goals: PhaseGoals) -> BranchDecision:
    """Adjust only when a moderate-or-worse abnormality meets sufficient evidence."""
    if not summary.evidence_sufficient:
        return BranchDecision(branch="hold", reason="insufficient evidence")
    if severity_rank(summary.max_severity()) >= severity_rank("moderate"):
        return BranchDecision(branch="adjust", reason=f"actionable abnormality: {_top_abnormality(summary).code}")
    return BranchDecision(branch="hold", reason="stable")


# ---------------------------------------------------------------------------
# Strategy selection

_STRATEGY_BY_CODE = {
    "hypoxemia": "oxygenation",
    "respiratory_acidosis": "ventilation_acid_base",
    "respiratory_alkalosis": "ventilation_acid_base",
    "tachypnea": "ventilation_acid_base",
    "ventilator_asynchrony": "synchrony_comfort",
    "auto_peep_risk": "synchrony_comfort",
    "high_tidal_volume": "lung_protection",
    "hypotension": "hemodynamics",
    "excess_oxygen_support": "weaning",
    "tachycardia": "hemodynamics",
}


def scripted_strategy(summary: StateSummary, goals: PhaseGoals, settings: VentilatorSettings,
                      forbidden: Sequence[str]) -> StrategyChoice:
    ranked = sorted(
        summary.abnormalities,
        key=lambda a: (-severity_rank(a.severity),
                       _CODE_PRIORITY.index(a.code) if a.code in _CODE_PRIORITY else len(_CODE_PRIORITY)),
    )
    for ab in ranked:
        strategy = _STRATEGY_BY_CODE.get(ab.code)
        if strategy and strategy not in forbidden:
            return StrategyChoice(strategy=strategy,
                                  rationale=f"targets {ab.code} ({ab.severity})")
    if goals.phase == "weaning" and "weaning" not in forbidden:
        return StrategyChoice(strategy="weaning", rationale="weaning phase, no dominant abnormality")
    for strategy in STRATEGIES:
        if strategy not in forbidden:
            return StrategyChoice(strategy=strategy, rationale="fallback priority order")
    return StrategyChoice(strategy=STRATEGIES[0], rationale="all priorities disputed; defaulting")


# ---------------------------------------------------------------------------
# Mode selection

# Preferred transition per (trigger, current-mode family).
_ASYNCHRONY_ESCAPE = {"VC_AC": "PRVC", "SIMV_VC": "PRVC"}
_WEANING_TARGET = "PSV"
_CONTROLLED_MODES = ("VC_AC", "PC_AC", "PRVC", "SIMV_VC")


def scripted_mode_select(settings: VentilatorSettings, summary: StateSummary, goals: PhaseGoals,
                         strategy: str, forbidden: Sequence[str], registry: ModeRegistry) -> ModeChoice:
    current = settings.mode
    codes = {a.code for a in summary.abnormalities
             if severity_rank(a.severity) >= severity_rank("moderate")}

    candidate: Optional[str] = None
    why = ""
    if current in forbidden:
        # The clinician disputed staying in this mode; pick the first legal alternative.
        for alt in registry.mode_ids():
            if alt != current and alt not in forbidden:
                candidate = alt
                why = f"current mode {current} disputed; switching to {alt}"
                break
    elif "ventilator_asynchrony" in codes and current in _ASYNCHRONY_ESCAPE:
        candidate = _ASYNCHRONY_ESCAPE[current]
        why = f"asynchrony under {current}; regulated-pressure delivery may improve comfort"
    elif strategy == "weaning" and goals.phase == "weaning" and current in _CONTROLLED_MODES:
        candidate = _WEANING_TARGET
        why = "weaning phase; trial of spontaneous support"

    if candidate is None or candidate in forbidden or candidate not in registry:
        return ModeChoice(mode_change=None, rationale=f"stay in {current}")
    return ModeChoice(mode_change=candidate, rationale=why)


# ---------------------------------------------------------------------------
# Parameter planning

# Fallback baselines for parameters that become applicable after a mode change.
_INIT_DEFAULTS = {"peep": 8.0, "fio2": 40.0, "pressure_support": 10.0,
                  "inspiratory_pressure": 16.0, "resp_rate_set": 14.0}

_MIN_STEP = 0.5


def _direction(strategy: str, summary: StateSummary, templates: Mapping) -> str:
    available = templates.get(strategy, {})
    if "deescalate" not in available:
        return "escalate"
    codes = {a.code for a in summary.abnormalities}
    if strategy == "oxygenation" and "excess_oxygen_support" in codes and "hypoxemia" not in codes:
        return "deescalate"
    if strategy == "ventilation_acid_base" and "respiratory_alkalosis" in codes \
            and "respiratory_acidosis" not in codes:
        return "deescalate"
    return "escalate"


def _constraint_tables(constraints: Sequence[Constraint]) -> dict:
    tables = {"forbid_param": set(), "ceiling": {}, "floor": {}, "max_step": {},
              "forbid_repeat": set(), "forbid_mode": set()}
    for c in constraints:
        if c.kind == "forbid_parameter":
            tables["forbid_param"].add(c.parameter)
        elif c.kind == "param_ceiling":
            prev = tables["ceiling"].get(c.parameter)
            tables["ceiling"][c.parameter] = c.value if prev is None else min(prev, c.value)
        elif c.kind == "param_floor":
            prev = tables["floor"].get(c.parameter)
            tables["floor"][c.parameter] = c.value if prev is None else max(prev, c.value)
        elif c.kind == "max_step":
            prev = tables["max_step"].get(c.parameter)
            tables["max_step"][c.parameter] = c.value if prev is None else min(prev, c.value)
        elif c.kind == "forbid_repeat":
            tables["forbid_repeat"].add(c.updates_key)
        elif c.kind == "forbid_mode":
            tables["forbid_mode"].add(c.mode)
    return tables


def _resolve_update(param: str, step: float, current: VentilatorSettings, mode_spec,
                    tables: dict) -> Optional[float]:
    """Apply constraint/limit clamping to one menu entry; None drops the entry."""
    if param not in mode_spec.applicable or param in tables["forbid_param"]:
        return None
    baseline = getattr(current, param)
    if baseline is None:
        baseline = _INIT_DEFAULTS[param]
    limit = mode_spec.max_delta[param]
    if param in tables["max_step"]:
        limit = min(limit, tables["max_step"][param])
    magnitude = min(abs(step), limit)
    value = baseline + magnitude * (1 if step > 0 else -1)
    lo, hi = mode_spec.bounds[param]
    value = min(max(value, lo), hi)
    if param in tables["ceiling"]:
        value = min(value, tables["ceiling"][param])
    if param in tables["floor"]:
        value = max(value, tables["floor"][param])
    value = round(value, 1)
    if abs(value - baseline) < _MIN_STEP:
        return None
    if (value > baseline) != (step > 0):
        # Clamping flipped the intended direction; the entry is infeasible.
        return None
    return value


def _expand_template(template: Mapping, cycle_id: str, round_index: int, strategy: str,
                     current: VentilatorSettings, mode_change: Optional[str],
                     mode_tag: str, registry: ModeRegistry, tables: dict,
                     rationale: str, scale: float = 1.0) -> Optional[Proposal]:
    target_mode = mode_change or current.mode
    spec = registry.get(target_mode)
    updates: dict = {}
    for entry in template["menu"]:
        if len(updates) >= template["take"]:
            break
        if entry["param"] in updates:
            continue
        value = _resolve_update(entry["param"], entry["step"] * scale, current, spec, tables)
        if value is not None:
            updates[entry["param"]] = value
    if not updates and mode_change is None:
        return None
    proposal = Proposal(
        cycle_id=cycle_id,
        round_index=round_index,
        strategy=strategy,
        mode_change=mode_change,
        setting_updates=dict(sorted(updates.items())),
        category_tags=tuple(sorted(tuple(template["tags"]) + (mode_tag,))),
        rationale=rationale,
    )
    if proposal.updates_key() in tables["forbid_repeat"]:
        return None
    return proposal


def scripted_parameter_plan(inp: PlannerInput, registry: ModeRegistry,
                            templates_cfg: Mapping) -> CandidateSet:
    """Expand strategy templates into ranked, constraint-satisfying candidates."""
    direction = _direction(inp.strategy, inp.summary, templates_cfg)
    templates = templates_cfg.get(inp.strategy, {}).get(direction, ())
    tables = _constraint_tables(inp.constraints)

    mode_change = inp.mode_change
    if mode_change is not None and (mode_change in tables["forbid_mode"] or mode_change not in registry):
        mode_change = None

    # Full-step templates first; half- and quarter-step fallbacks only enter
    # once repeat-suppression has consumed every full-step candidate, so they
    # never crowd the presentation order of the distinct-style plans.
    unique: list = []
    for scale in (1.0, 0.5, 0.25):
        candidates: list = []
        for template in templates:
            style = template["tags"][0]
            suffix = "" if scale == 1.0 else f" (steps x{scale:g})"
            stay = _expand_template(
                template, inp.cycle_id, inp.round_index, inp.strategy, inp.current,
                None, "stay_in_mode", registry, tables, scale=scale,
                rationale=f"{inp.strategy}/{direction} {style} plan in {inp.current.mode}{suffix}")
            if stay is not None:
                candidates.append(stay)
            if mode_change is not None:
                switch = _expand_template(
                    template, inp.cycle_id, inp.round_index, inp.strategy, inp.current,
                    mode_change, "mode_level_change", registry, tables, scale=scale,
                    rationale=f"{inp.strategy}/{direction} {style} plan after switch to {mode_change}{suffix}")
                if switch is not None:
                    candidates.append(switch)
        if scale == 1.0 and mode_change is not None:
            bare_tags = ["mode_level_change"]
            if templates:
                bare_tags.extend(templates[0]["tags"][1:2])  # carry the strategy's priority tag
            bare = Proposal(
                cycle_id=inp.cycle_id, round_index=inp.round_index, strategy=inp.strategy,
                mode_change=mode_change, setting_updates={},
                category_tags=tuple(sorted(bare_tags)),
                rationale=f"switch to {mode_change} without parameter changes",
            )
            if bare.updates_key() not in tables["forbid_repeat"]:
                candidates.append(bare)

        seen: set = set()
        for cand in candidates:
            key = cand.updates_key()
            if key not in seen:
                seen.add(key)
                unique.append(cand)
        if unique:
            break

    if not unique:
        raise FeasibilityExhausted(
            f"no candidate for strategy {inp.strategy} in mode {inp.current.mode} satisfies constraints")
    ranked = rank_candidates(unique, dict(inp.category_scores))
    return CandidateSet(candidates=tuple(ranked))


# ---------------------------------------------------------------------------
# Reflection: rejection -> revision directive


def reflect_route(feedback: ClinicianFeedback, rejected: Proposal, current: VentilatorSettings,
                  reflect_cfg: Mapping) -> RevisionDirective:
    """Map structured rejection feedback to the minimal stage to revisit."""
    if feedback.decision != "reject":
        raise ValueError("reflect_route requires reject feedback")
    rule = reflect_cfg[feedback.reason_category]
    disputed = tuple(feedback.disputed_parameters) or tuple(rejected.setting_updates.keys())

    constraints: list = []
    for recipe in rule["constraints"]:
        kind = recipe["kind"]
        target = recipe["target"]
        if target == "$strategy":
            constraints.append(Constraint(kind=kind, strategy=rejected.strategy))
        elif target == "$proposed_mode":
            constraints.append(Constraint(kind=kind, mode=rejected.mode_change or current.mode))
        elif target == "$disputed_or_all":
            for param in disputed:
                if kind == "max_step_half":
                    if param in rejected.setting_updates and getattr(current, param) is not None:
                        step = abs(rejected.setting_updates[param] - getattr(current, param))
                        constraints.append(Constraint(kind="max_step", parameter=param, value=step / 2.0))
                    else:
                        constraints.append(Constraint(kind="forbid_parameter", parameter=param))
                else:
                    constraints.append(Constraint(kind=kind, parameter=param))
        else:
            raise ValueError(f"unknown constraint target {target!r}")

    constraints.append(Constraint(kind="forbid_repeat", updates_key=rejected.updates_key()))
    return RevisionDirective(resume_stage=rule["resume_stage"], constraints=tuple(constraints))


# ---------------------------------------------------------------------------
# Note generation and the cycle-end preference signal


def _render_settings(settings: VentilatorSettings) -> str:
    values = settings.values()
    parts = [f"mode={settings.mode}"] + [f"{p}={values[p]:g}" for p in sorted(values)]
    return " ".join(parts)


def generate_note(inp: NoteInput) -> NoteOutput:
    """Deterministic template rendering of the cycle plus its preference signal."""
    lines = [
        f"cycle {inp.cycle_id} (clinician {inp.clinician_id}): {inp.status}",
        f"gate: {inp.gate_reason}",
    ]
    if inp.goals is not None:
        lines.append(f"phase {inp.goals.phase}, primary goal {inp.goals.primary_goal}")
    if inp.summary is not None:
        lines.append(f"findings: {inp.summary.narrative}")
    for entry in inp.trace:
        proposal, fb = entry.proposal, entry.feedback
        updates = ", ".join(f"{p}->{v:g}" for p, v in sorted(proposal.setting_updates.items()))
        mode_part = f" mode->{proposal.mode_change}" if proposal.mode_change else ""
        verdict = fb.decision if fb.decision == "accept" else f"reject ({fb.reason_category})"
        lines.append(f"round {proposal.round_index}: {proposal.strategy}{mode_part} {updates or 'no parameter change'} -> {verdict}")
    if inp.accepted_settings is not None:
        lines.append(f"accepted: {_render_settings(inp.accepted_settings)}")

    accept_tags: tuple = ()
    reject_tags: set = set()
    for entry in inp.trace:
        if entry.feedback.decision == "accept":
            accept_tags = entry.proposal.category_tags
        else:
            reject_tags.update(entry.proposal.category_tags)
    if inp.status == "hold" and inp.gate_reason == "insufficient evidence":
        accept_tags = ("defer_when_insufficient",)
    signal = PreferenceSignal(
        evidenced_by_accept=tuple(sorted(accept_tags)),
        evidenced_only_by_reject=tuple(sorted(reject_tags - set(accept_tags))),
    )
    return NoteOutput(note="\n".join(lines), signal=signal)


# ---------------------------------------------------------------------------
# Backend adapter


class ScriptedBackend(Backend):
    """Serves every role from the deterministic implementations above."""

    def __init__(self, registry: ModeRegistry, detection_rules: Mapping,
                 planner_templates: Mapping, reflect_rules: Mapping, validator):
        self.registry = registry
        self.detection_rules = detection_rules
        self.planner_templates = planner_templates
        self.reflect_rules = reflect_rules
        self.validator = validator

    def run(self, role: AgentRole, payload: Any) -> Any:
        in_schema, _ = ROLE_SCHEMAS[role]
        checked = self.validator.validate_message(in_schema, payload)
        if not checked.ok:
            raise ValueError(f"scripted backend received invalid {in_schema}: {checked.errors[:3]}")
        value = checked.value

        if role == AgentRole.WAVEFORM_ANALYZER:
            return to_payload(extract_cues(value))
        if role == AgentRole.DETECTION:
            return to_payload(scripted_detection(value.state, value.cues, value.settings,
                                                 self.detection_rules))
        if role == AgentRole.PHASE_GOAL_MANAGER:
            return to_payload(scripted_phase_goals(value.state, value.settings, value.summary))
        if role == AgentRole.GATE:
            return to_payload(gate_decision(value.summary, value.goals))
        if role == AgentRole.STRATEGY_SELECTOR:
            return to_payload(scripted_strategy(value.summary, value.goals, value.settings,
                                                value.forbidden_strategies))
        if role == AgentRole.MODE_SELECT:
            return to_payload(scripted_mode_select(value.settings, value.summary, value.goals,
                                                   value.strategy, value.forbidden_modes, self.registry))
        if role == AgentRole.PARAMETER_PLANNER:
            return to_payload(scripted_parameter_plan(value, self.registry, self.planner_templates))
        if role == AgentRole.REFLECT:
            return to_payload(reflect_route(value.feedback, value.rejected, value.current,
                                            self.reflect_rules))
        if role == AgentRole.NOTE_GENERATOR:
            return to_payload(generate_note(value))
        raise ValueError(f"unhandled role {role}")
