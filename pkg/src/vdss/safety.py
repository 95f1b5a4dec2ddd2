"""Deterministic pre-review safety checks.

Three independent checks run on every proposal before it can reach a
review checkpoint: absolute bounds, mode/parameter compatibility, and
per-cycle delta limits. All limit values come from the registry
(config/safety_limits.json + config/mode_registry.json), never from code.
"""

from __future__ import annotations

from dataclasses import dataclass

from .contracts import ModeRegistry, Proposal, UnknownModeError, VentilatorSettings


@dataclass(frozen=True)
class Violation:
    check_id: str
    parameter: str
    limit: str
    proposed_value: str


@dataclass(frozen=True)
class SafetyReport:
    verdict: str  # "pass" | "fail"
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _report(violations, warnings=()) -> SafetyReport:
    return SafetyReport(
        verdict="fail" if violations else "pass",
        violations=tuple(violations),
        warnings=tuple(warnings),
    )


def _target_mode(proposal: Proposal, current: VentilatorSettings) -> str:
    return proposal.mode_change or current.mode


def check_bounds(proposal: Proposal, current: VentilatorSettings, registry: ModeRegistry) -> SafetyReport:
    """Flag any proposed absolute value outside the registry [min, max]."""
    mode = _target_mode(proposal, current)
    try:
        spec = registry.get(mode)
    except UnknownModeError:
        return _report([Violation("unknown_mode", "mode", "registered mode", mode)])
    violations = []
    warnings = []
    for param, value in proposal.setting_updates.items():
        if param not in spec.applicable:
            continue  # compatibility check owns inapplicable parameters
        lo, hi = spec.bounds[param]
        if not (lo <= value <= hi):
            violations.append(Violation("bounds", param, f"[{lo}, {hi}]", repr(value)))
    if not proposal.setting_updates and proposal.mode_change:
        warnings.append("mode change only")
    return _report(violations, warnings)


def check_mode_compatibility(proposal: Proposal, registry: ModeRegistry) -> SafetyReport:
    """Flag parameters inapplicable under the (possibly new) mode, or an unknown mode."""
    mode = proposal.mode_change
    violations = []
    if mode is not None and mode not in registry:
        return _report([Violation("unknown_mode", "mode", "registered mode", mode)])
    if mode is None:
        # No mode change: the caller's current mode governs; nothing to resolve here.
        return _report([])
    spec = registry.get(mode)
    for param in proposal.setting_updates:
        if param not in spec.applicable:
            violations.append(Violation("mode_compatibility", param,
                                        f"applicable parameters of {mode}: {sorted(spec.applicable)}",
                                        param))
    return _report(violations)


def check_compatibility_against(proposal: Proposal, current: VentilatorSettings,
                                registry: ModeRegistry) -> SafetyReport:
    """Mode compatibility resolved against the current settings when no change is proposed."""
    mode = _target_mode(proposal, current)
    if mode not in registry:
        return _report([Violation("unknown_mode", "mode", "registered mode", mode)])
    spec = registry.get(mode)
    violations = [
        Violation("mode_compatibility", param,
                  f"applicable parameters of {mode}: {sorted(spec.applicable)}", param)
        for param in proposal.setting_updates if param not in spec.applicable
    ]
    return _report(violations)


def check_delta_limits(proposal: Proposal, current: VentilatorSettings, registry: ModeRegistry) -> SafetyReport:
    """Flag per-parameter changes larger than the registry's per-cycle delta."""
    mode = _target_mode(proposal, current)
    try:
        spec = registry.get(mode)
    except UnknownModeError:
        return _report([Violation("unknown_mode", "mode", "registered mode", mode)])
    violations = []
    for param, value in proposal.setting_updates.items():
        if param not in spec.applicable:
            continue
        baseline = getattr(current, param)
        if baseline is None:
            continue  # newly applicable parameter after a mode change; no delta baseline
        limit = spec.max_delta[param]
        if abs(value - baseline) > limit:
            violations.append(Violation("delta_limit", param, f"|step| <= {limit}",
                                        f"{baseline} -> {value}"))
    return _report(violations)


def run_safety_checks(proposal: Proposal, current: VentilatorSettings, registry: ModeRegistry) -> SafetyReport:
    """All three checks combined; the verdict is their logical AND."""
    reports = (
        check_bounds(proposal, current, registry),
        check_compatibility_against(proposal, current, registry),
        check_delta_limits(proposal, current, registry),
    )
    violations = [v for r in reports for v in r.violations]
    warnings = [w for r in reports for w in r.warnings]
    return _report(violations, warnings)
