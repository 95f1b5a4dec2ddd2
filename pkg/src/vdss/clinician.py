"""Simulated clinician for replay and regret studies.

A profile hides a weight per preference category; a proposal's alignment
is the mean weight over its category tags. Deterministic profiles accept
at a fixed alignment threshold, logistic profiles accept with probability
sigma(gamma0 + gamma1 * alignment). Rejections carry a structured reason
derived from the worst-aligned tag, so the reflect stage has something
real to work with.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .contracts import PREFERENCE_CATEGORIES, ClinicianFeedback, Proposal
from .safety import SafetyReport

_STYLE_TAGS = ("conservative_small_step", "target_driven_assertive", "single_key_parameter_first")
_MODE_TAGS = ("mode_level_change", "stay_in_mode")


@dataclass(frozen=True)
class ClinicianProfile:
    """Hidden tuning-style weights standing in for a human reviewer."""

    clinician_id: str
    weights: Mapping[str, float]  # category -> weight in [0, 1]
    acceptance: str = "deterministic"  # or "logistic"
    tau: float = 0.6
    gamma0: float = 0.0
    gamma1: float = 4.0
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.weights) - set(PREFERENCE_CATEGORIES)
        if unknown:
            raise ValueError(f"unknown categories in profile: {sorted(unknown)}")
        if not any(v != 0 for v in self.weights.values()):
            raise ValueError("profile needs at least one nonzero weight")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.acceptance not in ("deterministic", "logistic"):
            raise ValueError(f"unknown acceptance mode {self.acceptance!r}")

    def weight(self, category: str) -> float:
        return float(self.weights.get(category, 0.0))

    def alignment(self, proposal: Proposal) -> float:
        tags = proposal.category_tags
        return sum(self.weight(t) for t in tags) / len(tags)


def _stable_choice(options, profile_seed: int, salt: str) -> str:
    """Seeded choice that does not depend on call order."""
    digest = zlib.crc32(f"{profile_seed}:{salt}".encode("utf-8"))
    return options[digest % len(options)]


def _rejection_details(profile: ClinicianProfile, proposal: Proposal) -> tuple:
    """(reason_category, disputed_parameters, rationale) for a rejected proposal."""
    worst = min(proposal.category_tags,
                key=lambda t: (profile.weight(t), PREFERENCE_CATEGORIES.index(t)))
    params = sorted(proposal.setting_updates)
    if worst in _MODE_TAGS:
        return "wrong_mode", (), f"disagree with {'changing' if worst == 'mode_level_change' else 'keeping'} the mode"
    if worst.startswith("prio_"):
        return "wrong_priority", (), f"{worst[5:]} is not the right focus now"
    if worst == "target_driven_assertive":
        disputed = (_stable_choice(params, profile.seed, proposal.updates_key()),) if params else ()
        return "parameter_magnitude", disputed, "step too aggressive for this patient"
    if worst == "conservative_small_step":
        return "other", (), "prefer a more decisive adjustment"
    if worst == "single_key_parameter_first":
        return "other", (), "single-parameter change will not be enough"
    return "other", (), "does not match my usual approach"


def simulate_clinician(profile: ClinicianProfile, proposal: Proposal, safety: SafetyReport,
                       rng: Optional[np.random.Generator] = None) -> ClinicianFeedback:
    """One review decision. ``rng`` is only consulted in logistic mode."""
    if not safety.passed:
        raise ValueError("simulated clinician must only see safety-passing proposals")
    alignment = profile.alignment(proposal)
    if profile.acceptance == "deterministic":
        accept = alignment >= profile.tau
    else:
        if rng is None:
            rng = np.random.default_rng(profile.seed)
        p = 1.0 / (1.0 + np.exp(-(profile.gamma0 + profile.gamma1 * alignment)))
        accept = bool(rng.random() < p)
    if accept:
        return ClinicianFeedback(decision="accept", rationale=f"aligned plan ({alignment:.2f})")
    reason, disputed, rationale = _rejection_details(profile, proposal)
    return ClinicianFeedback(decision="reject", reason_category=reason,
                             disputed_parameters=disputed, rationale=rationale)


@dataclass
class SimulatedClinician:
    """Callable review hook for run_cycle; owns the profile's random stream."""

    profile: ClinicianProfile
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.profile.seed)

    def __call__(self, pending) -> ClinicianFeedback:
        return simulate_clinician(self.profile, pending.proposal, pending.safety, self._rng)


def always_accept(pending) -> ClinicianFeedback:
    """Autonomous-replay reviewer: accept the first safety-passing proposal."""
    return ClinicianFeedback(decision="accept", rationale="autonomous replay")


DEFAULT_STUDY_PROFILE = ClinicianProfile(
    clinician_id="study-clinician",
    weights={
        "target_driven_assertive": 0.85,
        "conservative_small_step": 0.25,
        "single_key_parameter_first": 0.35,
        "stay_in_mode": 0.70,
        "mode_level_change": 0.30,
        "prio_oxygenation": 0.75,
        "prio_ventilation_acid_base": 0.70,
        "prio_synchrony_comfort": 0.80,
        "prio_weaning": 0.70,
        "prio_lung_protection": 0.65,
        "prio_hemodynamics": 0.65,
        "defer_when_insufficient": 0.50,
    },
    acceptance="deterministic",
    tau=0.62,
    seed=17,
)
