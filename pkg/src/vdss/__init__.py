"""Human-in-the-loop ventilator decision support.

A contract-governed multi-agent adjustment cycle with deterministic safety
gating, structured rejection-driven replanning, layered auditable memory,
per-clinician preference bandits updated at cycle closure, and a
replay/regret evaluation harness.
"""

from .bandit import (
    BanditHyperparams,
    CategoryScores,
    ContextFeaturizer,
    PreferenceState,
    bandit_update,
    cycle_regret,
    preference_scores,
    rank_candidates,
)
from .contracts import (
    PREFERENCE_CATEGORIES,
    ClinicianFeedback,
    ContractValidator,
    CycleRecord,
    ModeRegistry,
    PatientState,
    Proposal,
    VentilatorSettings,
    mask_settings,
)
from .engine import (
    CycleRunner,
    EncounterSnapshot,
    EngineConfig,
    PendingReview,
    build_runtime,
    run_cycle,
)
from .memory import MemoryStore
from .replay import load_trajectories, replay_next_step, run_regret_study
from .safety import run_safety_checks

__version__ = "0.1.0"

__all__ = [
    "BanditHyperparams", "CategoryScores", "ContextFeaturizer", "PreferenceState",
    "bandit_update", "cycle_regret", "preference_scores", "rank_candidates",
    "PREFERENCE_CATEGORIES", "ClinicianFeedback", "ContractValidator", "CycleRecord",
    "ModeRegistry", "PatientState", "Proposal", "VentilatorSettings", "mask_settings",
    "CycleRunner", "EncounterSnapshot", "EngineConfig", "PendingReview",
    "build_runtime", "run_cycle", "MemoryStore", "load_trajectories",
    "replay_next_step", "run_regret_study", "run_safety_checks",
]
