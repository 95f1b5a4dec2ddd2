"""Per-clinician preference learning over the twelve category arms.

Each arm keeps a ridge-regularized linear model of cycle-context reward:
a design matrix A (F x F, initialized to lambda*I) and a response vector b.
Scoring an arm at context x uses the closed-form solution theta = A^-1 b
with an optimism bonus alpha * sqrt(x^T A^-1 x). A single update runs at
cycle closure: arms evidenced by the accepted proposal receive reward +1,
arms evidenced only by rejected proposals receive -beta.

Regret for a finished cycle counts its rejected rounds, capped at the
round budget when no proposal was accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .contracts import (
    FEATURE_DIM,
    PHASES,
    PREFERENCE_CATEGORIES,
    CycleRecord,
    PatientState,
    PhaseGoals,
    PreferenceSignal,
    Proposal,
    StateSummary,
    VentilatorSettings,
    WaveformCues,
)

N_ARMS = len(PREFERENCE_CATEGORIES)
_ARM_INDEX = {c: i for i, c in enumerate(PREFERENCE_CATEGORIES)}


@dataclass(frozen=True)
class BanditHyperparams:
    ridge_lambda: float = 1.0
    exploration_alpha: float = 1.0
    negative_evidence_beta: float = 0.5

    def __post_init__(self):
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")
        if self.negative_evidence_beta < 0:
            raise ValueError("negative_evidence_beta must be >= 0")


@dataclass(frozen=True)
class PreferenceState:
    """Bandit state for one clinician: per-arm (A, b) plus bookkeeping.

    ``design`` has shape (N_ARMS, F, F), ``response`` (N_ARMS, F).
    ``update_count`` counts individual arm updates ever applied.
    """

    clinician_id: str
    design: np.ndarray
    response: np.ndarray
    update_count: int
    hyperparams: BanditHyperparams

    @staticmethod
    def fresh(clinician_id: str, hyperparams: Optional[BanditHyperparams] = None) -> "PreferenceState":
        hp = hyperparams or BanditHyperparams()
        design = np.tile(hp.ridge_lambda * np.eye(FEATURE_DIM), (N_ARMS, 1, 1))
        response = np.zeros((N_ARMS, FEATURE_DIM))
        return PreferenceState(clinician_id, design, response, 0, hp)

    def to_payload(self) -> dict:
        return {
            "clinician_id": self.clinician_id,
            "design": self.design.tolist(),
            "response": self.response.tolist(),
            "update_count": self.update_count,
            "hyperparams": {
                "ridge_lambda": self.hyperparams.ridge_lambda,
                "exploration_alpha": self.hyperparams.exploration_alpha,
                "negative_evidence_beta": self.hyperparams.negative_evidence_beta,
            },
        }

    @staticmethod
    def from_payload(payload: Mapping) -> "PreferenceState":
        hp = BanditHyperparams(**payload["hyperparams"])
        design = np.asarray(payload["design"], dtype=float)
        response = np.asarray(payload["response"], dtype=float)
        if design.shape != (N_ARMS, FEATURE_DIM, FEATURE_DIM) or response.shape != (N_ARMS, FEATURE_DIM):
            raise ValueError("preference state payload has wrong shape")
        return PreferenceState(payload["clinician_id"], design, response,
                               int(payload["update_count"]), hp)


@dataclass(frozen=True)
class CategoryScores:
    """Per-arm ranking scores split into mean and uncertainty components."""

    score: Mapping[str, float]
    mean: Mapping[str, float]
    uncertainty: Mapping[str, float]

    def top(self, n: int = 3) -> list:
        ranked = sorted(self.score.items(), key=lambda kv: (-kv[1], _ARM_INDEX[kv[0]]))
        return ranked[:n]

    @staticmethod
    def uniform(value: float = 0.0) -> "CategoryScores":
        flat = {c: value for c in PREFERENCE_CATEGORIES}
        return CategoryScores(score=flat, mean=dict(flat), uncertainty=dict(flat))


def preference_scores(state: PreferenceState, x: Sequence[float]) -> CategoryScores:
    """Optimistic arm scores at context x: mean estimate plus exploration bonus."""
    xv = np.asarray(x, dtype=float)
    if xv.shape != (FEATURE_DIM,):
        raise ValueError(f"context vector must have dimension {FEATURE_DIM}")
    if not np.all(np.isfinite(xv)):
        raise ValueError("context vector must be finite")
    alpha = state.hyperparams.exploration_alpha
    score, mean, unc = {}, {}, {}
    for i, cat in enumerate(PREFERENCE_CATEGORIES):
        theta = np.linalg.solve(state.design[i], state.response[i])
        m = float(xv @ theta)
        u = float(np.sqrt(max(0.0, xv @ np.linalg.solve(state.design[i], xv))))
        mean[cat] = m
        unc[cat] = u
        score[cat] = m + alpha * u
    return CategoryScores(score=score, mean=mean, uncertainty=unc)


def apply_signal_update(state: PreferenceState, x: Sequence[float],
                        signal: PreferenceSignal) -> PreferenceState:
    """Arm-level arithmetic shared by the cycle-end update paths.

    Accept-evidenced arms receive reward +1, reject-only arms -beta; all
    other arms are untouched. Returns a new state.
    """
    overlap = set(signal.evidenced_by_accept) & set(signal.evidenced_only_by_reject)
    if overlap:
        raise ValueError(f"preference signal subsets overlap: {sorted(overlap)}")
    xv = np.asarray(x, dtype=float)
    if xv.shape != (FEATURE_DIM,) or not np.all(np.isfinite(xv)):
        raise ValueError("context vector must be finite with dimension %d" % FEATURE_DIM)

    design = state.design.copy()
    response = state.response.copy()
    outer = np.outer(xv, xv)
    beta = state.hyperparams.negative_evidence_beta
    applied = 0
    for cat in signal.evidenced_by_accept:
        i = _ARM_INDEX[cat]
        design[i] += outer
        response[i] += xv
        applied += 1
    for cat in signal.evidenced_only_by_reject:
        i = _ARM_INDEX[cat]
        design[i] += outer
        response[i] += -beta * xv
        applied += 1
    return replace(state, design=design, response=response,
                   update_count=state.update_count + applied)


def bandit_update(state: PreferenceState, x: Sequence[float], accepted: Optional[Proposal],
                  trace: Sequence, signal: PreferenceSignal) -> PreferenceState:
    """Single cycle-end update from the clinician-approved outcome.

    Returns a new state; the input state is not modified. Only arms named
    in the signal are touched. Must only be called for accepted cycles.
    """
    if accepted is None:
        raise ValueError("bandit_update requires an accepted proposal")
    return apply_signal_update(state, x, signal)


def rank_candidates(candidates: Sequence[Proposal], scores) -> list:
    """Order candidates by mean arm score over their tags, descending.

    Ties break toward fewer setting updates, then stable input order.
    Accepts CategoryScores or a plain category -> score mapping.
    """
    table = scores.score if isinstance(scores, CategoryScores) else scores

    def key(item):
        idx, cand = item
        tag_scores = [table[t] for t in cand.category_tags]
        return (-(sum(tag_scores) / len(tag_scores)), len(cand.setting_updates), idx)

    return [cand for _, cand in sorted(enumerate(candidates), key=key)]


def cycle_regret(record: CycleRecord, k_max: int) -> int:
    """Rejected rounds in a finished cycle: K_t - 1 when accepted, capped at K_max."""
    if record.status == "accepted":
        return record.rounds - 1
    if record.status == "exhausted":
        return k_max
    if record.status == "hold":
        return 0
    raise ValueError(f"regret undefined for status {record.status!r}")


def record_regret(record: CycleRecord) -> int:
    """Regret recoverable from the record alone.

    An exhausted cycle's trace length equals the round budget it ran under,
    so no external K_max is needed.
    """
    return cycle_regret(record, record.rounds)


# ---------------------------------------------------------------------------
# Context featurization

_Z_FIELDS = ("spo2", "fio2", "peep", "resp_rate_obs", "ph", "paco2")

DEFAULT_FEATURE_STATS = {
    "spo2": (94.0, 5.0),
    "fio2": (50.0, 20.0),
    "peep": (8.0, 4.0),
    "resp_rate_obs": (18.0, 6.0),
    "ph": (7.38, 0.08),
    "paco2": (42.0, 10.0),
}


@dataclass(frozen=True)
class ContextFeaturizer:
    """Fixed map from cycle evidence to the F=12 context vector.

    Layout: six z-scored vitals/settings, one-hot treatment phase (3),
    waveform asynchrony flag, evidence-sufficiency flag, constant 1.
    Missing inputs featurize to 0 (their reference mean).
    """

    stats: Mapping[str, tuple] = None  # field -> (mean, std)

    def __post_init__(self):
        if self.stats is None:
            object.__setattr__(self, "stats", dict(DEFAULT_FEATURE_STATS))
        for name in _Z_FIELDS:
            mean, std = self.stats[name]
            if std <= 0:
                raise ValueError(f"std for {name} must be > 0")

    def featurize(self, state: PatientState, settings: VentilatorSettings,
                  goals: Optional[PhaseGoals], cues: Optional[WaveformCues],
                  summary: Optional[StateSummary]) -> tuple:
        raw = {
            "spo2": state.spo2,
            "fio2": settings.fio2,
            "peep": settings.peep,
            "resp_rate_obs": state.resp_rate_obs,
            "ph": state.ph,
            "paco2": state.paco2,
        }
        out = []
        for name in _Z_FIELDS:
            mean, std = self.stats[name]
            value = raw[name]
            out.append(0.0 if value is None else (float(value) - mean) / std)
        phase = goals.phase if goals is not None else None
        out.extend(1.0 if phase == p else 0.0 for p in PHASES)
        asynchrony = bool(cues and any(p != "none" for p in cues.asynchrony_patterns))
        out.append(1.0 if asynchrony else 0.0)
        out.append(1.0 if (summary is not None and summary.evidence_sufficient) else 0.0)
        out.append(1.0)
        vec = tuple(out)
        assert len(vec) == FEATURE_DIM
        return vec

    @staticmethod
    def from_config(cfg: Mapping) -> "ContextFeaturizer":
        stats = {k: tuple(v) for k, v in cfg.get("feature_stats", {}).items()}
        merged = dict(DEFAULT_FEATURE_STATS)
        merged.update(stats)
        return ContextFeaturizer(stats=merged)


def hyperparams_from_config(cfg: Mapping) -> BanditHyperparams:
    return BanditHyperparams(
        ridge_lambda=float(cfg.get("ridge_lambda", 1.0)),
        exploration_alpha=float(cfg.get("exploration_alpha", 1.0)),
        negative_evidence_beta=float(cfg.get("negative_evidence_beta", 0.5)),
    )
