"""Preference bandit: scoring, updates, ranking, regret, featurization."""

import numpy as np
import pytest

from vdss.bandit import (
    FEATURE_DIM,
    N_ARMS,
    BanditHyperparams,
    CategoryScores,
    ContextFeaturizer,
    PreferenceState,
    apply_signal_update,
    bandit_update,
    cycle_regret,
    preference_scores,
    rank_candidates,
)
from vdss.contracts import (
    PREFERENCE_CATEGORIES,
    CycleContext,
    CycleRecord,
    PatientState,
    PhaseGoals,
    PreferenceSignal,
    Proposal,
    StateSummary,
    TraceEntry,
    VentilatorSettings,
    WaveformCues,
)
from vdss.contracts import ClinicianFeedback

ARMS = PREFERENCE_CATEGORIES


def _e(i):
    x = np.zeros(FEATURE_DIM)
    x[i] = 1.0
    return x


def _proposal(tags, n_updates=1):
    updates = {p: 10.0 for p in ("fio2", "peep", "resp_rate_set")[:n_updates]}
    return Proposal(cycle_id="c", round_index=1, strategy="oxygenation",
                    setting_updates=updates, category_tags=tuple(tags), rationale="t")


def test_fresh_state_scores_are_uniform_one():
    state = PreferenceState.fresh("d", BanditHyperparams(ridge_lambda=1.0, exploration_alpha=1.0))
    scores = preference_scores(state, _e(0))
    for cat in ARMS:
        assert scores.mean[cat] == pytest.approx(0.0)
        assert scores.uncertainty[cat] == pytest.approx(1.0)
        assert scores.score[cat] == pytest.approx(1.0)


def test_zero_context_scores_zero():
    state = PreferenceState.fresh("d")
    scores = preference_scores(state, np.zeros(FEATURE_DIM))
    assert all(v == pytest.approx(0.0) for v in scores.score.values())


def test_single_update_ridge_solution():
    """After one unit-reward update on e1 with lambda=1, theta = e1/2 (dense-solve oracle)."""
    state = PreferenceState.fresh("d", BanditHyperparams(1.0, 0.0, 0.5))
    arm = ARMS[0]
    signal = PreferenceSignal(evidenced_by_accept=(arm,))
    new = bandit_update(state, _e(0), _proposal([arm]), (), signal)

    # independent dense solve: theta = (I + e1 e1^T)^-1 e1
    a = np.eye(FEATURE_DIM) + np.outer(_e(0), _e(0))
    theta_oracle = np.linalg.solve(a, _e(0))
    assert theta_oracle[0] == pytest.approx(0.5)

    scores = preference_scores(new, _e(0))
    assert scores.mean[arm] == pytest.approx(0.5, abs=1e-12)
    assert scores.score[arm] == pytest.approx(0.5, abs=1e-12)  # alpha = 0


def test_update_matrix_arithmetic():
    state = PreferenceState.fresh("d", BanditHyperparams(1.0, 1.0, 0.5))
    arm = "conservative_small_step"
    i = ARMS.index(arm)
    signal = PreferenceSignal(evidenced_by_accept=(arm,))
    new = bandit_update(state, _e(0), _proposal([arm]), (), signal)
    expected_a = np.eye(FEATURE_DIM)
    expected_a[0, 0] = 2.0
    np.testing.assert_allclose(new.design[i], expected_a)
    np.testing.assert_allclose(new.response[i], _e(0))
    assert new.update_count == 1


def test_negative_evidence_weight():
    state = PreferenceState.fresh("d", BanditHyperparams(1.0, 1.0, 0.5))
    signal = PreferenceSignal(evidenced_by_accept=("prio_oxygenation",),
                              evidenced_only_by_reject=("target_driven_assertive",))
    new = bandit_update(state, _e(1), _proposal(["prio_oxygenation"]), (), signal)
    i_acc = ARMS.index("prio_oxygenation")
    i_rej = ARMS.index("target_driven_assertive")
    np.testing.assert_allclose(new.response[i_acc], _e(1))
    np.testing.assert_allclose(new.response[i_rej], -0.5 * _e(1))
    assert new.update_count == 2


def test_empty_signal_leaves_state_unchanged():
    state = PreferenceState.fresh("d")
    new = bandit_update(state, _e(0), _proposal(["stay_in_mode"]), (), PreferenceSignal())
    np.testing.assert_array_equal(new.design, state.design)
    np.testing.assert_array_equal(new.response, state.response)
    assert new.update_count == state.update_count  # zero arm-updates applied


def test_untouched_arms_bit_identical():
    state = PreferenceState.fresh("d")
    signal = PreferenceSignal(evidenced_by_accept=("prio_weaning",))
    new = bandit_update(state, np.linspace(-1, 1, FEATURE_DIM), _proposal(["prio_weaning"]),
                        (), signal)
    touched = ARMS.index("prio_weaning")
    for i in range(N_ARMS):
        if i == touched:
            continue
        assert new.design[i].tobytes() == state.design[i].tobytes()
        assert new.response[i].tobytes() == state.response[i].tobytes()


def test_update_requires_acceptance():
    state = PreferenceState.fresh("d")
    with pytest.raises(ValueError):
        bandit_update(state, _e(0), None, (), PreferenceSignal())


def test_update_rejects_overlapping_signal():
    state = PreferenceState.fresh("d")
    with pytest.raises(ValueError):
        apply_signal_update(state, _e(0), PreferenceSignal(
            evidenced_by_accept=("prio_weaning",), evidenced_only_by_reject=("prio_weaning",)))


def test_input_state_not_mutated():
    state = PreferenceState.fresh("d")
    before = state.design.tobytes()
    bandit_update(state, _e(0), _proposal(["stay_in_mode"]),
                  (), PreferenceSignal(evidenced_by_accept=("stay_in_mode",)))
    assert state.design.tobytes() == before
    assert state.update_count == 0


def _random_signal(rng):
    arms = list(rng.choice(ARMS, size=rng.integers(1, 5), replace=False))
    split = int(rng.integers(0, len(arms) + 1))
    return PreferenceSignal(evidenced_by_accept=tuple(sorted(arms[:split])),
                            evidenced_only_by_reject=tuple(sorted(arms[split:])))


def test_spd_preserved_under_fuzzed_updates():
    rng = np.random.default_rng(5)
    state = PreferenceState.fresh("d", BanditHyperparams(0.7, 1.0, 0.5))
    for _ in range(120):
        x = rng.normal(0, 1.5, FEATURE_DIM)
        state = apply_signal_update(state, x, _random_signal(rng))
    for i in range(N_ARMS):
        np.linalg.cholesky(state.design[i])  # raises if not SPD
        np.testing.assert_allclose(state.design[i], state.design[i].T)


def test_incremental_equals_batch_ridge():
    rng = np.random.default_rng(9)
    hp = BanditHyperparams(1.3, 1.0, 0.5)
    for _ in range(50):
        state = PreferenceState.fresh("d", hp)
        batch_a = np.tile(hp.ridge_lambda * np.eye(FEATURE_DIM), (N_ARMS, 1, 1))
        batch_b = np.zeros((N_ARMS, FEATURE_DIM))
        for _ in range(rng.integers(2, 15)):
            x = rng.normal(0, 1, FEATURE_DIM)
            signal = _random_signal(rng)
            state = apply_signal_update(state, x, signal)
            for cat in signal.evidenced_by_accept:
                i = ARMS.index(cat)
                batch_a[i] += np.outer(x, x)
                batch_b[i] += x
            for cat in signal.evidenced_only_by_reject:
                i = ARMS.index(cat)
                batch_a[i] += np.outer(x, x)
                batch_b[i] += -hp.negative_evidence_beta * x
        for i in range(N_ARMS):
            theta_inc = np.linalg.solve(state.design[i], state.response[i])
            theta_batch = np.linalg.solve(batch_a[i], batch_b[i])
            denom = max(1.0, np.linalg.norm(theta_batch))
            assert np.linalg.norm(theta_inc - theta_batch) / denom < 1e-9


# -- ranking -------------------------------------------------------------------


def _scores(**overrides):
    base = {c: 0.0 for c in ARMS}
    base.update(overrides)
    return base


def test_rank_by_mean_tag_score():
    cands = [_proposal(["target_driven_assertive"]), _proposal(["conservative_small_step"])]
    ranked = rank_candidates(cands, _scores(conservative_small_step=2.0,
                                            target_driven_assertive=1.0))
    assert ranked[0].category_tags == ("conservative_small_step",)


def test_rank_tie_breaks_fewer_updates():
    cands = [_proposal(["stay_in_mode"], n_updates=2), _proposal(["stay_in_mode"], n_updates=1)]
    ranked = rank_candidates(cands, _scores())
    assert len(ranked[0].setting_updates) == 1


def test_rank_stable_under_uniform_scores():
    rng = np.random.default_rng(2)
    for _ in range(50):
        tags = [[str(rng.choice(ARMS))] for _ in range(4)]
        cands = [_proposal(t, n_updates=2) for t in tags]
        ranked = rank_candidates(cands, _scores())
        # brute-force oracle: uniform scores + equal sizes => input order
        assert ranked == cands


def test_rank_accepts_category_scores_object():
    scores = CategoryScores.uniform(1.0)
    cands = [_proposal(["stay_in_mode"]), _proposal(["prio_weaning"])]
    assert rank_candidates(cands, scores) == cands


# -- regret --------------------------------------------------------------------


def _record(status, rounds):
    state = PatientState(timestamp=0.0, weight_kg=70.0)
    settings = VentilatorSettings(mode="PRVC", peep=8.0, fio2=40.0, resp_rate_set=14.0)
    context = CycleContext(state, settings, (), (), tuple([0.0] * FEATURE_DIM))
    trace = []
    for k in range(1, rounds + 1):
        is_last = k == rounds
        decision = "accept" if (status == "accepted" and is_last) else "reject"
        feedback = ClinicianFeedback(decision=decision,
                                     reason_category=None if decision == "accept" else "other")
        trace.append(TraceEntry(_proposal(["stay_in_mode"]), feedback))
    return CycleRecord(
        cycle_id="c", clinician_id="d", context=context, trace=tuple(trace), rounds=rounds,
        accepted_settings=settings if status == "accepted" else None,
        note="n", preference_signal=PreferenceSignal(), status=status)


def test_cycle_regret_exhaustive_small_cases():
    k_max = 5
    for k in range(1, k_max + 1):
        assert cycle_regret(_record("accepted", k), k_max) == k - 1
    assert cycle_regret(_record("exhausted", k_max), k_max) == k_max
    assert cycle_regret(_record("hold", 0), k_max) == 0
    with pytest.raises(ValueError):
        cycle_regret(_record("failed", 0), k_max)


# -- argmax learning property ----------------------------------------------------


def test_preferred_arm_wins_after_thirty_accepts():
    rng = np.random.default_rng(31)
    hp = BanditHyperparams(1.0, 1.0, 0.5)
    state = PreferenceState.fresh("d", hp)
    preferred = "target_driven_assertive"
    others = ("conservative_small_step", "single_key_parameter_first")
    contexts = []
    for _ in range(30):
        x = rng.normal(0, 1, FEATURE_DIM)
        x[-1] = 1.0
        contexts.append(x)
        signal = PreferenceSignal(evidenced_by_accept=(preferred,),
                                  evidenced_only_by_reject=tuple(sorted(others)))
        state = apply_signal_update(state, x, signal)
    for x in contexts:
        scores = preference_scores(state, x)
        assert scores.mean[preferred] > max(scores.mean[o] for o in others)


# -- featurizer -------------------------------------------------------------------


def test_featurizer_layout_and_flags():
    featurizer = ContextFeaturizer()
    state = PatientState(timestamp=0.0, weight_kg=70.0, spo2=94.0, resp_rate_obs=18.0,
                         ph=7.38, paco2=42.0)
    settings = VentilatorSettings(mode="PRVC", peep=8.0, fio2=50.0, resp_rate_set=14.0)
    goals = PhaseGoals(phase="stabilization", primary_goal="maintain_stability")
    cues = WaveformCues(quality="good", asynchrony_patterns=("sawtooth",), uncertainty=0.2)
    summary = StateSummary(abnormalities=(), evidence_sufficient=True)

    x = featurizer.featurize(state, settings, goals, cues, summary)
    assert len(x) == FEATURE_DIM
    assert x[:6] == (0.0,) * 6            # all at their reference means
    assert x[6:9] == (0.0, 1.0, 0.0)       # stabilization one-hot
    assert x[9] == 1.0                     # asynchrony flag
    assert x[10] == 1.0                    # evidence sufficient
    assert x[11] == 1.0                    # constant term

    x_missing = featurizer.featurize(PatientState(timestamp=0.0, weight_kg=70.0),
                                     VentilatorSettings(mode="PRVC"), None, None, None)
    assert x_missing[:6] == (0.0,) * 6
    assert x_missing[6:9] == (0.0, 0.0, 0.0)
    assert x_missing[9] == 0.0 and x_missing[10] == 0.0 and x_missing[11] == 1.0


def test_featurizer_z_scoring():
    featurizer = ContextFeaturizer()
    state = PatientState(timestamp=0.0, weight_kg=70.0, spo2=99.0)  # (99-94)/5 = 1
    settings = VentilatorSettings(mode="PRVC", peep=12.0, fio2=70.0, resp_rate_set=14.0)
    x = featurizer.featurize(state, settings, None, None, None)
    assert x[0] == pytest.approx(1.0)
    assert x[1] == pytest.approx((70.0 - 50.0) / 20.0)
    assert x[2] == pytest.approx((12.0 - 8.0) / 4.0)


def test_state_snapshot_round_trip():
    rng = np.random.default_rng(4)
    state = PreferenceState.fresh("doc-9", BanditHyperparams(1.1, 0.9, 0.4))
    for _ in range(5):
        state = apply_signal_update(state, rng.normal(0, 1, FEATURE_DIM), _random_signal(rng))
    restored = PreferenceState.from_payload(state.to_payload())
    np.testing.assert_array_equal(restored.design, state.design)
    np.testing.assert_array_equal(restored.response, state.response)
    assert restored.update_count == state.update_count
    assert restored.hyperparams == state.hyperparams
