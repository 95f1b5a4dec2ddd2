"""Acceptance suite: one test per release criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. The heavyweight cycle fuzz is shared between the loop-law and
safety-gate criteria through a module-scoped fixture.
"""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from vdss.agents import AgentRole
from vdss.bandit import (
    FEATURE_DIM,
    N_ARMS,
    BanditHyperparams,
    PreferenceState,
    apply_signal_update,
    bandit_update,
    cycle_regret,
)
from vdss.clinician import DEFAULT_STUDY_PROFILE
from vdss.contracts import (
    PREFERENCE_CATEGORIES,
    SETTING_PARAMS,
    ClinicianFeedback,
    PreferenceSignal,
    Proposal,
    VentilatorSettings,
    mask_settings,
)
from vdss.engine import EngineConfig, build_runtime, run_cycle
from vdss.memory import MemoryStore
from vdss.replay import (
    _study_snapshot,
    _SCENARIOS,
    _SCENARIO_WEIGHTS,
    compute_error_metrics,
    load_trajectories,
    replay_next_step,
    run_regret_study,
)
from vdss.safety import check_bounds, run_safety_checks
from vdss.synthetic import SynthesisConfig, generate_cohort, write_jsonl

K_MAX = 5
N_FUZZ_CYCLES = 10_000


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared 10k-cycle fuzz (loop laws + safety gate)


@dataclass
class FuzzOutcome:
    statuses: dict = field(default_factory=dict)
    law_violations: list = field(default_factory=list)
    presented: int = 0
    unsafe_presented: int = 0
    runtime_s: float = 0.0


@pytest.fixture(scope="module")
def cycle_fuzz(tmp_path_factory):
    rng = np.random.default_rng(2026)
    store = MemoryStore(tmp_path_factory.mktemp("fuzz") / "memory.jsonl")
    runtime = build_runtime(store)
    registry = runtime.registry
    config = EngineConfig(k_max=K_MAX)
    reasons = ("wrong_priority", "wrong_mode", "parameter_magnitude", "feasibility", "other")
    outcome = FuzzOutcome()

    t0 = time.perf_counter()
    for i in range(N_FUZZ_CYCLES):
        kind = str(rng.choice(_SCENARIOS, p=_SCENARIO_WEIGHTS))
        snapshot = _study_snapshot(kind, i, 2026, rng)
        current = mask_settings(snapshot.settings, registry)
        accept_round = int(rng.integers(1, K_MAX + 3))  # > K_MAX means reject everything

        def reviewer(pending, _accept_round=accept_round, _current=current):
            outcome.presented += 1
            if not run_safety_checks(pending.proposal, _current, registry).passed:
                outcome.unsafe_presented += 1
            if pending.round_index >= _accept_round:
                return ClinicianFeedback(decision="accept")
            reason = reasons[int(rng.integers(0, len(reasons)))]
            disputed = ()
            if reason in ("parameter_magnitude", "feasibility") and pending.proposal.setting_updates:
                params = sorted(pending.proposal.setting_updates)
                disputed = (params[int(rng.integers(0, len(params)))],)
            return ClinicianFeedback(decision="reject", reason_category=reason,
                                     disputed_parameters=disputed)

        updates_before = runtime.bandit_updates
        record = run_cycle(runtime, snapshot, "fuzz-doc", config, reviewer, cycle_index=i)
        updates_applied = runtime.bandit_updates - updates_before

        outcome.statuses[record.status] = outcome.statuses.get(record.status, 0) + 1
        if len(record.trace) > K_MAX:
            outcome.law_violations.append((i, "trace exceeds K_max"))
        accepts = [j for j, e in enumerate(record.trace) if e.feedback.decision == "accept"]
        if record.status == "accepted":
            if accepts != [len(record.trace) - 1]:
                outcome.law_violations.append((i, "proposal after accept or missing accept"))
            if record.rounds != len(record.trace):
                outcome.law_violations.append((i, "rounds != |trace|"))
            if updates_applied != 1:
                outcome.law_violations.append((i, f"{updates_applied} bandit updates on accept"))
        else:
            if accepts:
                outcome.law_violations.append((i, f"accept inside {record.status} cycle"))
            if updates_applied != 0:
                outcome.law_violations.append((i, f"bandit update on {record.status}"))
        if record.status == "hold" and record.trace:
            outcome.law_violations.append((i, "non-empty trace on hold"))
    outcome.runtime_s = time.perf_counter() - t0
    store.close()
    return outcome


def test_loop_laws_over_fuzzed_cycles(cycle_fuzz):
    """Eq. of the first-accept round and the single cycle-end update, at scale."""
    ok = not cycle_fuzz.law_violations
    detail = (f"{N_FUZZ_CYCLES} cycles in {cycle_fuzz.runtime_s:.1f}s, statuses "
              f"{dict(sorted(cycle_fuzz.statuses.items()))}, "
              f"violations={cycle_fuzz.law_violations[:3]}")
    _verdict("loop laws (no proposal after accept, |trace|<=K_max, single update)", ok, detail)
    assert cycle_fuzz.statuses.get("accepted", 0) > 0
    assert cycle_fuzz.statuses.get("exhausted", 0) > 0
    assert cycle_fuzz.statuses.get("hold", 0) > 0


def test_safety_gate_on_presented_proposals(cycle_fuzz):
    """No clinician ever sees a proposal that fails any of the three checks."""
    ok = cycle_fuzz.presented >= 10_000 and cycle_fuzz.unsafe_presented == 0
    _verdict("safety gate at review checkpoints", ok,
             f"{cycle_fuzz.presented} presented proposals, {cycle_fuzz.unsafe_presented} unsafe")


def test_safety_validator_catches_out_of_bounds(registry):
    rng = np.random.default_rng(7)
    current = VentilatorSettings(mode="PRVC", peep=8.0, fio2=50.0, resp_rate_set=16.0)
    checked = 0
    missed = 0
    out_of_bounds = 0
    for _ in range(10_000):
        spec = registry.modes[int(rng.integers(0, len(registry.modes)))]
        params = sorted(spec.applicable)
        chosen = [params[i] for i in rng.choice(len(params), size=int(rng.integers(1, 4)),
                                                replace=False)]
        updates = {p: float(np.round(rng.uniform(-20, 140), 1)) for p in chosen}
        proposal = Proposal(cycle_id="f", round_index=1, strategy="oxygenation",
                            setting_updates=updates, mode_change=spec.id,
                            category_tags=("stay_in_mode",), rationale="fuzz")
        report = check_bounds(proposal, current, registry)
        violating = {p for p, v in updates.items()
                     if not (spec.bounds[p][0] <= v <= spec.bounds[p][1])}
        flagged = {v.parameter for v in report.violations}
        checked += 1
        if violating:
            out_of_bounds += 1
            if not violating <= flagged:
                missed += 1
    ok = missed == 0 and out_of_bounds > 1000
    _verdict("safety validator catches out-of-bounds", ok,
             f"{checked} fuzzed proposals, {out_of_bounds} with violations, {missed} missed")


# ---------------------------------------------------------------------------
# Bandit correctness


def test_bandit_incremental_equals_batch_ridge():
    rng = np.random.default_rng(99)
    hp = BanditHyperparams(1.0, 1.0, 0.5)
    arms = PREFERENCE_CATEGORIES
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        state = PreferenceState.fresh("d", hp)
        batch_a = np.tile(hp.ridge_lambda * np.eye(FEATURE_DIM), (N_ARMS, 1, 1))
        batch_b = np.zeros((N_ARMS, FEATURE_DIM))
        for _ in range(int(rng.integers(1, 9))):
            x = rng.normal(0, 1, FEATURE_DIM)
            picked = list(rng.choice(arms, size=int(rng.integers(1, 5)), replace=False))
            split = int(rng.integers(0, len(picked) + 1))
            signal = PreferenceSignal(evidenced_by_accept=tuple(sorted(picked[:split])),
                                      evidenced_only_by_reject=tuple(sorted(picked[split:])))
            state = apply_signal_update(state, x, signal)
            outer = np.outer(x, x)
            for cat in signal.evidenced_by_accept:
                i = arms.index(cat)
                batch_a[i] += outer
                batch_b[i] += x
            for cat in signal.evidenced_only_by_reject:
                i = arms.index(cat)
                batch_a[i] += outer
                batch_b[i] += -hp.negative_evidence_beta * x
        for i in range(N_ARMS):
            theta_inc = np.linalg.solve(state.design[i], state.response[i])
            theta_batch = np.linalg.solve(batch_a[i], batch_b[i])
            denom = max(1.0, float(np.linalg.norm(theta_batch)))
            worst = max(worst, float(np.linalg.norm(theta_inc - theta_batch)) / denom)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 10.0
    _verdict("bandit incremental == batch ridge",
             ok, f"1000 fuzzed sequences, worst relative error {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Regret semantics and the Fig.-2-style trend


def test_regret_semantics_exhaustive():
    from tests.test_bandit import _record  # reuse the record builder

    failures = []
    for k_max in (1, 2, 3, 5, 8):
        for k in range(1, k_max + 1):
            if cycle_regret(_record("accepted", k), k_max) != k - 1:
                failures.append(("accepted", k, k_max))
        if cycle_regret(_record("exhausted", k_max), k_max) != k_max:
            failures.append(("exhausted", k_max))
        if cycle_regret(_record("hold", 0), k_max) != 0:
            failures.append(("hold", k_max))
    _verdict("regret semantics (K_t-1, capped at K_max, hold=0)", not failures,
             f"exhaustive small cases, failures={failures}")


def test_regret_trend_downward_and_reproducible():
    t0 = time.perf_counter()
    series = run_regret_study(100, DEFAULT_STUDY_PROFILE, variant="full", seed=0, k_max=K_MAX)
    elapsed = time.perf_counter() - t0
    early = series.window_mean(0, 20)
    late = series.window_mean(80, 100)
    trend_ok = late <= 0.7 * early
    again = run_regret_study(100, DEFAULT_STUDY_PROFILE, variant="full", seed=0, k_max=K_MAX)
    reproducible = series.to_csv() == again.to_csv()
    ok = trend_ok and reproducible and elapsed < 60.0
    _verdict("regret trend (late <= 0.7 x early, byte-reproducible)", ok,
             f"early={early:.3f} late={late:.3f} ratio={late / max(early, 1e-9):.3f} "
             f"reproducible={reproducible} {elapsed:.1f}s")


def test_ablation_direction_over_paired_seeds():
    holds = 0
    rows = []
    for seed in range(10):
        full = run_regret_study(100, DEFAULT_STUDY_PROFILE, variant="full", seed=seed,
                                k_max=K_MAX)
        nopref = run_regret_study(100, DEFAULT_STUDY_PROFILE, variant="nopref", seed=seed,
                                  k_max=K_MAX)
        both = run_regret_study(100, DEFAULT_STUDY_PROFILE, variant="noimgnopref", seed=seed,
                                k_max=K_MAX)
        f = float(np.median(full.regrets[80:]))
        np_ = float(np.median(nopref.regrets[80:]))
        nn = float(np.median(both.regrets[80:]))
        good = f <= np_ and f <= nn
        holds += good
        rows.append((seed, f, np_, nn, good))
    ok = holds >= 7
    _verdict("ablation direction (full <= NoPref and full <= NoImgNoPref)", ok,
             f"holds in {holds}/10 paired seeds; per-seed medians {rows[:3]}...")


# ---------------------------------------------------------------------------
# Metric oracle


def _oracle(entries):
    if not entries:
        return 0.0, 0.0, 0.0
    sq = sum((yt - yp) ** 2 for _, yt, yp in entries)
    ab = sum(abs(yt - yp) for _, yt, yp in entries)
    r2s = []
    for param in sorted({p for p, _, _ in entries}):
        ys = [(yt, yp) for p, yt, yp in entries if p == param]
        mean = sum(yt for yt, _ in ys) / len(ys)
        ss_tot = sum((yt - mean) ** 2 for yt, _ in ys)
        ss_res = sum((yt - yp) ** 2 for yt, yp in ys)
        if ss_tot > 0:
            r2s.append(1.0 - ss_res / ss_tot)
    return sq / len(entries), ab / len(entries), (sum(r2s) / len(r2s) if r2s else 0.0)


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(55)
    params = list(SETTING_PARAMS)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 50))
        entries = [(params[int(rng.integers(0, len(params)))],
                    float(rng.normal()), float(rng.normal())) for _ in range(n)]
        metrics = compute_error_metrics(entries, n_attempted=n)
        mse, mae, r2 = _oracle(entries)
        for got, want in ((metrics.mse, mse), (metrics.mae, mae), (metrics.r2, r2)):
            denom = max(1.0, abs(want))
            worst = max(worst, abs(got - want) / denom)
    perfect = compute_error_metrics([("peep", 1.0, 1.0), ("peep", 2.0, 2.0)], n_attempted=2)
    values = [float(v) for v in np.random.default_rng(1).normal(size=9)]
    mean = math.fsum(values) / len(values)
    mean_pred = compute_error_metrics([("peep", v, mean) for v in values], n_attempted=9)
    ok = worst < 1e-9 and perfect.r2 == 1.0 and mean_pred.r2 == 0.0
    _verdict("metric oracle (MSE/MAE/averaged R2)", ok,
             f"100 random datasets, worst relative error {worst:.2e}, "
             f"perfect r2={perfect.r2}, mean-predictor r2={mean_pred.r2}")


# ---------------------------------------------------------------------------
# Rollback minimality


def test_rollback_minimality(tmp_path):
    store = MemoryStore(tmp_path / "memory.jsonl")
    runtime = build_runtime(store)
    from vdss.engine import CycleRunner, EncounterSnapshot, PendingReview
    from vdss.contracts import PatientState

    state = PatientState(timestamp=0.0, weight_kg=70.0, spo2=85.0, heart_rate=95.0, map=75.0,
                         ph=7.38, paco2=42.0, pao2=55.0, tidal_volume_obs=420.0,
                         resp_rate_obs=22.0)
    settings = VentilatorSettings(mode="PRVC", peep=8.0, fio2=50.0, resp_rate_set=16.0)
    runner = CycleRunner(runtime, EncounterSnapshot("enc-rb", state, settings), "doc",
                         EngineConfig(k_max=K_MAX))
    pending = runner.start()
    before = {role: runtime.stats.calls_for(role) for role in AgentRole}
    disputed = tuple(sorted(pending.proposal.setting_updates)[:1])
    outcome = runner.resume(ClinicianFeedback(decision="reject",
                                              reason_category="parameter_magnitude",
                                              disputed_parameters=disputed))
    deltas = {role.value: runtime.stats.calls_for(role) - before[role] for role in AgentRole}
    untouched = ("detection", "phase_goal_manager", "gate", "strategy_selector", "mode_select",
                 "waveform_analyzer")
    ok = (isinstance(outcome, PendingReview)
          and deltas["parameter_planner"] == 1
          and all(deltas[r] == 0 for r in untouched))
    _verdict("rollback minimality (parameter_magnitude touches only the planner)", ok,
             f"per-role extra calls {deltas}")


# ---------------------------------------------------------------------------
# Failure accounting


def test_completion_failure_rate_under_fault_injection(tmp_path):
    records = generate_cohort(SynthesisConfig(n_encounters=25, seed=41))
    path = tmp_path / "cohort.jsonl"
    write_jsonl(records, path)
    dataset = load_trajectories(path)
    metrics = replay_next_step(dataset, fault_rate=0.1, seed=41, k_max=K_MAX)
    calls = sum(s["calls"] for s in metrics.agent_stats.values())
    malformed = sum(s["malformed_outputs"] for s in metrics.agent_stats.values())
    ok = metrics.completion_failure_rate < 0.07 and malformed > 0
    _verdict("completion failure rate < 7% (fault p=0.1, retries=2)", ok,
             f"{metrics.n_failures}/{dataset.n_pairs} failed pairs "
             f"({metrics.completion_failure_rate:.4f}); faults really injected: "
             f"{malformed} malformed outputs over {calls} calls")


# ---------------------------------------------------------------------------
# Determinism and audit


def test_determinism_and_audit(tmp_path):
    logs = []
    exports = []
    for run in range(2):
        store = MemoryStore(tmp_path / f"audit-{run}.jsonl")
        run_regret_study(30, DEFAULT_STUDY_PROFILE, variant="full", seed=5, k_max=K_MAX,
                         store=store)
        exports.append(json.dumps(store.export_trail("study-5-0004"), sort_keys=True))
        store.close()
        logs.append((tmp_path / f"audit-{run}.jsonl").read_bytes())
    byte_identical = logs[0] == logs[1] and exports[0] == exports[1]

    store = MemoryStore(tmp_path / "audit-0.jsonl")
    runtime = build_runtime(store)
    snapshot = store.load_preference_state(DEFAULT_STUDY_PROFILE.clinician_id,
                                           runtime.hyperparams)
    replayed = PreferenceState.fresh(DEFAULT_STUDY_PROFILE.clinician_id, runtime.hyperparams)
    for payload in store.cycle_records(clinician_id=DEFAULT_STUDY_PROFILE.clinician_id):
        checked = runtime.validator.validate_message("cycle_record", payload["record"])
        assert checked.ok
        record = checked.value
        if record.status != "accepted":
            continue
        replayed = bandit_update(replayed, np.asarray(record.context.feature_vector),
                                 record.trace[-1].proposal, record.trace,
                                 record.preference_signal)
    drift = max(float(np.linalg.norm(replayed.design[i] - snapshot.design[i]))
                + float(np.linalg.norm(replayed.response[i] - snapshot.response[i]))
                for i in range(N_ARMS))
    store.close()
    ok = byte_identical and drift < 1e-9 and snapshot.update_count == replayed.update_count
    _verdict("determinism & audit (byte-identical trails, event-sourced replay)", ok,
             f"logs identical={byte_identical}, replay drift={drift:.2e}, "
             f"updates={snapshot.update_count}")
