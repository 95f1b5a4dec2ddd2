import { describe, expect, it } from "vitest";

import type { PendingReview, RegretPoint, TrailEnvelope } from "../src/types.js";
import {
  buildReviewViewModel,
  preferenceBars,
  regretChartData,
  toggleDisputed,
  trailTimeline,
  validateRejectForm,
} from "../src/viewmodel.js";

function review(overrides: Partial<PendingReview> = {}): PendingReview {
  return {
    cycle_id: "enc-1-c0000",
    round_index: 1,
    k_max: 5,
    proposal: {
      cycle_id: "enc-1-c0000",
      round_index: 1,
      strategy: "oxygenation",
      setting_updates: { fio2: 60, peep: 10 },
      category_tags: ["target_driven_assertive", "prio_oxygenation", "stay_in_mode"],
      rationale: "raise oxygen support",
    },
    current_settings: { mode: "PRVC", peep: 8, fio2: 50, resp_rate_set: 16 },
    bounds: { peep: [0, 24], fio2: [21, 100], resp_rate_set: [4, 60] },
    safety: { verdict: "pass", violations: [], warnings: [] },
    preference_context: [
      { category: "stay_in_mode", score: 1.2 },
      { category: "prio_oxygenation", score: 1.1 },
      { category: "conservative_small_step", score: 0.9 },
    ],
    evidence_refs: ["spo2"],
    ...overrides,
  };
}

describe("buildReviewViewModel", () => {
  it("shows exactly the updated parameters with current values and bounds", () => {
    const vm = buildReviewViewModel(review());
    expect(vm.diffRows.map((r) => r.parameter)).toEqual(["peep", "fio2"]);
    const fio2 = vm.diffRows.find((r) => r.parameter === "fio2")!;
    expect(fio2.current).toBe(50);
    expect(fio2.proposed).toBe(60);
    expect(fio2.delta).toBe(10);
    expect(fio2.bounds).toEqual([21, 100]);
    expect(fio2.unit).toBe("%");
    expect(vm.roundLabel).toBe("1 / 5");
    expect(vm.modeChange).toBeNull();
  });

  it("renders a mode change when proposed", () => {
    const base = review();
    const vm = buildReviewViewModel(
      review({ proposal: { ...base.proposal, mode_change: "PSV" } }),
    );
    expect(vm.modeChange).toEqual({ from: "PRVC", to: "PSV" });
  });

  it("marks newly applicable parameters without a current value", () => {
    const base = review();
    const vm = buildReviewViewModel(
      review({
        proposal: { ...base.proposal, setting_updates: { pressure_support: 10 } },
        bounds: { ...base.bounds, pressure_support: [0, 30] },
      }),
    );
    expect(vm.diffRows).toHaveLength(1);
    expect(vm.diffRows[0].current).toBeNull();
    expect(vm.diffRows[0].delta).toBeNull();
  });

  it("refuses to render a safety-failing proposal", () => {
    const bad = review({
      safety: { verdict: "fail", violations: [], warnings: [] },
    });
    expect(() => buildReviewViewModel(bad)).toThrow(/safety/);
  });
});

describe("reject form", () => {
  it("requires a reason category", () => {
    expect(validateRejectForm({ reason: null, disputed: [], rationale: "" })).toHaveLength(1);
    expect(
      validateRejectForm({ reason: "parameter_magnitude", disputed: [], rationale: "" }),
    ).toHaveLength(0);
  });

  it("toggles disputed parameters", () => {
    let form = { reason: null, disputed: [], rationale: "" } as const as {
      reason: null;
      disputed: string[];
      rationale: string;
    };
    form = toggleDisputed(form, "peep");
    expect(form.disputed).toEqual(["peep"]);
    form = toggleDisputed(form, "fio2");
    expect(form.disputed).toEqual(["peep", "fio2"]);
    form = toggleDisputed(form, "peep");
    expect(form.disputed).toEqual(["fio2"]);
  });
});

describe("dashboard transforms", () => {
  it("regret chart data equals the API payload exactly", () => {
    const series: RegretPoint[] = [
      { cycle_index: 0, cycle_id: "a", regret: 1, rolling_mean_10: 1.0 },
      { cycle_index: 1, cycle_id: "b", regret: 0, rolling_mean_10: 0.5 },
      { cycle_index: 2, cycle_id: "c", regret: 3, rolling_mean_10: 4 / 3 },
    ];
    const data = regretChartData(series);
    expect(data.points).toEqual([
      { x: 0, y: 1 },
      { x: 1, y: 0 },
      { x: 2, y: 3 },
    ]);
    expect(data.rolling.map((p) => p.y)).toEqual(series.map((p) => p.rolling_mean_10));
  });

  it("preference bars mirror the arm payload", () => {
    const bars = preferenceBars({
      clinician_id: "d",
      update_count: 4,
      arms: [
        { category: "stay_in_mode", bias_weight: 0.25, theta: [] },
        { category: "mode_level_change", bias_weight: -0.1, theta: [] },
      ],
    });
    expect(bars).toEqual([
      { category: "stay_in_mode", value: 0.25 },
      { category: "mode_level_change", value: -0.1 },
    ]);
  });

  it("timeline labels the envelope kinds", () => {
    const envelopes: TrailEnvelope[] = [
      {
        offset: 0,
        timestamp: 1,
        kind: "cycle_record",
        payload: { record: { status: "accepted", rounds: 2 } },
        content_hash: "sha256:x",
      },
      {
        offset: 1,
        timestamp: 2,
        kind: "note",
        payload: { text: "cycle x: accepted\nmore" },
        content_hash: "sha256:y",
      },
      { offset: 2, timestamp: 3, kind: "preference_snapshot", payload: {}, content_hash: "sha256:z" },
    ];
    const timeline = trailTimeline(envelopes);
    expect(timeline[0].label).toContain("accepted after 2 round(s)");
    expect(timeline[1].label).toContain("cycle x: accepted");
    expect(timeline[2].kind).toBe("preference_snapshot");
  });
});
