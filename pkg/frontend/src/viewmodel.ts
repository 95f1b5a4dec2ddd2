// Pure view-model transforms. Everything here is testable without a DOM,
// and dashboard data passes through unchanged so chart values equal the
// API payload exactly.

import type {
  PendingReview,
  PreferencesResponse,
  RegretPoint,
  RejectReason,
  TrailEnvelope,
} from "./types.js";

const SETTING_ORDER = [
  "peep",
  "fio2",
  "pressure_support",
  "inspiratory_pressure",
  "resp_rate_set",
] as const;

const UNITS: Record<string, string> = {
  peep: "cmH2O",
  fio2: "%",
  pressure_support: "cmH2O",
  inspiratory_pressure: "cmH2O",
  resp_rate_set: "/min",
};

export interface DiffRow {
  parameter: string;
  unit: string;
  current: number | null;
  proposed: number;
  delta: number | null;
  bounds: [number, number] | null;
}

export interface ReviewViewModel {
  cycleId: string;
  roundLabel: string; // "k / K_max"
  strategy: string;
  rationale: string;
  modeChange: { from: string; to: string } | null;
  diffRows: DiffRow[];
  safetyBadges: { verdict: "pass" | "fail"; warnings: string[] };
  topCategories: { category: string; score: number }[];
  evidenceRefs: string[];
  categoryTags: string[];
}

export function buildReviewViewModel(review: PendingReview): ReviewViewModel {
  if (review.safety.verdict !== "pass") {
    // The engine never suspends on a failing proposal; refuse to render one.
    throw new Error("refusing to render a proposal that failed safety checks");
  }
  const updates = review.proposal.setting_updates;
  const diffRows: DiffRow[] = [];
  for (const parameter of SETTING_ORDER) {
    if (!(parameter in updates)) continue;
    const proposed = updates[parameter];
    const currentValue = review.current_settings[parameter as keyof typeof review.current_settings];
    const current = typeof currentValue === "number" ? currentValue : null;
    diffRows.push({
      parameter,
      unit: UNITS[parameter] ?? "",
      current,
      proposed,
      delta: current === null ? null : Number((proposed - current).toFixed(3)),
      bounds: review.bounds[parameter] ?? null,
    });
  }
  return {
    cycleId: review.cycle_id,
    roundLabel: `${review.round_index} / ${review.k_max}`,
    strategy: review.proposal.strategy,
    rationale: review.proposal.rationale,
    modeChange: review.proposal.mode_change
      ? { from: review.current_settings.mode, to: review.proposal.mode_change }
      : null,
    diffRows,
    safetyBadges: { verdict: review.safety.verdict, warnings: [...review.safety.warnings] },
    topCategories: review.preference_context.map((e) => ({ ...e })),
    evidenceRefs: [...review.evidence_refs],
    categoryTags: [...review.proposal.category_tags],
  };
}

export interface RejectFormState {
  reason: RejectReason | null;
  disputed: string[];
  rationale: string;
}

export function validateRejectForm(form: RejectFormState): string[] {
  const errors: string[] = [];
  if (!form.reason) {
    errors.push("a rejection reason is required");
  }
  return errors;
}

export function toggleDisputed(form: RejectFormState, parameter: string): RejectFormState {
  const disputed = form.disputed.includes(parameter)
    ? form.disputed.filter((p) => p !== parameter)
    : [...form.disputed, parameter];
  return { ...form, disputed };
}

export interface RegretChartData {
  points: { x: number; y: number }[];
  rolling: { x: number; y: number }[];
}

export function regretChartData(series: RegretPoint[]): RegretChartData {
  // Identity mapping: chart values must equal the API payload exactly.
  return {
    points: series.map((p) => ({ x: p.cycle_index, y: p.regret })),
    rolling: series.map((p) => ({ x: p.cycle_index, y: p.rolling_mean_10 })),
  };
}

export interface PreferenceBar {
  category: string;
  value: number;
}

export function preferenceBars(prefs: PreferencesResponse): PreferenceBar[] {
  return prefs.arms.map((arm) => ({ category: arm.category, value: arm.bias_weight }));
}

export interface TimelineEntry {
  offset: number;
  kind: string;
  label: string;
}

export function trailTimeline(envelopes: TrailEnvelope[]): TimelineEntry[] {
  return envelopes.map((envelope) => {
    let label: string;
    if (envelope.kind === "cycle_record") {
      const record = envelope.payload["record"] as { status?: string; rounds?: number } | undefined;
      label = `cycle record: ${record?.status ?? "?"} after ${record?.rounds ?? "?"} round(s)`;
    } else if (envelope.kind === "note") {
      const text = String(envelope.payload["text"] ?? "");
      label = `note: ${text.split("\n")[0]}`;
    } else {
      label = "preference snapshot";
    }
    return { offset: envelope.offset, kind: envelope.kind, label };
  });
}
