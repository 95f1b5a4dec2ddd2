// Wire types for the vdss service API (schemas/v1 payloads as seen over HTTP).

export type SettingParam =
  | "peep"
  | "fio2"
  | "pressure_support"
  | "inspiratory_pressure"
  | "resp_rate_set";

export interface VentilatorSettings {
  mode: string;
  peep?: number;
  fio2?: number;
  pressure_support?: number;
  inspiratory_pressure?: number;
  resp_rate_set?: number;
}

export interface Proposal {
  cycle_id: string;
  round_index: number;
  strategy: string;
  mode_change?: string;
  setting_updates: Record<string, number>;
  category_tags: string[];
  rationale: string;
}

export interface SafetyViolation {
  check_id: string;
  parameter: string;
  limit: string;
  proposed_value: string;
}

export interface SafetyReport {
  verdict: "pass" | "fail";
  violations: SafetyViolation[];
  warnings: string[];
}

export interface PreferenceContextEntry {
  category: string;
  score: number;
}

export interface PendingReview {
  cycle_id: string;
  round_index: number;
  k_max: number;
  proposal: Proposal;
  current_settings: VentilatorSettings;
  bounds: Record<string, [number, number]>;
  safety: SafetyReport;
  preference_context: PreferenceContextEntry[];
  evidence_refs: string[];
}

export type CycleStatus =
  | "running"
  | "in_review"
  | "accepted"
  | "hold"
  | "exhausted"
  | "failed";

export interface ReviewResponse {
  status: CycleStatus;
  review: PendingReview | null;
}

export type RejectReason =
  | "wrong_priority"
  | "wrong_mode"
  | "parameter_magnitude"
  | "feasibility"
  | "other";

export interface FeedbackBody {
  decision: "accept" | "reject";
  reason_category?: RejectReason;
  disputed_parameters?: string[];
  rationale?: string;
  round_index?: number;
}

export interface EncounterSummary {
  encounter_id: string;
  records: number;
  mode: string;
}

export interface RegretPoint {
  cycle_index: number;
  cycle_id: string;
  regret: number;
  rolling_mean_10: number;
}

export interface RegretResponse {
  clinician_id: string;
  series: RegretPoint[];
  n_failed: number;
}

export interface PreferenceArm {
  category: string;
  bias_weight: number;
  theta: number[];
}

export interface PreferencesResponse {
  clinician_id: string;
  update_count: number;
  arms: PreferenceArm[];
}

export interface TrailEnvelope {
  offset: number;
  timestamp: number;
  kind: "cycle_record" | "preference_snapshot" | "note";
  payload: Record<string, unknown>;
  content_hash: string;
}

export interface TrailResponse {
  encounter_id: string;
  envelopes: TrailEnvelope[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  path: string;
}
