// Thin typed client for the vdss service. Every console state transition
// goes through these calls; the console keeps no authoritative state.

import type {
  ApiErrorBody,
  EncounterSummary,
  FeedbackBody,
  PreferencesResponse,
  RegretResponse,
  ReviewResponse,
  TrailResponse,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly path: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.path = body.path;
  }
}

export class ConsoleApi {
  constructor(
    private readonly baseUrl: string,
    private readonly token?: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let parsed: ApiErrorBody = { code: "http_error", message: response.statusText, path: "" };
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/healthz");
  }

  loadDataset(path: string): Promise<{ encounters: number; records: number; skipped: number }> {
    return this.request("POST", "/datasets/load", { path });
  }

  listEncounters(): Promise<{ encounters: EncounterSummary[] }> {
    return this.request("GET", "/encounters");
  }

  startCycle(
    encounterId: string,
    clinicianId: string,
    options: { waveformEnabled?: boolean; windowEnd?: number; kMax?: number } = {},
  ): Promise<{ cycle_id: string; status: string }> {
    const body: Record<string, unknown> = { clinician_id: clinicianId };
    if (options.waveformEnabled !== undefined) body["waveform_enabled"] = options.waveformEnabled;
    if (options.windowEnd !== undefined) body["window"] = { end: options.windowEnd };
    if (options.kMax !== undefined) body["k_max"] = options.kMax;
    return this.request("POST", `/encounters/${encounterId}/cycles`, body);
  }

  getReview(cycleId: string): Promise<ReviewResponse> {
    return this.request("GET", `/cycles/${cycleId}/review`);
  }

  submitFeedback(cycleId: string, feedback: FeedbackBody): Promise<ReviewResponse> {
    return this.request("POST", `/cycles/${cycleId}/feedback`, feedback);
  }

  cycleTrail(cycleId: string): Promise<TrailResponse & { cycle_id: string }> {
    return this.request("GET", `/cycles/${cycleId}/trail`);
  }

  encounterTrail(encounterId: string): Promise<TrailResponse> {
    return this.request("GET", `/encounters/${encounterId}/trail`);
  }

  preferences(clinicianId: string): Promise<PreferencesResponse> {
    return this.request("GET", `/clinicians/${clinicianId}/preferences`);
  }

  regret(clinicianId: string): Promise<RegretResponse> {
    return this.request("GET", `/clinicians/${clinicianId}/regret`);
  }
}
