// DOM wiring for the review console. All durable state lives behind the
// API; this module only holds the current polling loop and form state.

import { ApiError, ConsoleApi } from "./api.js";
import { barChart, lineChart } from "./charts.js";
import type { PendingReview, RejectReason } from "./types.js";
import {
  RejectFormState,
  buildReviewViewModel,
  preferenceBars,
  regretChartData,
  toggleDisputed,
  trailTimeline,
  validateRejectForm,
} from "./viewmodel.js";

const POLL_INTERVAL_MS = 1000;

interface SessionState {
  api: ConsoleApi | null;
  clinicianId: string;
  encounterId: string | null;
  cycleId: string | null;
  pollTimer: number | null;
  submitting: boolean;
  rejectForm: RejectFormState;
  lastRenderedRound: number | null;
}

const state: SessionState = {
  api: null,
  clinicianId: "",
  encounterId: null,
  cycleId: null,
  pollTimer: null,
  submitting: false,
  rejectForm: { reason: null, disputed: [], rationale: "" },
  lastRenderedRound: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("offline-banner");
  if (message) {
    banner.textContent = message;
    banner.classList.remove("hidden");
  } else {
    banner.classList.add("hidden");
  }
}

function setStatus(text: string): void {
  el<HTMLSpanElement>("cycle-status").textContent = text;
}

async function connect(): Promise<void> {
  const base = el<HTMLInputElement>("api-base").value.replace(/\/$/, "");
  const token = el<HTMLInputElement>("api-token").value || undefined;
  state.clinicianId = el<HTMLInputElement>("clinician-id").value || "dr-demo";
  const api = new ConsoleApi(base, token);
  try {
    await api.health();
    state.api = api;
    setBanner(null);
    await refreshEncounters();
    await refreshDashboards();
  } catch (err) {
    state.api = null;
    setBanner(`service unreachable at ${base}: ${String(err)}`);
  }
}

async function refreshEncounters(): Promise<void> {
  if (!state.api) return;
  const { encounters } = await state.api.listEncounters();
  const list = el<HTMLUListElement>("encounter-list");
  list.innerHTML = "";
  for (const item of encounters) {
    const li = document.createElement("li");
    const button = document.createElement("button");
    button.textContent = `${item.encounter_id} (${item.records} records, ${item.mode})`;
    button.addEventListener("click", () => {
      state.encounterId = item.encounter_id;
      el<HTMLSpanElement>("selected-encounter").textContent = item.encounter_id;
    });
    li.appendChild(button);
    list.appendChild(li);
  }
  if (encounters.length === 0) {
    list.innerHTML = "<li class='empty'>no encounters loaded; load a dataset first</li>";
  }
}

async function loadDataset(): Promise<void> {
  if (!state.api) return;
  const path = el<HTMLInputElement>("dataset-path").value;
  try {
    const result = await state.api.loadDataset(path);
    el<HTMLSpanElement>("dataset-info").textContent =
      `${result.encounters} encounters / ${result.records} records loaded`;
    await refreshEncounters();
  } catch (err) {
    setBanner(`dataset load failed: ${String(err)}`);
  }
}

async function startCycle(): Promise<void> {
  if (!state.api || !state.encounterId) return;
  const waveform = el<HTMLInputElement>("waveform-enabled").checked;
  try {
    const { cycle_id } = await state.api.startCycle(state.encounterId, state.clinicianId, {
      waveformEnabled: waveform,
    });
    state.cycleId = cycle_id;
    state.lastRenderedRound = null;
    el<HTMLDivElement>("terminal-screen").classList.add("hidden");
    setStatus(`cycle ${cycle_id} running`);
    startPolling();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setBanner(`cannot start: ${err.message}`);
    } else {
      setBanner(String(err));
    }
  }
}

function startPolling(): void {
  stopPolling();
  state.pollTimer = window.setInterval(() => void poll(), POLL_INTERVAL_MS);
  void poll();
}

function stopPolling(): void {
  if (state.pollTimer !== null) {
    window.clearInterval(state.pollTimer);
    state.pollTimer = null;
  }
}

async function poll(): Promise<void> {
  if (!state.api || !state.cycleId) return;
  try {
    const body = await state.api.getReview(state.cycleId);
    setBanner(null);
    if (body.status === "in_review" && body.review) {
      renderReview(body.review);
    } else if (body.status === "running") {
      setStatus(`cycle ${state.cycleId} running`);
    } else {
      stopPolling();
      await renderTerminal(body.status);
    }
  } catch (err) {
    setBanner(`lost contact with the service: ${String(err)}`);
  }
}

function renderReview(review: PendingReview): void {
  const vm = buildReviewViewModel(review);
  if (state.lastRenderedRound !== review.round_index) {
    // New round: clear the previous round's form state.
    state.rejectForm = { reason: null, disputed: [], rationale: "" };
    state.submitting = false;
    state.lastRenderedRound = review.round_index;
  }
  setStatus(`awaiting review (round ${vm.roundLabel})`);
  el<HTMLDivElement>("review-card").classList.remove("hidden");
  el<HTMLSpanElement>("review-round").textContent = vm.roundLabel;
  el<HTMLSpanElement>("review-strategy").textContent = vm.strategy;
  el<HTMLSpanElement>("review-rationale").textContent = vm.rationale;
  el<HTMLSpanElement>("review-tags").textContent = vm.categoryTags.join(", ");

  const mode = el<HTMLDivElement>("review-mode");
  mode.textContent = vm.modeChange
    ? `mode change: ${vm.modeChange.from} -> ${vm.modeChange.to}`
    : "";

  const badge = el<HTMLSpanElement>("safety-badge");
  badge.textContent = `safety: ${vm.safetyBadges.verdict}`;
  badge.className = `badge ${vm.safetyBadges.verdict}`;
  el<HTMLSpanElement>("safety-warnings").textContent = vm.safetyBadges.warnings.join("; ");

  const tbody = el<HTMLTableSectionElement>("diff-body");
  tbody.innerHTML = "";
  for (const row of vm.diffRows) {
    const tr = document.createElement("tr");
    tr.dataset["parameter"] = row.parameter;
    if (state.rejectForm.disputed.includes(row.parameter)) tr.classList.add("disputed");
    const boundsText = row.bounds ? `[${row.bounds[0]}, ${row.bounds[1]}]` : "";
    const deltaText = row.delta === null ? "new" : (row.delta >= 0 ? `+${row.delta}` : `${row.delta}`);
    tr.innerHTML =
      `<td>${row.parameter}</td><td>${row.current ?? "-"}</td><td>${row.proposed}</td>` +
      `<td>${deltaText}</td><td>${row.unit}</td><td class="bounds">${boundsText}</td>`;
    tr.addEventListener("click", () => {
      state.rejectForm = toggleDisputed(state.rejectForm, row.parameter);
      renderReview(review);
    });
    tbody.appendChild(tr);
  }

  el<HTMLUListElement>("preference-context").innerHTML = vm.topCategories
    .map((c) => `<li>${c.category}: ${c.score.toFixed(3)}</li>`)
    .join("");
  el<HTMLUListElement>("evidence-refs").innerHTML = vm.evidenceRefs
    .map((ref) => `<li>${ref}</li>`)
    .join("");

  el<HTMLButtonElement>("accept-button").disabled = state.submitting;
  el<HTMLButtonElement>("reject-button").disabled = state.submitting;
  el<HTMLSpanElement>("disputed-list").textContent =
    state.rejectForm.disputed.join(", ") || "none (click diff rows to mark)";
}

async function submitAccept(): Promise<void> {
  if (!state.api || !state.cycleId || state.submitting) return;
  state.submitting = true;
  el<HTMLButtonElement>("accept-button").disabled = true;
  el<HTMLButtonElement>("reject-button").disabled = true;
  const note = el<HTMLInputElement>("accept-note").value;
  try {
    const body = await state.api.submitFeedback(state.cycleId, {
      decision: "accept",
      rationale: note,
      round_index: state.lastRenderedRound ?? undefined,
    });
    await afterFeedback(body.status);
  } catch (err) {
    await handleFeedbackError(err);
  }
}

async function submitReject(): Promise<void> {
  if (!state.api || !state.cycleId || state.submitting) return;
  state.rejectForm.reason =
    (el<HTMLSelectElement>("reject-reason").value || null) as RejectReason | null;
  state.rejectForm.rationale = el<HTMLInputElement>("reject-rationale").value;
  const errors = validateRejectForm(state.rejectForm);
  const errorBox = el<HTMLDivElement>("reject-errors");
  if (errors.length > 0) {
    errorBox.textContent = errors.join("; ");
    return;
  }
  errorBox.textContent = "";
  state.submitting = true;
  el<HTMLButtonElement>("accept-button").disabled = true;
  el<HTMLButtonElement>("reject-button").disabled = true;
  try {
    const body = await state.api.submitFeedback(state.cycleId, {
      decision: "reject",
      reason_category: state.rejectForm.reason as RejectReason,
      disputed_parameters: state.rejectForm.disputed,
      rationale: state.rejectForm.rationale,
      round_index: state.lastRenderedRound ?? undefined,
    });
    await afterFeedback(body.status);
  } catch (err) {
    await handleFeedbackError(err);
  }
}

async function afterFeedback(status: string): Promise<void> {
  state.submitting = false;
  if (status === "in_review") {
    await poll();
    return;
  }
  stopPolling();
  await renderTerminal(status);
}

async function handleFeedbackError(err: unknown): Promise<void> {
  state.submitting = false;
  if (err instanceof ApiError && err.status === 409) {
    // Stale round: refresh to the authoritative review state.
    setBanner("the round moved on; refreshing");
    await poll();
    setBanner(null);
  } else {
    setBanner(String(err));
  }
}

async function renderTerminal(status: string): Promise<void> {
  el<HTMLDivElement>("review-card").classList.add("hidden");
  const screen = el<HTMLDivElement>("terminal-screen");
  screen.classList.remove("hidden");
  setStatus(status);
  const headline = el<HTMLHeadingElement>("terminal-headline");
  if (status === "accepted") headline.textContent = "Plan accepted";
  else if (status === "hold") headline.textContent = "No adjustment recommended";
  else if (status === "exhausted") headline.textContent = "Round budget exhausted without agreement";
  else headline.textContent = `Cycle ${status}`;

  const noteBox = el<HTMLPreElement>("terminal-note");
  noteBox.textContent = "";
  if (state.api && state.cycleId) {
    try {
      const trail = await state.api.cycleTrail(state.cycleId);
      const note = trail.envelopes.find((e) => e.kind === "note");
      if (note) noteBox.textContent = String(note.payload["text"] ?? "");
    } catch {
      noteBox.textContent = "(trail unavailable)";
    }
  }
  await refreshDashboards();
}

async function refreshDashboards(): Promise<void> {
  if (!state.api) return;
  try {
    const regret = await state.api.regret(state.clinicianId);
    const data = regretChartData(regret.series);
    el<HTMLDivElement>("regret-chart").innerHTML = lineChart([
      { label: "regret", points: data.points, color: "#888" },
      { label: "rolling mean (10)", points: data.rolling, color: "#0a6", dashed: false },
    ]);
    el<HTMLSpanElement>("regret-info").textContent =
      `${regret.series.length} cycles, ${regret.n_failed} failed excluded`;

    const prefs = await state.api.preferences(state.clinicianId);
    el<HTMLDivElement>("preference-chart").innerHTML = barChart(
      preferenceBars(prefs).map((b) => ({ label: b.category, value: b.value })),
    );
    el<HTMLSpanElement>("preference-info").textContent =
      `${prefs.update_count} arm update(s) applied`;

    if (state.encounterId) {
      const trail = await state.api.encounterTrail(state.encounterId);
      el<HTMLUListElement>("trail-timeline").innerHTML = trailTimeline(trail.envelopes)
        .map((t) => `<li><span class="offset">#${t.offset}</span> <span class="kind ${t.kind}">${t.kind}</span> ${t.label}</li>`)
        .join("");
    }
  } catch (err) {
    setBanner(`dashboards unavailable: ${String(err)}`);
  }
}

export function wireUp(): void {
  el<HTMLButtonElement>("connect-button").addEventListener("click", () => void connect());
  el<HTMLButtonElement>("load-dataset-button").addEventListener("click", () => void loadDataset());
  el<HTMLButtonElement>("start-cycle-button").addEventListener("click", () => void startCycle());
  el<HTMLButtonElement>("accept-button").addEventListener("click", () => void submitAccept());
  el<HTMLButtonElement>("reject-button").addEventListener("click", () => void submitReject());
  el<HTMLButtonElement>("refresh-dashboards").addEventListener("click", () => void refreshDashboards());
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  wireUp();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wireUp);
}
