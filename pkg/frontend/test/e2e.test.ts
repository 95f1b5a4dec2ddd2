// End-to-end: drive the full review scenario against a live service using
// the console's own client and view-model code. Start a cycle, reject
// round 1 with a parameter_magnitude complaint on a disputed parameter,
// accept round 2, then check the regret dashboard shows regret 1 for the
// cycle and that chart data equals the API values exactly.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleApi } from "../src/api.js";
import { buildReviewViewModel, regretChartData, toggleDisputed, validateRejectForm } from "../src/viewmodel.js";
import type { PendingReview } from "../src/types.js";

const PORT = 8976;
const BASE = `http://127.0.0.1:${PORT}`;
const CLINICIAN = "dr-e2e";

let server: ChildProcess;
let datasetPath: string;

function encounterRecord(
  t: number,
  spo2: number,
  settings: { peep: number; fio2: number; resp_rate_set: number },
): Record<string, unknown> {
  return {
    encounter_id: "e2e-enc",
    t,
    weight_kg: 75.0,
    state: {
      spo2,
      heart_rate: 98.0,
      map: 74.0,
      ph: 7.37,
      paco2: 43.0,
      pao2: 58.0,
      tidal_volume_obs: 440.0,
      resp_rate_obs: 21.0,
    },
    settings: { mode: "PRVC", ...settings },
  };
}

async function waitForHealth(api: ConsoleApi, timeoutMs = 15000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      await api.health();
      return;
    } catch (err) {
      lastError = err;
      await new Promise((resolve) => setTimeout(resolve, 150));
    }
  }
  throw new Error(`service never became healthy: ${String(lastError)}`);
}

async function pollForReview(api: ConsoleApi, cycleId: string): Promise<PendingReview> {
  const deadline = Date.now() + 10000;
  while (Date.now() < deadline) {
    const body = await api.getReview(cycleId);
    if (body.status === "in_review" && body.review) return body.review;
    if (body.status !== "running") {
      throw new Error(`cycle ended early with status ${body.status}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
  throw new Error("review never arrived");
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "vdss-e2e-"));
  datasetPath = join(workdir, "cohort.jsonl");
  const lines = [
    encounterRecord(0, 87.0, { peep: 6.0, fio2: 45.0, resp_rate_set: 14.0 }),
    encounterRecord(3600, 86.0, { peep: 8.0, fio2: 50.0, resp_rate_set: 16.0 }),
  ];
  writeFileSync(datasetPath, lines.map((r) => JSON.stringify(r)).join("\n") + "\n");

  server = spawn(
    "python3",
    ["-m", "vdss.cli", "serve", "--log", join(workdir, "memory.jsonl"),
     "--port", String(PORT), "--host", "127.0.0.1"],
    { stdio: ["ignore", "pipe", "pipe"], cwd: join(__dirname, "..", "..") },
  );
  server.stderr?.on("data", (chunk) => process.stderr.write(`[serve] ${chunk}`));
  await waitForHealth(new ConsoleApi(BASE));
}, 20000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("review scenario end to end", () => {
  it("reject round 1, accept round 2, regret dashboard shows 1", async () => {
    const api = new ConsoleApi(BASE);

    const loaded = await api.loadDataset(datasetPath);
    expect(loaded.encounters).toBe(1);
    const { encounters } = await api.listEncounters();
    expect(encounters[0].encounter_id).toBe("e2e-enc");

    const { cycle_id } = await api.startCycle("e2e-enc", CLINICIAN, { waveformEnabled: true });
    const round1 = await pollForReview(api, cycle_id);
    expect(round1.round_index).toBe(1);

    // The console renders only safety-passing proposals.
    const vm1 = buildReviewViewModel(round1);
    expect(vm1.safetyBadges.verdict).toBe("pass");
    expect(vm1.diffRows.length).toBeGreaterThan(0);
    expect(vm1.roundLabel).toBe("1 / 5");

    // Clinician clicks the first diff row to dispute it, picks a reason, rejects.
    let form = { reason: null as null, disputed: [] as string[], rationale: "step too large" };
    form = toggleDisputed(form, vm1.diffRows[0].parameter) as typeof form;
    const withReason = { ...form, reason: "parameter_magnitude" as const };
    expect(validateRejectForm(withReason)).toHaveLength(0);

    const afterReject = await api.submitFeedback(cycle_id, {
      decision: "reject",
      reason_category: "parameter_magnitude",
      disputed_parameters: withReason.disputed,
      rationale: withReason.rationale,
      round_index: round1.round_index,
    });
    expect(afterReject.status).toBe("in_review");
    const round2 = afterReject.review!;
    expect(round2.round_index).toBe(2);

    // The revision honors the halved-step constraint on the disputed parameter.
    const disputedParam = withReason.disputed[0];
    const before = round1.proposal.setting_updates[disputedParam];
    const currentValue = round1.current_settings[
      disputedParam as keyof typeof round1.current_settings
    ] as number;
    if (disputedParam in round2.proposal.setting_updates) {
      const after = round2.proposal.setting_updates[disputedParam];
      expect(Math.abs(after - currentValue)).toBeLessThanOrEqual(
        Math.abs(before - currentValue) / 2 + 1e-9,
      );
    }

    const vm2 = buildReviewViewModel(round2);
    expect(vm2.roundLabel).toBe("2 / 5");

    const done = await api.submitFeedback(cycle_id, {
      decision: "accept",
      rationale: "agreed",
      round_index: round2.round_index,
    });
    expect(done.status).toBe("accepted");

    // Regret dashboard: exactly the API values, regret 1 for this cycle.
    const regret = await api.regret(CLINICIAN);
    const entry = regret.series.find((p) => p.cycle_id === cycle_id);
    expect(entry).toBeDefined();
    expect(entry!.regret).toBe(1);
    const chart = regretChartData(regret.series);
    expect(chart.points.map((p) => p.y)).toEqual(regret.series.map((p) => p.regret));
    expect(chart.rolling.map((p) => p.y)).toEqual(regret.series.map((p) => p.rolling_mean_10));

    // Both served proposals are in the audit trail.
    const trail = await api.cycleTrail(cycle_id);
    const record = trail.envelopes.find((e) => e.kind === "cycle_record");
    expect(record).toBeDefined();
    const recordPayload = record!.payload["record"] as { trace: unknown[]; status: string };
    expect(recordPayload.status).toBe("accepted");
    expect(recordPayload.trace).toHaveLength(2);

    // Preference view reflects the single cycle-end update.
    const prefs = await api.preferences(CLINICIAN);
    expect(prefs.update_count).toBeGreaterThan(0);
    expect(prefs.arms).toHaveLength(12);
  }, 30000);
});
