"""Walk one full adjustment cycle, narrated.

A PRVC patient with stable oxygenation shows a scooped inspiratory plateau
and sawtooth expiratory flow. The engine flags asynchrony with auto-PEEP
risk, opens the adjust branch, and proposes synchrony-directed updates.
The reviewing clinician rejects round 1 over a step-size concern; the
reflect stage shrinks the disputed step and round 2 is accepted. The cycle
closes with a note, an auditable record, and one preference update.

Run:  python3 demos/case_study.py
"""

import tempfile
from pathlib import Path

from vdss.contracts import ClinicianFeedback, PatientState, VentilatorSettings
from vdss.engine import CycleRunner, EncounterSnapshot, EngineConfig, build_runtime
from vdss.memory import MemoryStore
from vdss.waveform import WaveformScenario, extract_cues, generate_segment


def main():
    workdir = Path(tempfile.mkdtemp(prefix="vdss-case-"))
    store = MemoryStore(workdir / "memory.jsonl")
    runtime = build_runtime(store)

    # Stable oxygenation, mild tachypnea, and an asynchronous-looking trace.
    state = PatientState(timestamp=0.0, weight_kg=78.0, spo2=95.0, heart_rate=96.0, map=76.0,
                         ph=7.37, paco2=44.0, pao2=88.0, tidal_volume_obs=470.0,
                         resp_rate_obs=33.0)
    settings = VentilatorSettings(mode="PRVC", peep=8.0, fio2=45.0, resp_rate_set=18.0)
    segment = generate_segment(WaveformScenario(sawtooth=True, scooped=True, snr_db=18.0), seed=7)

    cues = extract_cues(segment)
    print("waveform cues:", cues.asynchrony_patterns, f"quality={cues.quality}",
          f"uncertainty={cues.uncertainty:.2f}")

    runner = CycleRunner(runtime, EncounterSnapshot("case-enc", state, settings, segment),
                         "dr-alvarez", EngineConfig())
    pending = runner.start()
    print(f"\nround {pending.round_index}: strategy={pending.proposal.strategy} "
          f"updates={pending.proposal.setting_updates} tags={pending.proposal.category_tags}")
    print("safety:", pending.safety.verdict, "| top preference context:",
          [(c, round(s, 2)) for c, s in pending.preference_context])

    # Round 1: rejected over local feasibility of the step size.
    disputed = sorted(pending.proposal.setting_updates)[:1]
    pending = runner.resume(ClinicianFeedback(
        decision="reject", reason_category="parameter_magnitude",
        disputed_parameters=tuple(disputed),
        rationale="step too large for this patient right now"))
    print(f"\nround {pending.round_index} after revision: "
          f"updates={pending.proposal.setting_updates}")

    # Round 2: accepted.
    record = runner.resume(ClinicianFeedback(decision="accept", rationale="agreed"))
    print(f"\ncycle closed: status={record.status}, rounds={record.rounds}")
    print("preference signal:", record.preference_signal)
    print("\nclinician-facing note:\n" + record.note)

    trail = store.export_trail("case-enc")
    print(f"\naudit trail: {len(trail['envelopes'])} envelopes "
          f"({[e['kind'] for e in trail['envelopes']]}) in {workdir}/memory.jsonl")


if __name__ == "__main__":
    main()
