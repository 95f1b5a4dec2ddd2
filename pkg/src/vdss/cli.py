"""Command-line entry points: synth, replay, regret, audit export, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .clinician import DEFAULT_STUDY_PROFILE
from .memory import MemoryStore
from .replay import load_trajectories, replay_next_step, run_regret_study
from .synthetic import SynthesisConfig, generate_cohort, write_jsonl

_VARIANT_ALIASES = {"full": "full", "nopref": "nopref", "noimg": "noimg",
                    "both": "noimgnopref", "noimgnopref": "noimgnopref"}


def _cmd_synth(args) -> int:
    records = generate_cohort(SynthesisConfig(n_encounters=args.encounters, seed=args.seed))
    write_jsonl(records, args.out)
    encounters = len({r["encounter_id"] for r in records})
    print(f"wrote {len(records)} records across {encounters} encounters to {args.out}")
    return 0


def _cmd_replay(args) -> int:
    dataset = load_trajectories(args.data)
    if dataset.skipped:
        for line, reason in dataset.skipped:
            print(f"skipped line {line}: {reason}", file=sys.stderr)
        print(f"skipped {len(dataset.skipped)} malformed row(s)", file=sys.stderr)
    metrics = replay_next_step(
        dataset, no_img=args.no_img, no_pref=args.no_pref,
        fault_rate=args.fault_rate, seed=args.seed, k_max=args.k_max,
        config_dir=args.config_dir)
    payload = metrics.to_payload()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
        print(f"metrics written to {args.out}")
    print(f"mse={metrics.mse:.4f} mae={metrics.mae:.4f} r2={metrics.r2:.4f} "
          f"pairs={metrics.n_pairs} failure_rate={metrics.completion_failure_rate:.4f}")
    return 0


def _cmd_regret(args) -> int:
    variant = _VARIANT_ALIASES[args.variant]
    series = run_regret_study(args.cycles, DEFAULT_STUDY_PROFILE, variant=variant,
                              seed=args.seed, k_max=args.k_max, config_dir=args.config_dir)
    csv_text = series.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"series written to {args.out}")
    else:
        sys.stdout.write(csv_text)
    early = series.window_mean(0, 20)
    late = series.window_mean(max(0, len(series.regrets) - 20), len(series.regrets))
    print(f"variant={series.variant} cycles={len(series.regrets)} "
          f"early_mean={early:.3f} late_mean={late:.3f} failed={series.n_failed}")
    return 0


def _cmd_audit_export(args) -> int:
    store = MemoryStore(args.log)
    try:
        trail = store.export_trail(args.encounter)
    finally:
        store.close()
    text = json.dumps(trail, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"trail with {len(trail['envelopes'])} envelope(s) written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.log, config_dir=args.config_dir, token=args.token,
                     static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdss", description="Ventilator decision-support toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trajectory cohort")
    p.add_argument("--encounters", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("replay", help="next-step replay evaluation over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--no-img", action="store_true", help="disable the waveform path")
    p.add_argument("--no-pref", action="store_true", help="freeze preference scores uniform")
    p.add_argument("--fault-rate", type=float, default=0.0,
                   help="per-attempt malformed-output probability for the fault-injection mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--config-dir", default=None)
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("regret", help="simulated-clinician regret study")
    p.add_argument("--cycles", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=sorted(_VARIANT_ALIASES), default="full")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--config-dir", default=None)
    p.add_argument("--out", default=None, help="write CSV here (cycle_index,regret,rolling_mean_10)")
    p.set_defaults(func=_cmd_regret)

    audit = sub.add_parser("audit", help="audit log utilities")
    audit_sub = audit.add_subparsers(dest="audit_command", required=True)
    p = audit_sub.add_parser("export", help="export one encounter's evidence trail")
    p.add_argument("--encounter", required=True)
    p.add_argument("--log", required=True, help="memory log path")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_audit_export)

    p = sub.add_parser("serve", help="run the clinician-facing HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)
    p.add_argument("--log", required=True, help="memory log path")
    p.add_argument("--config-dir", default=None)
    p.add_argument("--token", default=None, help="static bearer token (defaults to VDSS_API_TOKEN)")
    p.add_argument("--static", default=None, help="serve a built console from this directory at /console")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
