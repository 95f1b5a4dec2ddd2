"""Next-step replay over a synthetic cohort, with the NoImg/NoPref ablations.

Generates a cohort, replays it in autonomous mode (first safety-passing
proposal auto-accepted), and prints normalized MSE/MAE, averaged R-squared,
mode accuracy, and the completion failure rate, for the full engine and
each ablation.

Run:  python3 demos/replay_metrics.py
"""

import tempfile
from pathlib import Path

from vdss.replay import load_trajectories, replay_next_step
from vdss.synthetic import SynthesisConfig, generate_cohort, write_jsonl


def main():
    workdir = Path(tempfile.mkdtemp(prefix="vdss-replay-"))
    path = workdir / "cohort.jsonl"
    write_jsonl(generate_cohort(SynthesisConfig(n_encounters=20, seed=3)), path)
    dataset = load_trajectories(path)
    print(f"cohort: {len(dataset.encounters)} encounters, {dataset.n_pairs} next-step pairs")
    print(f"{'variant':14s} {'mse':>7s} {'mae':>7s} {'r2':>7s} {'mode_acc':>9s} {'fail':>6s}")
    for label, kwargs in (
        ("full", {}),
        ("NoImg", {"no_img": True}),
        ("NoPref", {"no_pref": True}),
        ("NoImgNoPref", {"no_img": True, "no_pref": True}),
    ):
        m = replay_next_step(dataset, seed=3, **kwargs)
        print(f"{label:14s} {m.mse:7.4f} {m.mae:7.4f} {m.r2:7.4f} {m.mode_accuracy:9.3f} "
              f"{m.completion_failure_rate:6.3f}")


if __name__ == "__main__":
    main()
