"""Regret over 100 cycles: the bandit learning a clinician's tuning style.

Runs the same 100-cycle study with preference learning on (full) and off
(NoPref) for one simulated clinician who favors assertive multi-parameter
plans. With learning on, rejected rounds per cycle trend to zero; frozen
uniform scores keep paying the same rejection tax every cycle.

Run:  python3 demos/preference_learning_curve.py [--plot out.png]
"""

import argparse

from vdss.clinician import DEFAULT_STUDY_PROFILE
from vdss.replay import run_regret_study


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--cycles", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--plot", default=None, help="write a PNG chart here")
    args = parser.parse_args()

    series = {}
    for variant in ("full", "nopref"):
        series[variant] = run_regret_study(args.cycles, DEFAULT_STUDY_PROFILE,
                                           variant=variant, seed=args.seed)
        s = series[variant]
        print(f"{variant:7s}: early mean={s.window_mean(0, 20):.3f} "
              f"late mean={s.window_mean(len(s.regrets) - 20, len(s.regrets)):.3f}")

    full = series["full"]
    print("\ncycle  full-regret  rolling-mean")
    for i in range(0, len(full.regrets), 10):
        print(f"{i:5d}  {full.regrets[i]:11d}  {full.rolling_mean[i]:12.2f}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        for variant, style in (("full", "-"), ("nopref", "--")):
            s = series[variant]
            ax.plot(range(len(s.rolling_mean)), s.rolling_mean, style, label=variant)
        ax.set_xlabel("cycle")
        ax.set_ylabel("regret (rolling mean, 10 cycles)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"\nchart written to {args.plot}")


if __name__ == "__main__":
    main()
