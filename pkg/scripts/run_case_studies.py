#!/usr/bin/env python3
"""Reproduce both bundled case studies and print a comparison table.

Equivalent to `dtlmon casestudy mht ...` followed by `dtlmon casestudy
rescue ...`, as a single script with a compact console summary.
"""

import argparse
from pathlib import Path

from dtlmon.cli import main as cli_main
from dtlmon.studies import run_rescue_study


def fmt(x, width=9):
    if x is None:
        return " " * (width - 3) + "n/a"
    return f"{x:>{width}.3f}"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="study_out", help="output directory")
    parser.add_argument("--trials", type=int, default=250)
    parser.add_argument("--horizon", type=int, default=16)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--prior-mode", default="safe_somewhere",
                        choices=["safe_somewhere", "uniform"])
    args = parser.parse_args()

    out = Path(args.out)
    code = cli_main(["casestudy", "mht", "--out", str(out / "mht")])
    if code != 0:
        return code

    results = run_rescue_study(
        trials=args.trials,
        horizon=args.horizon,
        master_seed=args.seed,
        prior_mode=args.prior_mode,
    )
    print()
    print(f"rescue study: {args.trials} trials, horizon {args.horizon}, "
          f"seed {args.seed}, prior {args.prior_mode}")
    header = f"{'policy':<16}{'E[prob]':>9}{'var':>9}{'E[H] bits':>10}{'var H':>9}" \
             f"{'success':>9}{'pearson r':>10}"
    print(header)
    print("-" * len(header))
    for name, data in results["policies"].items():
        s = data["stats"]
        print(
            f"{name:<16}{fmt(s.mean_prob)}{fmt(s.var_prob)}{fmt(s.mean_entropy, 10)}"
            f"{fmt(s.var_entropy)}{fmt(s.success_rate)}{fmt(s.pearson_r, 10)}"
        )
    print()
    return cli_main(
        ["casestudy", "rescue", "--out", str(out / "rescue"),
         "--trials", str(args.trials), "--horizon", str(args.horizon),
         "--seed", str(args.seed)]
    )


if __name__ == "__main__":
    raise SystemExit(main())
