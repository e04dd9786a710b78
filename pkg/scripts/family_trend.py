"""Per-family detection rate when training on 1, 2 and 3 variants."""

import argparse
import json
import time

from apiseq.classify import Coefficient
from apiseq.experiments import family_trend


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=3, choices=[2, 3, 4])
    p.add_argument("--coef", default="dice", choices=[c.value for c in Coefficient])
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--json", metavar="OUT")
    args = p.parse_args()
    t = time.perf_counter()
    rates = family_trend(args.seed, args.n, args.coef, args.margin)
    secs = time.perf_counter() - t
    print(f"{'family':<14} {'k=1':>7} {'k=2':>7} {'k=3':>7}")
    for name, r in rates.items():
        print(f"{name:<14} " + " ".join(f"{x:>7.2%}" for x in r))
    print(f"({secs:.2f}s)")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(rates, f, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
