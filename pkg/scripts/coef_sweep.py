"""TPR/FPR for every coefficient and gram size; writes the matrix as JSON."""

import argparse
import json

from apiseq.experiments import coefficient_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--out", default="coef_sweep.json")
    args = p.parse_args()
    sweep = coefficient_sweep(args.seed, args.margin)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(sweep, f, indent=1, sort_keys=True)
    print(f"{'cell':<11} {'TPR':>7} {'FPR':>7}")
    for key, cell in sweep["results"].items():
        print(f"{key:<11} {cell['tpr']:>7.2%} {cell['fpr']:>7.2%}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
