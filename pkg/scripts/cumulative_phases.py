"""Three cumulative phases with misdetection feedback."""

import argparse
import json
import time

from apiseq.classify import Coefficient
from apiseq.experiments import cumulative_phases


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phases", type=int, default=3)
    p.add_argument("--n", type=int, default=3, choices=[2, 3, 4])
    p.add_argument("--coef", default="dice", choices=[c.value for c in Coefficient])
    p.add_argument("--json", metavar="OUT")
    args = p.parse_args()
    t = time.perf_counter()
    reports, dbs, fed_back = cumulative_phases(args.seed, args.phases, args.n, args.coef)
    secs = time.perf_counter() - t
    for r in reports:
        print(f"phase {r.phase}: detection {r.detection_rate:.2%}  false positives {r.false_positive_rate:.2%}  "
              f"misses fed back {len(r.misdetected_malware) + len(r.misdetected_benign)}")
    contained = all(len(x.grams.grams & dbs[x.label].grams) == len(x.grams) for x in fed_back)
    print(f"fed-back samples fully contained: {contained} ({len(fed_back)} samples, {secs:.2f}s)")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump([r.to_json() for r in reports], f, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
