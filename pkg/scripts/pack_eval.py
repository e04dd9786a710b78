"""Compare dynamic write-then-execute detection with entry-point signatures."""

import argparse
import json

from apiseq.corpusgen import (PACKER_SIGNATURE_TEXT, SplitMix64, generate_benign_one, generate_packed,
                              generate_writer)
from apiseq.packsim import evaluate_detectors, parse_signatures


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10, help="inner programs per role")
    p.add_argument("--json", metavar="OUT")
    args = p.parse_args()
    images, names = [], []
    for i in range(args.count):
        inner = generate_benign_one(SplitMix64(args.seed * 1_000_003 + i))
        for role, img in (("plain", inner), ("packed", generate_packed(inner)),
                          ("evasive", generate_packed(inner, evasive=True))):
            images.append(img)
            names.append(f"{role}-{i}")
        images.append(generate_writer(SplitMix64(args.seed + 7 * i + 1)))
        names.append(f"writer-{i}")
    report = evaluate_detectors(images, parse_signatures(PACKER_SIGNATURE_TEXT), names=names)
    for part, members in report.partitions.items():
        roles = sorted({m.split("-")[0] for m in members})
        print(f"{part:<9} {len(members):>4}  {', '.join(roles)}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(report.to_json(), f, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
