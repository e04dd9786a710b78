"""Command-line interface.

Every subcommand writes JSON (sorted keys) to stdout unless ``--pretty`` is
given.  Exit codes: 0 success / benign, 1 malicious (``scan`` only),
2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import classify, corpusgen, packsim
from .cfg import build_cfg, to_dot
from .classify import Coefficient, Label, LabeledSet, TverskyMode, TverskyParams
from .disasm import Listing, disassemble, emit_ndif
from .features import GRAM_SIZES, ApiIdMap, dump_grams, gram_set_of_file
from .miniisa import BinaryImage
from .pathext import TraversalLimits, extract_paths
from .pe_imports import ApiDatabase
from .pipeline import listing_of, load_input


class CliError(Exception):
    pass


def _dump(obj, out=None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out and out != "-":
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _write_text(text: str, out: str | None) -> None:
    if out and out != "-":
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _label(s: str) -> Label:
    for label in Label:
        if label.value.lower() == s.lower():
            return label
    raise argparse.ArgumentTypeError(f"unknown label {s!r} (choose from {', '.join(l.value for l in Label)})")


def _limits(args) -> TraversalLimits:
    return TraversalLimits(args.max_paths, args.max_path_blocks)


def _params(args) -> TverskyParams:
    return TverskyParams(TverskyMode(args.tversky_mode), args.alpha, args.beta)


def _grams_for(path, idmap, n, limits):
    obj = load_input(path)
    paths = [p for p in extract_paths(build_cfg(listing_of(obj)), limits) if p.apis]
    return gram_set_of_file(paths, idmap, n)


def _image(path) -> BinaryImage:
    obj = load_input(path)
    if isinstance(obj, Listing):
        raise CliError(f"{path}: needs an executable image, not a listing")
    return obj


# --- subcommands ---------------------------------------------------------------

def cmd_corpusgen(args) -> int:
    fams = [f for part in args.families for f in part.split(",") if f] if args.families else None
    manifests = corpusgen.write_corpus(args.out, args.seed, fams, args.variants, args.benign)
    _dump({name: len(items) for name, items in manifests.items()})
    return 0


def cmd_disasm(args) -> int:
    obj = load_input(args.file)
    db = ApiDatabase.load(args.api_db) if args.api_db else None
    listing = obj if isinstance(obj, Listing) else disassemble(obj, args.mode, db)
    if args.ndif:
        _write_text(emit_ndif(listing), args.ndif)
    else:
        for ins in listing:
            print(ins)
    return 0


def cmd_cfg(args) -> int:
    cfg = build_cfg(listing_of(load_input(args.file)))
    _write_text(to_dot(cfg), args.dot)
    return 0


def cmd_extract(args) -> int:
    obj = load_input(args.file)
    paths = extract_paths(build_cfg(listing_of(obj)), _limits(args))
    if args.pretty:
        for i, p in enumerate(paths):
            print(f"path {i} [{p.terminal.value}] blocks={list(p.blocks)}")
            print("   " + " -> ".join(p.apis) if p.apis else "   (no API calls)")
        return 0
    report = {
        "file": args.file,
        "paths": [list(p.apis) for p in paths],
        "terminals": [p.terminal.value for p in paths],
        "truncated": paths.truncated,
    }
    if args.n:
        db_dir = args.db
        idmap = classify.load_databases(db_dir, args.n)[1] if db_dir else ApiIdMap.seeded()
        grams = gram_set_of_file([p for p in paths if p.apis], idmap, args.n)
        report["n"] = args.n
        report["grams"] = [list(g) for g in sorted(grams.grams)]
        if args.grams:
            _write_text(dump_grams(grams.grams), args.grams)
    _dump(report, args.json)
    return 0


def cmd_train(args) -> int:
    dbs, idmap = classify.load_databases(args.db, args.n)
    limits = _limits(args)
    files = [_grams_for(f, idmap, args.n, limits) for f in args.files]
    dbs[args.label] = classify.train(files, args.label, dbs[args.label])
    classify.save_databases(args.db, dbs, idmap)
    db = dbs[args.label]
    _dump({"label": args.label.value, "n": args.n, "files": len(files),
           "sample_count": db.sample_count, "grams": len(db)})
    return 0


def cmd_scan(args) -> int:
    dbs, idmap = classify.load_databases(args.db, args.n)
    grams = _grams_for(args.file, idmap.copy(), args.n, _limits(args))
    report, verdict = classify.scan(grams, dbs, args.coef, _params(args), args.margin)
    out = classify.scan_report_json(args.file, report, verdict)
    if args.pretty:
        print(f"{args.file}: {verdict.decision.value}" + (f" ({verdict.family.value})" if verdict.family else ""))
        for label, score in out["scores"].items():
            print(f"  {label:<9} {score:.6f}")
    else:
        _dump(out)
    return 1 if verdict.malicious else 0


def _labeled_from_manifest(path, idmap, n, limits) -> list[LabeledSet]:
    return [LabeledSet(e.path, e.label, _grams_for(e.path, idmap, n, limits))
            for e in corpusgen.read_manifest(path)]


def cmd_phase(args) -> int:
    dbs, idmap = classify.load_databases(args.db, args.n)
    limits = _limits(args)
    adds = _labeled_from_manifest(args.train_manifest, idmap, args.n, limits) if args.train_manifest else []
    tests = _labeled_from_manifest(args.test_manifest, idmap, args.n, limits)
    report, dbs = classify.run_phase(adds, tests, dbs, args.coef, _params(args), args.margin, args.phase)
    classify.save_databases(args.db, dbs, idmap)
    out = report.to_json()
    if args.pretty:
        print(f"phase {report.phase}: detection {report.detection_rate:.2%} "
              f"({report.malware_count} malware), false positives {report.false_positive_rate:.2%} "
              f"({report.benign_count} benign)")
        for label, size in out["db_sizes_after"].items():
            print(f"  {label:<9} {out['db_sizes_before'][label]:>7} -> {size}")
    else:
        _dump(out)
    return 0


def cmd_packcheck(args) -> int:
    result = packsim.run_vm(_image(args.file), args.max_steps)
    _dump({"file": args.file, **result.summary()})
    return 0


def cmd_packsig(args) -> int:
    sigs = packsim.load_signatures(args.sigs)
    _dump({"file": args.file, "packer": packsim.match_signatures(_image(args.file), sigs)})
    return 0


def cmd_packeval(args) -> int:
    sigs = packsim.load_signatures(args.sigs)
    entries = corpusgen.read_manifest(args.manifest)
    images = [_image(e.path) for e in entries]
    report = packsim.evaluate_detectors(images, sigs, args.max_steps, names=[e.path for e in entries])
    if args.pretty:
        for part, names in report.partitions.items():
            print(f"{part:<9} {len(names)}")
    else:
        _dump(report.to_json())
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apiseq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def limits(sp):
        sp.add_argument("--max-paths", type=int, default=4096)
        sp.add_argument("--max-path-blocks", type=int, default=10000)

    def scoring(sp):
        sp.add_argument("--n", type=int, choices=GRAM_SIZES, required=True)
        sp.add_argument("--coef", type=Coefficient, choices=list(Coefficient), default=Coefficient.DICE,
                        metavar="{dice,tversky,cosine}")
        sp.add_argument("--margin", type=float, default=0.0)
        sp.add_argument("--tversky-mode", choices=[m.value for m in TverskyMode], default="difference")
        sp.add_argument("--alpha", type=float, default=0.5)
        sp.add_argument("--beta", type=float, default=0.5)

    sp = sub.add_parser("corpusgen", help="write a synthetic corpus and manifests")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--families", action="append", help="family names (comma-separated)")
    sp.add_argument("--variants", type=int, help="variants per family (default: per-family count)")
    sp.add_argument("--benign", type=int, default=60)
    sp.set_defaults(func=cmd_corpusgen)

    sp = sub.add_parser("disasm", help="print or export a listing")
    sp.add_argument("file")
    sp.add_argument("--mode", choices=["linear", "recursive"], default="recursive")
    sp.add_argument("--ndif", metavar="OUT")
    sp.add_argument("--api-db", metavar="FILE", help="only keep API names listed in FILE")
    sp.set_defaults(func=cmd_disasm)

    sp = sub.add_parser("cfg", help="export the CFG as Graphviz DOT")
    sp.add_argument("file")
    sp.add_argument("--dot", required=True, metavar="OUT")
    sp.set_defaults(func=cmd_cfg)

    sp = sub.add_parser("extract", help="mine API paths (and n-grams)")
    sp.add_argument("file")
    sp.add_argument("--n", type=int, choices=GRAM_SIZES)
    sp.add_argument("--db", help="database dir whose API id map to use")
    sp.add_argument("--json", metavar="OUT")
    sp.add_argument("--grams", metavar="OUT", help="gram dump, one comma-separated gram per line")
    sp.add_argument("--pretty", action="store_true")
    limits(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("train", help="add files to the (label, n) database")
    sp.add_argument("--db", required=True)
    sp.add_argument("--label", type=_label, required=True)
    sp.add_argument("--n", type=int, choices=GRAM_SIZES, required=True)
    sp.add_argument("files", nargs="+")
    limits(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("scan", help="classify one file")
    sp.add_argument("file")
    sp.add_argument("--db", required=True)
    sp.add_argument("--pretty", action="store_true")
    scoring(sp)
    limits(sp)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("phase", help="one cumulative train/test phase")
    sp.add_argument("--db", required=True)
    sp.add_argument("--train-manifest")
    sp.add_argument("--test-manifest", required=True)
    sp.add_argument("--phase", type=int, default=1)
    sp.add_argument("--pretty", action="store_true")
    scoring(sp)
    limits(sp)
    sp.set_defaults(func=cmd_phase)

    sp = sub.add_parser("packcheck", help="write-then-execute detection in the VM")
    sp.add_argument("file")
    sp.add_argument("--max-steps", type=int, default=packsim.DEFAULT_MAX_STEPS)
    sp.set_defaults(func=cmd_packcheck)

    sp = sub.add_parser("packsig", help="entry-point signature match")
    sp.add_argument("file")
    sp.add_argument("--sigs", required=True)
    sp.set_defaults(func=cmd_packsig)

    sp = sub.add_parser("packeval", help="compare both packing detectors over a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--sigs", required=True)
    sp.add_argument("--max-steps", type=int, default=packsim.DEFAULT_MAX_STEPS)
    sp.add_argument("--pretty", action="store_true")
    sp.set_defaults(func=cmd_packeval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CliError) as exc:
        print(f"apiseq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
