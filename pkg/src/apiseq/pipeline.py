"""End-to-end glue: image or listing in, API paths / n-gram set out."""

from __future__ import annotations

import os

from .cfg import build_cfg
from .disasm import Listing, disassemble_recursive, parse_ndif
from .features import ApiIdMap, NGramSet, gram_set_of_file
from .miniisa import BinaryImage, assemble
from .pathext import PathList, TraversalLimits, extract_paths
from .pe_imports import ApiDatabase


def load_input(path) -> BinaryImage | Listing:
    """Read a MiniISA image, an assembler source (``.asm``) or an NDIF listing (``.ndif``)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ndif":
        with open(path, encoding="utf-8") as f:
            return parse_ndif(f.read())
    if ext == ".asm":
        with open(path, encoding="utf-8") as f:
            return assemble(f.read())
    return BinaryImage.load(path)


def listing_of(obj: BinaryImage | Listing, db: ApiDatabase | None = None) -> Listing:
    return obj if isinstance(obj, Listing) else disassemble_recursive(obj, db)


def api_paths(obj: BinaryImage | Listing, limits: TraversalLimits | None = None,
              db: ApiDatabase | None = None) -> PathList:
    return extract_paths(build_cfg(listing_of(obj, db)), limits)


def file_grams(obj: BinaryImage | Listing, idmap: ApiIdMap, n: int,
               limits: TraversalLimits | None = None) -> NGramSet:
    paths = [p for p in api_paths(obj, limits) if p.apis]
    return gram_set_of_file(paths, idmap, n)
