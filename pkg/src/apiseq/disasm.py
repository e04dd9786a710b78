"""Linear and recursive disassembly of MiniISA images, plus the NDIF text format.

NDIF (normalized disassembly interchange format) is how listings produced
by external disassemblers enter the pipeline::

    .entry 0000
    0000 APICALL API=CreateFile
    0006 JCC 0018
    000C SEQ
    0012 RET

One instruction per line, ``ADDR KIND [TARGET] [API=name]`` with hex
addresses and no prefix.  ``#`` lines are comments.
"""

from __future__ import annotations

import bisect
import enum
import re
from dataclasses import dataclass, field, replace

from .miniisa import WIDTH, BinaryImage, DecodeError, Instruction, Kind, decode
from .pe_imports import ApiDatabase, filter_known, resolve_call_target


class Mode(enum.Enum):
    LINEAR = "linear"
    RECURSIVE = "recursive"
    INGESTED = "ingested"


class DisasmError(ValueError):
    pass


class EntryOutOfRange(DisasmError):
    pass


class NdifSyntaxError(DisasmError):
    def __init__(self, msg: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class DuplicateAddress(DisasmError):
    pass


@dataclass
class Listing:
    instructions: dict[int, Instruction]
    entry: int
    mode: Mode
    _order: list[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.instructions = dict(sorted(self.instructions.items()))
        self._order = list(self.instructions)

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions.values())

    def __contains__(self, addr) -> bool:
        return addr in self.instructions

    def addresses(self) -> list[int]:
        return list(self._order)

    def fall_through(self, addr: int) -> int | None:
        """Address control reaches after ``addr`` in straight-line flow, if listed.

        MiniISA listings use the fixed width; ingested listings take the next
        listed address since external instructions vary in length.
        """
        if self.mode is Mode.INGESTED:
            i = bisect.bisect_right(self._order, addr)
            return self._order[i] if i < len(self._order) else None
        nxt = addr + WIDTH
        return nxt if nxt in self.instructions else None


def resolve_api(image: BinaryImage, operand: int, db: ApiDatabase | None = None) -> str | None:
    """Map an APICALL operand to a name via the toy map, else the PE import table."""
    name = image.api_map.get(operand)
    if name is None and image.imports is not None:
        name = resolve_call_target(operand, image.imports)
    if name is not None and db is not None and not filter_known(name, db):
        return None
    return name


def _decode(image: BinaryImage, addr: int, db) -> Instruction:
    ins = decode(image.code, addr)
    if ins.kind is Kind.APICALL:
        ins = replace(ins, api=resolve_api(image, ins.operand, db))
    return ins


def disassemble_linear(image: BinaryImage, db: ApiDatabase | None = None) -> Listing:
    out = {}
    addr = 0
    while addr + WIDTH <= len(image.code):
        try:
            out[addr] = _decode(image, addr, db)
        except DecodeError:
            break
        addr += WIDTH
    return Listing(out, image.entry_point, Mode.LINEAR)


def disassemble_recursive(image: BinaryImage, db: ApiDatabase | None = None) -> Listing:
    entry = image.entry_point
    if not 0 <= entry or entry + WIDTH > len(image.code):
        raise EntryOutOfRange(f"entry {entry:#x} does not hold a full instruction")
    out: dict[int, Instruction] = {}
    stack = [entry]
    while stack:
        addr = stack.pop()
        while addr not in out:
            try:
                ins = _decode(image, addr, db)
            except DecodeError:
                break
            out[addr] = ins
            k = ins.kind
            if k is Kind.JCC or k is Kind.CALL:
                stack.append(ins.next_address)
                addr = ins.target
            elif k is Kind.JMP:
                addr = ins.target
            elif k in (Kind.RET, Kind.HALT, Kind.CALLIND):
                break
            else:
                addr = ins.next_address
    return Listing(out, entry, Mode.RECURSIVE)


def disassemble(image: BinaryImage, mode: str | Mode = Mode.RECURSIVE, db: ApiDatabase | None = None) -> Listing:
    mode = Mode(mode)
    if mode is Mode.LINEAR:
        return disassemble_linear(image, db)
    if mode is Mode.RECURSIVE:
        return disassemble_recursive(image, db)
    raise ValueError("ingested listings come from parse_ndif")


# --- NDIF --------------------------------------------------------------------

_NDIF_KINDS = {
    "SEQ": Kind.COMPUTE, "JMP": Kind.JMP, "JCC": Kind.JCC, "CALL": Kind.CALL,
    "RET": Kind.RET, "CALLIND": Kind.CALLIND, "APICALL": Kind.APICALL,
    "STORE": Kind.STORE, "HALT": Kind.HALT,
}
_KIND_NAMES = {v: k for k, v in _NDIF_KINDS.items()}
_KIND_NAMES[Kind.NOP] = "SEQ"
_HEX = re.compile(r"^[0-9A-Fa-f]+$")


def emit_ndif(listing: Listing) -> str:
    lines = [f".entry {listing.entry:04X}"]
    for ins in listing:
        parts = [f"{ins.address:04X}", _KIND_NAMES[ins.kind]]
        if ins.kind.has_target:
            parts.append(f"{ins.target:04X}")
        if ins.kind is Kind.APICALL and ins.api:
            parts.append(f"API={ins.api}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_ndif(text: str) -> Listing:
    out: dict[int, Instruction] = {}
    entry = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if toks[0] == ".entry":
            if len(toks) != 2 or not _HEX.match(toks[1]):
                raise NdifSyntaxError("expected '.entry ADDR'", lineno)
            entry = int(toks[1], 16)
            continue
        if len(toks) < 2 or not _HEX.match(toks[0]):
            raise NdifSyntaxError(f"expected 'ADDR KIND ...', got {line!r}", lineno)
        addr = int(toks[0], 16)
        kind = _NDIF_KINDS.get(toks[1].upper())
        if kind is None:
            raise NdifSyntaxError(f"unknown kind {toks[1]!r}", lineno)
        rest = toks[2:]
        target = None
        api = None
        if kind.has_target:
            if not rest or not _HEX.match(rest[0]):
                raise NdifSyntaxError(f"{toks[1]} needs a hex target", lineno)
            target = int(rest.pop(0), 16)
        if rest and rest[0].startswith("API="):
            if kind is not Kind.APICALL:
                raise NdifSyntaxError("API= is only valid on APICALL", lineno)
            api = rest.pop(0)[4:] or None
        if rest:
            raise NdifSyntaxError(f"unexpected trailing tokens {rest}", lineno)
        if addr in out:
            raise DuplicateAddress(f"line {lineno}: address {addr:04X} listed twice")
        out[addr] = Instruction(addr, kind, target=target, api=api)
    if entry is None:
        entry = min(out) if out else 0
    return Listing(out, entry, Mode.INGESTED)
