"""MiniISA: a fixed-width toy instruction set used as the analysis substrate.

Every instruction is 6 bytes::

    byte 0     opcode
    byte 1     meta (Jcc taken flag, Store value; zero otherwise)
    bytes 2-5  little-endian u32 operand (branch/store target or API operand)

Branch and store targets are byte offsets into the image's code, not
virtual addresses.  An image also carries a toy import table (``api_map``)
that maps ``APICALL`` operands to API names.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable

WIDTH = 6
IMAGE_MAGIC = b"MISA"
IMAGE_VERSION = 1


class Kind(enum.Enum):
    NOP = 0x90
    COMPUTE = 0x01
    JMP = 0x10
    JCC = 0x11
    CALL = 0x12
    RET = 0x13
    CALLIND = 0x14
    APICALL = 0x20
    STORE = 0x30
    HALT = 0xF4

    @property
    def has_target(self) -> bool:
        return self in _TARGETED

    @property
    def is_control(self) -> bool:
        """True for kinds that may only end a basic block."""
        return self in _CONTROL


_TARGETED = frozenset({Kind.JMP, Kind.JCC, Kind.CALL, Kind.STORE})
_CONTROL = frozenset({Kind.JMP, Kind.JCC, Kind.CALL, Kind.RET, Kind.CALLIND, Kind.HALT})
_OPCODES = {k.value: k for k in Kind}


class IsaError(ValueError):
    pass


class DecodeError(IsaError):
    pass


class UnknownOpcode(DecodeError):
    pass


class OutOfBounds(DecodeError):
    pass


class BadOperand(DecodeError):
    """Non-canonical meta/operand bytes, or a target outside the code."""


class ImageError(IsaError):
    pass


class AsmError(IsaError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class UndefinedLabel(AsmError):
    pass


class DuplicateLabel(AsmError):
    pass


class EmptyImage(AsmError):
    pass


@dataclass(frozen=True)
class Instruction:
    address: int
    kind: Kind
    target: int | None = None
    taken: bool = False
    value: int = 0
    operand: int | None = None
    # resolved API name; filled by the disassembler, never encoded
    api: str | None = None

    @property
    def next_address(self) -> int:
        return self.address + WIDTH

    def __str__(self) -> str:
        s = f"{self.address:04X}  {self.kind.name}"
        if self.kind is Kind.STORE:
            s += f" {self.target:04X}, {self.value:#04x}"
        elif self.kind.has_target:
            s += f" {self.target:04X}"
        if self.kind is Kind.JCC and self.taken:
            s += " TAKEN"
        if self.kind is Kind.APICALL:
            s += f" {self.operand:#x}"
            if self.api:
                s += f" ; {self.api}"
        return s


@dataclass(frozen=True, eq=True)
class BinaryImage:
    code: bytes
    entry_point: int = 0
    base_address: int = 0
    api_map: dict[int, str] = field(default_factory=dict)
    fmt: str = "MINI"
    # optional PE-style import table (apiseq.pe_imports.ImportTable); APICALL
    # operands that miss api_map are then treated as absolute IAT addresses
    imports: object | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "code", bytes(self.code))
        if self.code and not 0 <= self.entry_point < len(self.code):
            raise ImageError(f"entry point {self.entry_point:#x} outside code of {len(self.code)} bytes")
        if not 0 <= self.base_address <= 0xFFFFFFFF:
            raise ImageError("base address must fit in 32 bits")
        if self.fmt not in ("MINI", "PE"):
            raise ImageError(f"unknown format tag {self.fmt!r}")

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.code)

    def to_bytes(self) -> bytes:
        out = bytearray(IMAGE_MAGIC)
        out += struct.pack("<HII", IMAGE_VERSION, self.base_address, self.entry_point)
        out += struct.pack("<H", len(self.api_map))
        for api_id, name in sorted(self.api_map.items()):
            raw = name.encode("utf-8")
            if len(raw) > 255:
                raise ImageError(f"API name too long: {name[:20]}...")
            out += struct.pack("<IB", api_id, len(raw)) + raw
        out += struct.pack("<I", len(self.code)) + self.code
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BinaryImage":
        if data[:4] != IMAGE_MAGIC:
            raise ImageError("bad magic, not a MiniISA image")
        try:
            version, base, entry = struct.unpack_from("<HII", data, 4)
            if version != IMAGE_VERSION:
                raise ImageError(f"unsupported image version {version}")
            (count,) = struct.unpack_from("<H", data, 14)
            pos = 16
            api_map: dict[int, str] = {}
            for _ in range(count):
                api_id, n = struct.unpack_from("<IB", data, pos)
                pos += 5
                name = data[pos:pos + n]
                if len(name) != n:
                    raise ImageError("truncated API record")
                if api_id in api_map:
                    raise ImageError(f"duplicate API id {api_id}")
                api_map[api_id] = name.decode("utf-8")
                pos += n
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
        except struct.error as exc:
            raise ImageError(f"truncated image header: {exc}") from None
        code = data[pos:pos + n]
        if len(code) != n:
            raise ImageError("truncated code section")
        return cls(code=code, entry_point=entry, base_address=base, api_map=api_map)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BinaryImage":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def encode(ins: Instruction) -> bytes:
    k = ins.kind
    meta = 0
    operand = 0
    if k.has_target:
        if ins.target is None:
            raise IsaError(f"{k.name} needs a target")
        operand = ins.target
    if k is Kind.JCC:
        meta = int(bool(ins.taken))
    elif k is Kind.STORE:
        meta = ins.value
    elif k is Kind.APICALL:
        operand = ins.operand or 0
    if not 0 <= meta <= 0xFF or not 0 <= operand <= 0xFFFFFFFF:
        raise IsaError(f"field out of range in {ins}")
    return struct.pack("<BBI", k.value, meta, operand)


def decode(buf: bytes | bytearray, addr: int) -> Instruction:
    """Decode the instruction occupying ``buf[addr:addr+6]``."""
    if addr < 0 or addr + WIDTH > len(buf):
        raise OutOfBounds(f"no instruction fits at {addr:#x} (code is {len(buf)} bytes)")
    op, meta, operand = struct.unpack_from("<BBI", buf, addr)
    kind = _OPCODES.get(op)
    if kind is None:
        raise UnknownOpcode(f"opcode {op:#04x} at {addr:#x}")
    if kind.has_target and operand >= len(buf):
        raise BadOperand(f"{kind.name} target {operand:#x} outside code at {addr:#x}")
    if kind is Kind.JCC:
        if meta > 1:
            raise BadOperand(f"JCC flag {meta:#x} at {addr:#x}")
        return Instruction(addr, kind, target=operand, taken=bool(meta))
    if kind is Kind.STORE:
        return Instruction(addr, kind, target=operand, value=meta)
    if meta:
        raise BadOperand(f"nonzero meta byte for {kind.name} at {addr:#x}")
    if kind.has_target:
        return Instruction(addr, kind, target=operand)
    if kind is Kind.APICALL:
        return Instruction(addr, kind, operand=operand)
    if operand:
        raise BadOperand(f"nonzero operand for {kind.name} at {addr:#x}")
    return Instruction(addr, kind)


def decode_at(image: BinaryImage, addr: int) -> Instruction:
    return decode(image.code, addr)


def relocate(ins: Instruction, delta: int) -> Instruction:
    """Shift an instruction (and its code-relative target) by ``delta`` bytes."""
    target = ins.target + delta if ins.target is not None else None
    return replace(ins, address=ins.address + delta, target=target)


def encode_all(instrs: Iterable[Instruction]) -> bytes:
    return b"".join(encode(i) for i in instrs)


# --- assembler ---------------------------------------------------------------

_LABEL = re.compile(r"^([A-Za-z_.$][\w.$]*):$")
_EXPR = re.compile(r"^([A-Za-z_.$][\w.$]*|0[xX][0-9a-fA-F]+|\d+)(?:([+-])(0[xX][0-9a-fA-F]+|\d+))?$")
_NO_ARGS = {"NOP": Kind.NOP, "COMPUTE": Kind.COMPUTE, "RET": Kind.RET,
            "CALLIND": Kind.CALLIND, "HALT": Kind.HALT}
_BRANCHES = {"JMP": Kind.JMP, "JCC": Kind.JCC, "CALL": Kind.CALL}


def _int(tok: str) -> int:
    return int(tok, 0)


def _statements(source: str):
    for lineno, line in enumerate(source.splitlines(), 1):
        line = line.split("#", 1)[0]
        for stmt in line.split(";"):
            toks = stmt.replace(",", " ").split()
            while toks and _LABEL.match(toks[0]):
                yield lineno, "label", [_LABEL.match(toks[0]).group(1)]
                toks = toks[1:]
            if toks:
                yield lineno, toks[0].upper(), toks[1:]


def assemble(source: str) -> BinaryImage:
    """Assemble a MiniISA listing into an image.

    Statements are separated by newlines or ``;``; ``#`` starts a comment.
    Labels are ``name:`` and may share a line with an instruction.
    Directives: ``.entry EXPR``, ``.base ADDR``, ``.api ID NAME``,
    ``.byte HH ...`` (raw data) and ``.zero N``.
    """
    stmts = list(_statements(source))
    labels: dict[str, int] = {}
    api_map: dict[int, str] = {}
    base = 0
    entry_expr: tuple[int, str] | None = None
    pc = 0
    body = []
    for lineno, op, args in stmts:
        if op == "label":
            if args[0] in labels:
                raise DuplicateLabel(f"label {args[0]!r} defined twice", lineno)
            labels[args[0]] = pc
        elif op == ".API":
            if len(args) != 2:
                raise AsmError(".api takes ID NAME", lineno)
            api_id = _int(args[0])
            if api_id in api_map:
                raise AsmError(f"API id {api_id} declared twice", lineno)
            api_map[api_id] = args[1]
        elif op == ".BASE":
            base = _int(args[0])
        elif op == ".ENTRY":
            entry_expr = (lineno, args[0])
        elif op == ".BYTE":
            body.append((lineno, op, args, pc))
            pc += len(args)
        elif op == ".ZERO":
            body.append((lineno, op, args, pc))
            pc += _int(args[0])
        elif op in _NO_ARGS or op in _BRANCHES or op in ("APICALL", "STORE"):
            body.append((lineno, op, args, pc))
            pc += WIDTH
        else:
            raise AsmError(f"unknown mnemonic {op!r}", lineno)
    if not body:
        raise EmptyImage("source assembles to no code")
    size = pc
    by_name = {name: api_id for api_id, name in api_map.items()}

    def expr(tok: str, lineno: int) -> int:
        m = _EXPR.match(tok)
        if not m:
            raise AsmError(f"bad operand {tok!r}", lineno)
        head, sign, off = m.groups()
        if head[0].isdigit():
            val = _int(head)
        elif head in labels:
            val = labels[head]
        else:
            raise UndefinedLabel(f"undefined label {head!r}", lineno)
        if sign:
            val = val + _int(off) if sign == "+" else val - _int(off)
        return val

    def target(tok: str, lineno: int) -> int:
        t = expr(tok, lineno)
        if not 0 <= t < size:
            raise AsmError(f"target {t:#x} outside code of {size} bytes", lineno)
        return t

    code = bytearray()
    for lineno, op, args, addr in body:
        if op == ".BYTE":
            code += bytes(int(a, 16) for a in args)
            continue
        if op == ".ZERO":
            code += bytes(_int(args[0]))
            continue
        if op in _NO_ARGS:
            if args:
                raise AsmError(f"{op} takes no operands", lineno)
            ins = Instruction(addr, _NO_ARGS[op])
        elif op in _BRANCHES:
            kind = _BRANCHES[op]
            if not args or len(args) > (2 if kind is Kind.JCC else 1):
                raise AsmError(f"bad operand count for {op}", lineno)
            taken = False
            if len(args) == 2:
                flag = args[1].upper()
                if flag not in ("TAKEN", "NOTTAKEN", "0", "1"):
                    raise AsmError(f"bad JCC flag {args[1]!r}", lineno)
                taken = flag in ("TAKEN", "1")
            ins = Instruction(addr, kind, target=target(args[0], lineno), taken=taken)
        elif op == "APICALL":
            if len(args) != 1:
                raise AsmError("APICALL takes one operand", lineno)
            tok = args[0]
            if tok in by_name:
                operand = by_name[tok]
            elif tok[0].isdigit():
                operand = _int(tok)
            else:
                raise UndefinedLabel(f"API {tok!r} not declared with .api", lineno)
            ins = Instruction(addr, Kind.APICALL, operand=operand)
        else:  # STORE
            if len(args) != 2:
                raise AsmError("STORE takes TARGET VALUE", lineno)
            ins = Instruction(addr, Kind.STORE, target=target(args[0], lineno), value=_int(args[1]))
        try:
            code += encode(ins)
        except IsaError as exc:
            raise AsmError(str(exc), lineno) from None

    entry = 0
    if entry_expr is not None:
        entry = target(entry_expr[1], entry_expr[0])
    return BinaryImage(code=bytes(code), entry_point=entry, base_address=base, api_map=api_map)
