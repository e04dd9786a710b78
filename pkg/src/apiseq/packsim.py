"""Packed-binary detection on MiniISA: write-then-execute VM and byte signatures.

``run_vm`` is the dynamic detector: it records every byte written by
``STORE`` and flags the image as packed the first time an instruction fetch
overlaps a written byte.  ``match_signatures`` is the static, PEiD-style
detector anchored at the entry point.  ``evaluate_detectors`` runs both and
partitions the corpus by their agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .miniisa import WIDTH, BinaryImage, DecodeError, Kind, decode

DEFAULT_MAX_STEPS = 100_000


@dataclass
class VmState:
    pc: int
    memory: bytearray
    written: set[int] = field(default_factory=set)
    steps: int = 0
    halted: bool = False


@dataclass(frozen=True)
class VmResult:
    packed: bool
    evidence: int | None
    steps: int
    stop: str  # halt | return | indirect | bad-opcode | pc-out-of-range | max-steps | packed
    completed: bool
    api_trace: tuple[int, ...]
    memory: bytes
    written: frozenset[int]

    def summary(self) -> dict:
        return {
            "packed": self.packed,
            "evidence": self.evidence,
            "steps": self.steps,
            "stop": self.stop,
            "completed": self.completed,
            "bytes_written": len(self.written),
            "api_calls": len(self.api_trace),
        }


def run_vm(image: BinaryImage, max_steps: int = DEFAULT_MAX_STEPS) -> VmResult:
    st = VmState(pc=image.entry_point, memory=bytearray(image.code))
    mem = st.memory
    calls: list[int] = []
    trace: list[int] = []
    evidence = None
    while True:
        if st.steps >= max_steps:
            stop = "max-steps"
            break
        pc = st.pc
        if pc < 0 or pc + WIDTH > len(mem):
            stop = "pc-out-of-range"
            break
        if st.written and any(a in st.written for a in range(pc, pc + WIDTH)):
            stop, evidence = "packed", pc
            break
        try:
            ins = decode(mem, pc)
        except DecodeError:
            stop = "bad-opcode"
            break
        st.steps += 1
        k = ins.kind
        if k is Kind.STORE:
            mem[ins.target] = ins.value
            st.written.add(ins.target)
            st.pc = pc + WIDTH
        elif k is Kind.JMP:
            st.pc = ins.target
        elif k is Kind.JCC:
            st.pc = ins.target if ins.taken else pc + WIDTH
        elif k is Kind.CALL:
            calls.append(pc + WIDTH)
            st.pc = ins.target
        elif k is Kind.RET:
            if not calls:
                stop = "return"
                break
            st.pc = calls.pop()
        elif k is Kind.CALLIND:
            stop = "indirect"
            break
        elif k is Kind.HALT:
            stop = "halt"
            break
        else:
            if k is Kind.APICALL:
                trace.append(ins.operand)
            st.pc = pc + WIDTH
    st.halted = stop != "max-steps"
    return VmResult(
        packed=evidence is not None,
        evidence=evidence,
        steps=st.steps,
        stop=stop,
        completed=stop in ("halt", "return"),
        api_trace=tuple(trace),
        memory=bytes(mem),
        written=frozenset(st.written),
    )


# --- signatures ----------------------------------------------------------------

class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class PackerSignature:
    name: str
    pattern: tuple[int | None, ...]  # None is a wildcard byte
    anchor: str = "EntryPoint"

    def __post_init__(self):
        if not self.pattern:
            raise SignatureError(f"signature {self.name!r} has an empty pattern")

    def matches(self, image: BinaryImage) -> bool:
        start = image.entry_point
        window = image.code[start:start + len(self.pattern)]
        if len(window) < len(self.pattern):
            return False
        return all(p is None or p == b for p, b in zip(self.pattern, window))

    def to_line(self) -> str:
        return f"{self.name}: " + " ".join("??" if p is None else f"{p:02X}" for p in self.pattern)


def parse_signatures(text: str) -> list[PackerSignature]:
    """Parse ``NAME: HH HH ?? HH`` lines; ``#`` starts a comment."""
    sigs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, body = line.partition(":")
        if not sep or not name.strip():
            raise SignatureError(f"line {lineno}: expected 'NAME: HH ...'")
        pattern = []
        for tok in body.split():
            if tok == "??":
                pattern.append(None)
            elif len(tok) == 2:
                try:
                    pattern.append(int(tok, 16))
                except ValueError:
                    raise SignatureError(f"line {lineno}: bad byte {tok!r}") from None
            else:
                raise SignatureError(f"line {lineno}: bad byte {tok!r}")
        sigs.append(PackerSignature(name.strip(), tuple(pattern)))
    return sigs


def load_signatures(path) -> list[PackerSignature]:
    with open(path, encoding="utf-8") as f:
        return parse_signatures(f.read())


def match_signatures(image: BinaryImage, sigs: Sequence[PackerSignature]) -> str | None:
    for sig in sigs:
        if sig.matches(image):
            return sig.name
    return None


# --- detector evaluation -------------------------------------------------------

@dataclass(frozen=True)
class BinaryEval:
    name: str
    sig_result: str | None
    dyn_result: bool
    evidence: int | None
    completed: bool


@dataclass
class EvalReport:
    entries: list[BinaryEval]
    partitions: dict[str, list[str]]

    def to_json(self) -> dict:
        return {
            "binaries": [
                {"name": e.name, "sig_result": e.sig_result, "dyn_result": e.dyn_result,
                 "evidence": e.evidence, "completed": e.completed}
                for e in self.entries
            ],
            "partitions": self.partitions,
        }


def evaluate_detectors(corpus: Sequence[BinaryImage], sigs: Sequence[PackerSignature],
                       max_steps: int = DEFAULT_MAX_STEPS, names: Sequence[str] | None = None) -> EvalReport:
    if not corpus:
        raise ValueError("corpus is empty")
    names = list(names) if names is not None else [f"#{i}" for i in range(len(corpus))]
    entries = []
    parts: dict[str, list[str]] = {"sig_only": [], "dyn_only": [], "both": [], "neither": []}
    for name, image in zip(names, corpus):
        sig = match_signatures(image, sigs)
        vm = run_vm(image, max_steps)
        entries.append(BinaryEval(name, sig, vm.packed, vm.evidence, vm.completed))
        if sig is not None and vm.packed:
            parts["both"].append(name)
        elif sig is not None:
            parts["sig_only"].append(name)
        elif vm.packed:
            parts["dyn_only"].append(name)
        else:
            parts["neither"].append(name)
    return EvalReport(entries, parts)
