"""Deterministic synthetic corpora: malware families, benign programs, packed stubs.

All randomness comes from :class:`SplitMix64`, a fixed, portable 64-bit
generator (Steele, Lea & Flood 2014), so a (spec, seed) pair yields
byte-identical images on any platform.  Derived draws:

* ``below(n)``  = ``next() % n``
* ``random()``  = ``(next() >> 11) * 2**-53``
* per-variant streams are seeded with ``mix(seed, crc32(family name), index)``
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import Sequence

from .cfg import build_cfg
from .classify import Label
from .disasm import disassemble_recursive
from .features import SEED_APIS
from .miniisa import WIDTH, BinaryImage, DecodeError, Instruction, Kind, assemble, decode, encode, relocate
from .pathext import extract_paths

_M64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _M64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n

    def random(self) -> float:
        return (self.next() >> 11) * (1.0 / (1 << 53))

    def choice(self, seq):
        return seq[self.below(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def mix(*parts: int) -> int:
    rng = SplitMix64(0)
    for p in parts:
        rng.state ^= p & _M64
        rng.state = rng.next()
    return rng.state


# --- API catalogue -------------------------------------------------------------

BENIGN_POOL = (
    "ReadFile", "WriteFile", "CloseFile", "OpenFile", "CreateFile", "FindFirstFile",
    "FindNextFile", "LoadLibrary", "GetProcAddress", "VirtualAlloc", "CloseHandle",
    "GetModuleHandleA", "GetFileSize", "SetFilePointer", "HeapAlloc", "HeapFree",
    "GetProcessHeap", "Sleep", "GetTickCount", "GetSystemTime", "GetLastError",
    "MultiByteToWideChar", "lstrlenA", "MessageBoxA", "GetMessageA", "DispatchMessageA",
    "TranslateMessage", "CreateWindowExA", "ShowWindow", "RegOpenKeyExA",
    "RegQueryValueExA", "RegCloseKey", "GetCommandLineA", "ExitProcess", "CreateThread",
    "WaitForSingleObject", "CreateEventA", "SetEvent", "GetSystemInfo",
    "GetEnvironmentVariableA", "GetTempPathA", "DeleteFileA", "CopyFileA", "FindClose",
)

SUSPICIOUS = (
    "CreateProcess", "VirtualAllocEx", "WriteProcessMemory", "CreateRemoteThread",
    "OpenProcess", "CreateToolhelp32Snapshot", "Process32First", "Process32Next",
    "GetThreadContext", "SetThreadContext", "ResumeThread", "NtUnmapViewOfSection",
    "SetWindowsHookExA", "GetAsyncKeyState", "RegSetValueExA", "RegCreateKeyExA",
    "URLDownloadToFileA", "InternetOpenA", "InternetOpenUrlA", "InternetReadFile",
    "WSAStartup", "socket", "connect", "send", "recv", "bind", "listen", "accept",
    "gethostbyname", "CryptAcquireContextA", "CryptEncrypt", "IsDebuggerPresent",
    "OpenProcessToken", "AdjustTokenPrivileges", "OpenSCManagerA", "CreateServiceA",
    "StartServiceA", "ShellExecuteA", "GetForegroundWindow", "GetWindowTextA",
    "ZwQuerySystemInformation", "CreateMutexA", "GetComputerNameA", "VirtualProtect",
    "ReadProcessMemory", "SuspendThread", "NtQueryInformationProcess", "closesocket",
    "GetLogicalDrives", "GetDriveTypeA",
)

# id = position + 1; the first twelve keep their canonical ids
CATALOGUE = SEED_APIS + tuple(n for n in BENIGN_POOL + SUSPICIOUS if n not in SEED_APIS)
API_IDS = {name: i for i, name in enumerate(CATALOGUE, 1)}
API_MAP = {i: name for name, i in API_IDS.items()}
_BENIGN_IDS = tuple(API_IDS[n] for n in BENIGN_POOL)


def ids(*names: str) -> tuple[int, ...]:
    return tuple(API_IDS[n] for n in names)


# --- families ------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    name: str
    label: Label
    motifs: tuple[tuple[int, ...], ...]
    variant_count: int
    noise_rate: float
    seed: int = 0

    def __post_init__(self):
        if not self.motifs or any(not m for m in self.motifs):
            raise ValueError("a family needs at least one non-empty motif")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        if self.variant_count < 0:
            raise ValueError("variant_count must be non-negative")

    def gap_bound(self, motif: Sequence[int]) -> int:
        return math.ceil(self.noise_rate * len(motif))


_FAMILY_TABLE = [
    # name, class, sample count, noise, motifs
    ("Zbot", Label.TROJAN, 51, 0.55, [
        ("GetModuleHandleA", "GetProcAddress", "SetWindowsHookExA", "GetMessageA", "GetAsyncKeyState", "WriteFile"),
        ("RegOpenKeyExA", "RegQueryValueExA", "RegSetValueExA", "GetTickCount", "RegCloseKey"),
        ("InternetOpenA", "InternetOpenUrlA", "InternetReadFile", "CreateFile", "WriteFile"),
        ("GetForegroundWindow", "GetWindowTextA", "lstrlenA", "HeapAlloc", "send"),
        ("GetSystemTime", "gethostbyname", "URLDownloadToFileA", "GetTempPathA", "CreateProcess"),
    ]),
    ("Genome", Label.TROJAN, 20, 0.05, [
        ("GetSystemInfo", "GetComputerNameA", "CreateMutexA", "GetLastError", "URLDownloadToFileA", "ShellExecuteA"),
        ("CreateFile", "ReadFile", "CryptAcquireContextA", "CryptEncrypt", "WriteFile", "CloseHandle"),
        ("GetEnvironmentVariableA", "RegCreateKeyExA", "RegSetValueExA", "RegCloseKey", "ExitProcess"),
        ("GetCommandLineA", "FindFirstFile", "FindNextFile", "URLDownloadToFileA", "FindClose"),
    ]),
    ("Inject", Label.TROJAN, 10, 0.2, [
        ("CreateToolhelp32Snapshot", "Process32First", "Process32Next", "OpenProcess", "ReadProcessMemory",
         "VirtualAllocEx"),
        ("VirtualAllocEx", "WriteProcessMemory", "CreateRemoteThread", "WaitForSingleObject", "CloseHandle"),
        ("NtUnmapViewOfSection", "LoadLibrary", "GetProcAddress", "VirtualProtect", "ResumeThread"),
        ("SuspendThread", "GetThreadContext", "SetThreadContext", "ResumeThread", "CloseHandle"),
    ]),
    ("Palevo", Label.WORM, 10, 0.5, [
        ("WSAStartup", "socket", "connect", "send", "recv", "closesocket"),
        ("GetLogicalDrives", "GetDriveTypeA", "CopyFileA", "CreateFile", "SetFilePointer"),
        ("CreateMutexA", "RegOpenKeyExA", "RegSetValueExA", "Sleep", "GetTickCount"),
        ("FindFirstFile", "CopyFileA", "ShellExecuteA", "FindNextFile", "FindClose"),
    ]),
    ("ZAccess", Label.BACKDOOR, 22, 0.45, [
        ("OpenSCManagerA", "CreateServiceA", "StartServiceA", "CloseHandle", "Sleep"),
        ("ZwQuerySystemInformation", "NtQueryInformationProcess", "OpenProcessToken", "AdjustTokenPrivileges",
         "GetLastError"),
        ("socket", "bind", "listen", "accept", "recv", "send"),
        ("CreateEventA", "CreateThread", "WaitForSingleObject", "NtQueryInformationProcess", "SetEvent"),
    ]),
    ("Agent-Dropper", Label.TROJAN, 6, 0.15, [
        ("GetEnvironmentVariableA", "GetTempPathA", "URLDownloadToFileA", "CreateProcess", "CloseHandle"),
        ("IsDebuggerPresent", "GetTickCount", "Sleep", "VirtualAlloc", "VirtualProtect"),
        ("WaitForSingleObject", "ShellExecuteA", "DeleteFileA", "ExitProcess"),
        ("GetSystemTime", "GetComputerNameA", "gethostbyname", "send", "HeapFree"),
    ]),
]


def default_families(seed: int = 0) -> list[FamilySpec]:
    """Six families with staggered noise levels and partly shared motifs."""
    specs = []
    for name, label, count, noise, motifs in _FAMILY_TABLE:
        motif_ids = tuple(ids(*motif) for motif in motifs)
        specs.append(FamilySpec(name, label, motif_ids, count, noise, seed))
    return specs


# --- program synthesis ---------------------------------------------------------

class _Builder:
    """Assembles a program from logical units laid out in shuffled order."""

    def __init__(self, rng: SplitMix64):
        self.rng = rng
        self.units: list[tuple[str, list[str]]] = []
        self.subs: list[tuple[str, list[str]]] = []
        self._n = 0

    def fresh(self, stem: str) -> str:
        self._n += 1
        return f"{stem}{self._n}"

    def filler(self) -> list[str]:
        return ["COMPUTE"] * self.rng.below(3)

    def calls(self, api_ids: Sequence[int]) -> list[str]:
        out = []
        for a in api_ids:
            out += self.filler()
            out.append(f"APICALL {a}")
        return out

    def diamond(self, left: Sequence[int], right: Sequence[int]) -> list[str]:
        alt, join = self.fresh("alt"), self.fresh("join")
        return ([f"JCC {alt} {'TAKEN' if self.rng.below(2) else 'NOTTAKEN'}"] + self.calls(left)
                + [f"JMP {join}", f"{alt}:"] + self.calls(right) + [f"{join}:"])

    def skip(self, body: Sequence[int]) -> list[str]:
        over = self.fresh("skip")
        return [f"JCC {over} {'TAKEN' if self.rng.below(2) else 'NOTTAKEN'}"] + self.calls(body) + [f"{over}:"]

    def loop(self, body: Sequence[int]) -> list[str]:
        head = self.fresh("loop")
        return [f"{head}:"] + self.calls(body) + [f"JCC {head}"]

    def add_unit(self, body: list[str], as_call: bool = False) -> None:
        if as_call:
            sub = self.fresh("sub")
            self.subs.append((sub, body + ["RET"]))
            body = [f"CALL {sub}"]
        self.units.append((self.fresh("u"), body))

    def source(self) -> str:
        lines = [".entry start"] + [f".api {i} {n}" for i, n in API_MAP.items()]
        labels = [lab for lab, _ in self.units] + ["end"]
        chunks = []
        for i, (lab, body) in enumerate(self.units):
            chunks.append([f"{lab}:"] + body + [f"JMP {labels[i + 1]}"])
        chunks += [[f"{lab}:"] + body for lab, body in self.subs]
        chunks.append(["end:", "HALT"])
        self.rng.shuffle(chunks)
        lines += ["start:", f"JMP {labels[0]}"]
        for c in chunks:
            lines += c
        return "\n".join(lines) + "\n"


def _noisy_motif(b: _Builder, motif: Sequence[int], rate: float, bound: int, rng: SplitMix64) -> list[str]:
    """Motif calls with at most ``bound`` junk calls between them.

    A junk call is either inlined, breaking every gram across its slot, or
    guarded by a branch that can skip it, which leaves one path intact.
    """
    out = b.calls(motif[:1])
    used = 0
    for api in motif[1:]:
        if used < bound and rng.random() < rate:
            junk = [rng.choice(_BENIGN_IDS)]
            used += 1
            out += b.skip(junk) if rng.below(2) else b.calls(junk)
        out += b.calls([api])
    return out


def _benign_run(rng: SplitMix64, lo: int, hi: int) -> list[int]:
    return [rng.choice(_BENIGN_IDS) for _ in range(lo + rng.below(hi - lo + 1))]


def generate_variant(spec: FamilySpec, index: int) -> BinaryImage:
    rng = SplitMix64(mix(spec.seed, zlib.crc32(spec.name.encode()), index))
    b = _Builder(rng)
    r = spec.noise_rate
    for motif in spec.motifs:
        body = []
        if r and rng.random() < r:
            body += b.calls([rng.choice(_BENIGN_IDS)])
        body += _noisy_motif(b, motif, r, spec.gap_bound(motif), rng)
        if r and rng.random() < r:
            body += b.diamond(_benign_run(rng, 1, 2), _benign_run(rng, 1, 2))
        b.add_unit(body, as_call=rng.below(3) == 0)
    return assemble(b.source())


def generate_family(spec: FamilySpec) -> list[BinaryImage]:
    return [generate_variant(spec, i) for i in range(spec.variant_count)]


def _contains_run(stream: Sequence[int], motif: Sequence[int]) -> bool:
    m = len(motif)
    return any(tuple(stream[i:i + m]) == tuple(motif) for i in range(len(stream) - m + 1))


def generate_benign_one(rng: SplitMix64) -> BinaryImage:
    b = _Builder(rng)
    for _ in range(2 + rng.below(4)):
        body = b.calls(_benign_run(rng, 3, 7))
        roll = rng.below(4)
        if roll == 0:
            body += b.diamond(_benign_run(rng, 1, 3), _benign_run(rng, 1, 3))
        elif roll == 1:
            body += b.loop(_benign_run(rng, 1, 3))
        b.add_unit(body, as_call=rng.below(4) == 0)
    return assemble(b.source())


def generate_benign(count: int, seed: int, families: Sequence[FamilySpec] | None = None) -> list[BinaryImage]:
    """Benign programs built only from the benign API pool.

    A program whose API stream happens to contain a family motif as a
    contiguous run is rejected and redrawn.
    """
    motifs = [m for f in (families if families is not None else default_families()) for m in f.motifs]
    out = []
    for i in range(count):
        attempt = 0
        while True:
            rng = SplitMix64(mix(seed, 0xBE9194, i, attempt))
            image = generate_benign_one(rng)
            paths = extract_paths(build_cfg(disassemble_recursive(image)))
            streams = [ids(*p.apis) for p in paths]
            if not any(_contains_run(s, m) for s in streams for m in motifs):
                break
            attempt += 1
        out.append(image)
    return out


# --- packers -------------------------------------------------------------------

PACKER_NAME = "MiniPack"
# JCC <check> ; COMPUTE ; STORE ...
PACKER_SIGNATURE_TEXT = f"{PACKER_NAME}: 11 ?? ?? ?? ?? ?? 01 00 00 00 00 00 30\n"


def _relocated_code(inner: BinaryImage, delta: int) -> bytes:
    out = bytearray()
    code = inner.code
    for addr in range(0, len(code) - len(code) % WIDTH, WIDTH):
        try:
            ins = decode(code, addr)
        except DecodeError:
            out += code[addr:addr + WIDTH]
            continue
        out += encode(relocate(ins, delta))
    out += code[len(out):]
    return bytes(out)


def generate_packed(inner: BinaryImage, evasive: bool = False) -> BinaryImage:
    """Wrap ``inner`` in a stub that writes its code into a fresh region and jumps there.

    The evasive stub carries the same header (and so the same signature) but
    its environment check is taken and it halts before writing anything.
    """
    n = len(inner.code)
    stores = n
    stub_len = WIDTH * (2 + stores + 2)
    region = stub_len
    halt_addr = stub_len - WIDTH
    payload = _relocated_code(inner, region)
    instrs = [
        Instruction(0, Kind.JCC, target=halt_addr, taken=evasive),
        Instruction(WIDTH, Kind.COMPUTE),
    ]
    for i, byte in enumerate(payload):
        instrs.append(Instruction(WIDTH * (2 + i), Kind.STORE, target=region + i, value=byte))
    instrs.append(Instruction(halt_addr - WIDTH, Kind.JMP, target=region + inner.entry_point))
    instrs.append(Instruction(halt_addr, Kind.HALT))
    code = b"".join(encode(i) for i in instrs) + bytes(n)
    return BinaryImage(code=code, entry_point=0, base_address=inner.base_address, api_map=dict(inner.api_map))


def packed_region(packed: BinaryImage) -> tuple[int, int]:
    """(offset, length) of the region a ``generate_packed`` stub unpacks into."""
    first = decode(packed.code, 0)
    region = first.target + WIDTH
    return region, len(packed.code) - region


def generate_writer(rng: SplitMix64) -> BinaryImage:
    """Plain program that writes into a data area it never executes."""
    b = _Builder(rng)
    body = b.calls(_benign_run(rng, 2, 4))
    body += [f"STORE data+{i} {rng.below(256)}" for i in range(1 + rng.below(8))]
    b.add_unit(body)
    src = b.source() + "data:\n.zero 16\n"
    return assemble(src)


# --- corpus on disk ------------------------------------------------------------

@dataclass
class CorpusEntry:
    path: str
    label: Label
    family: str | None = None
    role: str = "sample"
    extra: dict = field(default_factory=dict)


def write_corpus(out_dir, seed: int, families: Sequence[str] | None = None, variants: int | None = None,
                 benign: int = 60) -> dict[str, list[CorpusEntry]]:
    """Write family variants, benign programs and a packing corpus under ``out_dir``.

    Produces ``manifest.json`` (all classification samples), ``train.json`` /
    ``test.json`` (first three variants per family and half the benign set
    for training), ``pack_manifest.json`` and ``packers.sig``.
    """
    specs = default_families(seed)
    if families:
        wanted = set(families)
        specs = [s for s in specs if s.name in wanted]
        missing = wanted - {s.name for s in specs}
        if missing:
            raise ValueError(f"unknown families: {sorted(missing)}")
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "pack"), exist_ok=True)
    entries: list[CorpusEntry] = []
    train: list[CorpusEntry] = []
    test: list[CorpusEntry] = []
    for spec in specs:
        count = variants if variants is not None else spec.variant_count
        for i in range(count):
            rel = f"samples/{spec.name}-{i:03d}.misa"
            generate_variant(spec, i).save(os.path.join(out_dir, rel))
            e = CorpusEntry(rel, spec.label, spec.name)
            entries.append(e)
            (train if i < 3 else test).append(e)
    for i, image in enumerate(generate_benign(benign, seed, specs)):
        rel = f"samples/benign-{i:03d}.misa"
        image.save(os.path.join(out_dir, rel))
        e = CorpusEntry(rel, Label.BENIGN)
        entries.append(e)
        (train if i % 2 == 0 else test).append(e)

    pack: list[CorpusEntry] = []
    rng = SplitMix64(mix(seed, 0x9AC4))
    for i, image in enumerate(generate_benign(4, seed + 1, specs)):
        for role, img in (("plain", image), ("packed", generate_packed(image)),
                          ("evasive", generate_packed(image, evasive=True))):
            rel = f"pack/{role}-{i}.misa"
            img.save(os.path.join(out_dir, rel))
            pack.append(CorpusEntry(rel, Label.BENIGN, role=role))
    for i in range(2):
        rel = f"pack/writer-{i}.misa"
        generate_writer(rng).save(os.path.join(out_dir, rel))
        pack.append(CorpusEntry(rel, Label.BENIGN, role="writer"))
    with open(os.path.join(out_dir, "packers.sig"), "w", encoding="utf-8") as f:
        f.write(PACKER_SIGNATURE_TEXT)

    manifests = {"manifest.json": entries, "train.json": train, "test.json": test, "pack_manifest.json": pack}
    for name, items in manifests.items():
        write_manifest(os.path.join(out_dir, name), items)
    return manifests


def write_manifest(path, items: Sequence[CorpusEntry]) -> None:
    rows = []
    for e in items:
        row = {"path": e.path, "label": e.label.value}
        if e.family:
            row["family"] = e.family
        if e.role != "sample":
            row["role"] = e.role
        rows.append(row)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> list[CorpusEntry]:
    """Entries with paths resolved relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as f:
        rows = json.load(f)
    out = []
    for row in rows:
        p = row["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        out.append(CorpusEntry(p, Label(row["label"]), row.get("family"), row.get("role", "sample")))
    return out


# --- random programs for structural testing ------------------------------------

def random_program(rng: SplitMix64, max_instrs: int = 40, api_ids: Sequence[int] = tuple(range(1, 13)),
                   junk: bool = False) -> BinaryImage:
    """Arbitrary (not necessarily sensible) well-formed program.

    Targets land on instruction boundaries; with ``junk`` a few slots hold
    undecodable bytes.
    """
    count = 1 + rng.below(max_instrs)
    size = count * WIDTH
    kinds = (Kind.COMPUTE, Kind.NOP, Kind.APICALL, Kind.APICALL, Kind.APICALL, Kind.JMP, Kind.JCC,
             Kind.JCC, Kind.CALL, Kind.RET, Kind.HALT, Kind.CALLIND, Kind.STORE)
    code = bytearray()
    for i in range(count):
        if junk and rng.below(12) == 0:
            code += bytes([0x7F]) + bytes(rng.below(256) for _ in range(WIDTH - 1))
            continue
        k = rng.choice(kinds)
        addr = i * WIDTH
        t = rng.below(count) * WIDTH
        if k is Kind.APICALL:
            ins = Instruction(addr, k, operand=rng.choice(api_ids))
        elif k is Kind.STORE:
            ins = Instruction(addr, k, target=rng.below(size), value=rng.below(256))
        elif k.has_target:
            ins = Instruction(addr, k, target=t, taken=bool(rng.below(2)) if k is Kind.JCC else False)
        else:
            ins = Instruction(addr, k)
        code += encode(ins)
    api_map = {i: SEED_APIS[i - 1] if i <= len(SEED_APIS) else f"Api{i}" for i in api_ids}
    return BinaryImage(code=bytes(code), entry_point=rng.below(count) * WIDTH, api_map=api_map)
