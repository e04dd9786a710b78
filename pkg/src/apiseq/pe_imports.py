"""PE32 import-table parsing and call-site API resolution.

Only the pieces needed to name API calls are read: the DOS/PE headers, the
section table (for RVA translation) and the import directory with its
Hint/Name lookup array and Import Address Table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B
ORDINAL_FLAG = 0x80000000
_MAX_DESCRIPTORS = 4096
_MAX_THUNKS = 65536


class PEError(ValueError):
    pass


class NotPE(PEError):
    pass


class UnsupportedPE(NotPE):
    """A valid PE that is not PE32 (e.g. PE32+)."""


class TruncatedHeader(PEError):
    pass


class MalformedImportDirectory(PEError):
    pass


@dataclass(frozen=True)
class ImportEntry:
    dll_name: str
    api_name: str
    hint: int
    thunk_rva: int


@dataclass
class ImportTable:
    image_base: int
    entries: list[ImportEntry] = field(default_factory=list)
    by_rva: dict[int, ImportEntry] = field(init=False, repr=False)

    def __post_init__(self):
        self.by_rva = {}
        for e in self.entries:
            if e.thunk_rva in self.by_rva:
                raise MalformedImportDirectory(f"IAT slot {e.thunk_rva:#x} listed twice")
            self.by_rva[e.thunk_rva] = e

    def __len__(self) -> int:
        return len(self.entries)


def _u16(data: bytes, off: int, what: str) -> int:
    if off < 0 or off + 2 > len(data):
        raise TruncatedHeader(f"{what} at {off:#x} past end of file")
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int, what: str) -> int:
    if off < 0 or off + 4 > len(data):
        raise TruncatedHeader(f"{what} at {off:#x} past end of file")
    return struct.unpack_from("<I", data, off)[0]


def _cstring(data: bytes, off: int, what: str) -> str:
    if off < 0 or off >= len(data):
        raise MalformedImportDirectory(f"{what} at {off:#x} past end of file")
    end = data.find(b"\0", off)
    if end < 0:
        raise MalformedImportDirectory(f"{what} at {off:#x} is not terminated")
    return data[off:end].decode("latin-1")


class _Sections:
    def __init__(self, data: bytes, table_off: int, count: int, size_of_headers: int):
        self.spans = []
        for i in range(count):
            off = table_off + 40 * i
            if off + 40 > len(data):
                raise TruncatedHeader(f"section header {i} at {off:#x} past end of file")
            vsize, va, raw_size, raw_ptr = struct.unpack_from("<IIII", data, off + 8)
            self.spans.append((va, max(vsize, raw_size), raw_ptr))
        self.size_of_headers = size_of_headers

    def offset(self, rva: int, what: str) -> int:
        for va, size, raw in self.spans:
            if va <= rva < va + size:
                return raw + (rva - va)
        if rva < self.size_of_headers:
            return rva
        raise MalformedImportDirectory(f"{what} RVA {rva:#x} is not inside any section")


def parse_imports(pe_bytes: bytes) -> ImportTable:
    data = bytes(pe_bytes)
    if data[:2] != b"MZ":
        raise NotPE("missing DOS 'MZ' signature")
    if len(data) < 0x40:
        raise TruncatedHeader("DOS header shorter than 64 bytes")
    e_lfanew = _u32(data, 0x3C, "e_lfanew")
    if data[e_lfanew:e_lfanew + 4] != b"PE\0\0":
        if e_lfanew + 4 > len(data):
            raise TruncatedHeader(f"PE signature offset {e_lfanew:#x} past end of file")
        raise NotPE(f"no PE signature at {e_lfanew:#x}")
    coff = e_lfanew + 4
    if coff + 20 > len(data):
        raise TruncatedHeader("COFF file header truncated")
    nsections = _u16(data, coff + 2, "NumberOfSections")
    opt_size = _u16(data, coff + 16, "SizeOfOptionalHeader")
    opt = coff + 20
    magic = _u16(data, opt, "optional header magic")
    if magic == PE32PLUS_MAGIC:
        raise UnsupportedPE("PE32+ images are not supported")
    if magic != PE32_MAGIC:
        raise NotPE(f"unknown optional header magic {magic:#x}")
    if opt_size < 96 or opt + opt_size > len(data):
        raise TruncatedHeader("optional header truncated")
    image_base = _u32(data, opt + 28, "ImageBase")
    size_of_headers = _u32(data, opt + 60, "SizeOfHeaders")
    ndirs = _u32(data, opt + 92, "NumberOfRvaAndSizes")
    table = ImportTable(image_base)
    if ndirs < 2 or opt_size < 96 + 16:
        return table
    import_rva = _u32(data, opt + 96 + 8, "import directory RVA")
    if import_rva == 0:
        return table
    sections = _Sections(data, opt + opt_size, nsections, size_of_headers)

    entries = []
    desc = sections.offset(import_rva, "import directory")
    for i in range(_MAX_DESCRIPTORS):
        off = desc + 20 * i
        if off + 20 > len(data):
            raise MalformedImportDirectory(f"import descriptor {i} runs past end of file")
        oft, _, _, name_rva, ft = struct.unpack_from("<IIIII", data, off)
        if not (oft or name_rva or ft):
            break
        if not name_rva or not ft:
            raise MalformedImportDirectory(f"import descriptor {i} lacks Name or FirstThunk")
        dll = _cstring(data, sections.offset(name_rva, "DLL name"), f"DLL name of descriptor {i}")
        lookup = sections.offset(oft or ft, "import lookup table")
        for j in range(_MAX_THUNKS):
            thunk = struct.unpack_from("<I", data, lookup + 4 * j)[0] if lookup + 4 * j + 4 <= len(data) else None
            if thunk is None:
                raise MalformedImportDirectory(f"lookup table of {dll} runs past end of file")
            if thunk == 0:
                break
            if thunk & ORDINAL_FLAG:
                hint = thunk & 0xFFFF
                name = f"ORD#{hint}"
            else:
                hn = sections.offset(thunk & 0x7FFFFFFF, "hint/name entry")
                hint = _u16(data, hn, "hint")
                name = _cstring(data, hn + 2, f"import name in {dll}")
            entries.append(ImportEntry(dll, name, hint, ft + 4 * j))
        else:
            raise MalformedImportDirectory(f"lookup table of {dll} is not terminated")
    else:
        raise MalformedImportDirectory("import descriptor array is not terminated")
    return ImportTable(image_base, entries)


def resolve_call_target(call_addr: int, table: ImportTable) -> str | None:
    """Name the import whose IAT slot sits at absolute address ``call_addr``."""
    rva = call_addr - table.image_base
    if rva < 0:
        return None
    entry = table.by_rva.get(rva)
    return entry.api_name if entry else None


@dataclass(frozen=True)
class ApiDatabase:
    names: frozenset[str]

    def __post_init__(self):
        if not self.names:
            raise ValueError("API database is empty")

    def __contains__(self, name) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "ApiDatabase":
        names = set()
        for line in lines:
            line = line.split("#", 1)[0].strip()
            if line:
                names.add(line)
        return cls(frozenset(names))

    @classmethod
    def load(cls, path) -> "ApiDatabase":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(f)

    @classmethod
    def default(cls) -> "ApiDatabase":
        text = resources.files("apiseq").joinpath("data/api_names.txt").read_text(encoding="utf-8")
        return cls.from_lines(text.splitlines())


def filter_known(name: str, db: ApiDatabase) -> bool:
    return bool(name) and name in db
