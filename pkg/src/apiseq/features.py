"""API-id n-grams and the per-file set representation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

GRAM_SIZES = (2, 3, 4)

# seed assignments for the id map (ids 1..12)
SEED_APIS = (
    "ReadFile", "WriteFile", "CloseFile", "OpenFile", "CreateFile", "CreateProcess",
    "GetProcAddress", "VirtualAlloc", "VirtualAllocEx", "FindFirstFile", "FindNextFile",
    "LoadLibrary",
)

Gram = tuple[int, ...]


class FrozenMapError(KeyError):
    pass


class ApiIdMap:
    """Bijection between API names and dense positive ids, in insertion order."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        self.frozen = False
        for name in names:
            self.id_of(name)

    @classmethod
    def seeded(cls) -> "ApiIdMap":
        return cls(SEED_APIS)

    def id_of(self, name: str) -> int:
        """Id for ``name``, assigning the next id if it is new."""
        api_id = self._ids.get(name)
        if api_id is None:
            if self.frozen:
                raise FrozenMapError(name)
            self._names.append(name)
            api_id = self._ids[name] = len(self._names)
        return api_id

    def __getitem__(self, name: str) -> int:
        return self._ids[name]

    def name_of(self, api_id: int) -> str:
        if api_id < 1:
            raise KeyError(api_id)
        return self._names[api_id - 1]

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, ApiIdMap) and self._names == other._names

    def copy(self) -> "ApiIdMap":
        m = ApiIdMap(self._names)
        return m

    def freeze(self) -> "ApiIdMap":
        self.frozen = True
        return self

    def to_text(self) -> str:
        return "".join(f"{i} {name}\n" for i, name in enumerate(self._names, 1))

    @classmethod
    def from_text(cls, text: str) -> "ApiIdMap":
        m = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            api_id, name = line.split(None, 1)
            if m.id_of(name.strip()) != int(api_id):
                raise ValueError(f"line {lineno}: ids must be dense and in order")
        return m

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ApiIdMap":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def _check_n(n: int) -> None:
    if n not in GRAM_SIZES:
        raise ValueError(f"gram size must be one of {GRAM_SIZES}, got {n}")


def grams_of(seq: Sequence[int], n: int) -> list[Gram]:
    """Overlapping windows of ``seq`` with stride 1."""
    _check_n(n)
    seq = tuple(seq)
    return [seq[i:i + n] for i in range(len(seq) - n + 1)]


@dataclass(frozen=True)
class NGramSet:
    n: int
    grams: frozenset
    source_path_count: int = 0
    total_gram_occurrences: int = 0

    def __len__(self) -> int:
        return len(self.grams)


def gram_set_of_file(paths, idmap: ApiIdMap, n: int) -> NGramSet:
    """Union of the n-grams of every path; grams never span two paths.

    ``paths`` may hold ApiPath objects or plain name sequences.  Names
    missing from ``idmap`` are added to it.
    """
    _check_n(n)
    grams: set[Gram] = set()
    total = 0
    count = 0
    for p in paths:
        names = getattr(p, "apis", p)
        count += 1
        g = grams_of([idmap.id_of(a) for a in names], n)
        total += len(g)
        grams.update(g)
    return NGramSet(n, frozenset(grams), count, total)


def dump_grams(grams: Iterable[Gram]) -> str:
    return "".join(",".join(map(str, g)) + "\n" for g in sorted(grams))


def load_grams(text: str) -> list[Gram]:
    return [tuple(int(x) for x in line.split(",")) for line in text.splitlines() if line.strip()]
