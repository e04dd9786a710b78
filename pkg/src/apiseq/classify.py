"""Per-class n-gram databases, set similarity coefficients and verdicts."""

from __future__ import annotations

import enum
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .features import ApiIdMap, NGramSet


class Label(enum.Enum):
    VIRUS = "Virus"
    TROJAN = "Trojan"
    BACKDOOR = "Backdoor"
    ADWARE = "Adware"
    WORM = "Worm"
    BENIGN = "Benign"

    @property
    def is_malware(self) -> bool:
        return self is not Label.BENIGN


# order also breaks score ties between malware classes
MALWARE_LABELS = (Label.VIRUS, Label.TROJAN, Label.BACKDOOR, Label.ADWARE, Label.WORM)


class Coefficient(enum.Enum):
    DICE = "dice"
    TVERSKY = "tversky"
    COSINE = "cosine"


class Decision(enum.Enum):
    BENIGN = "Benign"
    MALICIOUS = "Malicious"


class ClassifyError(ValueError):
    pass


class GramSizeMismatch(ClassifyError):
    pass


class LabelMismatch(ClassifyError):
    pass


class MissingBenignDb(ClassifyError):
    pass


# --- coefficients --------------------------------------------------------------

def _overlap(x, y) -> tuple[int, int, int]:
    """(|X∩Y|, |X−Y|, |Y−X|) for two n-gram carriers of equal gram size."""
    if x.n != y.n:
        raise GramSizeMismatch(f"cannot compare {x.n}-grams with {y.n}-grams")
    gx, gy = x.grams, y.grams
    if len(gx) > len(gy):
        inter = sum(1 for g in gy if g in gx)
    else:
        inter = sum(1 for g in gx if g in gy)
    return inter, len(gx) - inter, len(gy) - inter


def dice(x, y) -> float:
    inter, a, b = _overlap(x, y)
    denom = 2 * inter + a + b
    return 2 * inter / denom if denom else 0.0


class TverskyMode(enum.Enum):
    DIFFERENCE_WEIGHTED = "difference"
    CONSTANTS = "constants"


@dataclass(frozen=True)
class TverskyParams:
    """Weights for the Tversky index.

    ``DIFFERENCE_WEIGHTED`` derives the weights from the two set differences:
    alpha is the smaller of |X−Y| and |Y−X|, beta the larger.
    ``CONSTANTS`` uses ``alpha``/``beta`` as given (the standard index).
    """

    mode: TverskyMode = TverskyMode.DIFFERENCE_WEIGHTED
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mode", TverskyMode(self.mode))
        if self.mode is TverskyMode.CONSTANTS:
            if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
                raise ValueError("Tversky constants must be non-negative with positive sum")

    def weights(self, x_only: int, y_only: int) -> tuple[float, float]:
        if self.mode is TverskyMode.DIFFERENCE_WEIGHTED:
            return float(min(x_only, y_only)), float(max(x_only, y_only))
        return self.alpha, self.beta


def tversky(x, y, params: TverskyParams | None = None) -> float:
    params = params or TverskyParams()
    inter, a, b = _overlap(x, y)
    alpha, beta = params.weights(a, b)
    denom = inter + alpha * a + beta * b
    return inter / denom if denom else 0.0


def cosine(x, y) -> float:
    inter, a, b = _overlap(x, y)
    if not inter:
        return 0.0
    return 2 * inter / math.sqrt((2 * inter + a) * (2 * inter + b))


def similarity(coef: Coefficient | str, x, y, params: TverskyParams | None = None) -> float:
    coef = Coefficient(coef)
    if coef is Coefficient.DICE:
        return dice(x, y)
    if coef is Coefficient.TVERSKY:
        return tversky(x, y, params)
    return cosine(x, y)


# --- databases -----------------------------------------------------------------

@dataclass
class ClassDatabase:
    label: Label
    n: int
    grams: set = field(default_factory=set)
    sample_count: int = 0
    # number of training files in which each gram occurred
    counts: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.grams)

    def copy(self) -> "ClassDatabase":
        return ClassDatabase(self.label, self.n, set(self.grams), self.sample_count, Counter(self.counts))

    def to_text(self) -> str:
        lines = [f"{self.label.value} {self.n} {self.sample_count}"]
        lines += [f"{','.join(map(str, g))} {self.counts.get(g, 0)}" for g in sorted(self.grams)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClassDatabase":
        head, *body = text.splitlines()
        label, n, samples = head.split()
        db = cls(Label(label), int(n), sample_count=int(samples))
        for line in body:
            if not line.strip():
                continue
            gram_txt, count = line.split()
            gram = tuple(int(x) for x in gram_txt.split(","))
            if len(gram) != db.n:
                raise GramSizeMismatch(f"{len(gram)}-gram in a {db.n}-gram database")
            db.grams.add(gram)
            db.counts[gram] = int(count)
        return db


def train(files: Iterable[NGramSet], label: Label | str, existing: ClassDatabase | None = None,
          n: int | None = None) -> ClassDatabase:
    label = Label(label)
    files = list(files)
    if existing is not None:
        if existing.label is not label:
            raise LabelMismatch(f"cannot train {label.value} samples into the {existing.label.value} database")
        db = existing.copy()
    else:
        size = n if n is not None else (files[0].n if files else None)
        if size is None:
            raise ValueError("gram size unknown: pass n or at least one file")
        db = ClassDatabase(label, size)
    for f in files:
        if f.n != db.n:
            raise GramSizeMismatch(f"{f.n}-gram file for a {db.n}-gram database")
        db.grams.update(f.grams)
        db.counts.update(f.grams)
        db.sample_count += 1
    return db


def empty_databases(n: int) -> dict[Label, ClassDatabase]:
    return {label: ClassDatabase(label, n) for label in Label}


def db_filename(label: Label, n: int) -> str:
    return f"{label.value}.{n}.db"


def save_databases(directory, dbs: Mapping[Label, ClassDatabase], idmap: ApiIdMap) -> None:
    os.makedirs(directory, exist_ok=True)
    for label, db in dbs.items():
        with open(os.path.join(directory, db_filename(label, db.n)), "w", encoding="utf-8") as f:
            f.write(db.to_text())
    idmap.save(os.path.join(directory, "apimap.txt"))


def load_databases(directory, n: int) -> tuple[dict[Label, ClassDatabase], ApiIdMap]:
    """Load every (label, n) database in ``directory``; missing ones come back empty."""
    dbs = empty_databases(n)
    for label in Label:
        path = os.path.join(directory, db_filename(label, n))
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                dbs[label] = ClassDatabase.from_text(f.read())
    map_path = os.path.join(directory, "apimap.txt")
    idmap = ApiIdMap.load(map_path) if os.path.exists(map_path) else ApiIdMap()
    return dbs, idmap


# --- scanning ------------------------------------------------------------------

@dataclass
class SimilarityReport:
    scores: dict[Label, dict[Coefficient, float]]

    def of(self, coef: Coefficient) -> dict[Label, float]:
        return {label: s[coef] for label, s in self.scores.items()}


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    family: Label | None
    best_malware_score: float
    benign_score: float
    margin: float
    coefficient: Coefficient
    n: int

    @property
    def malicious(self) -> bool:
        return self.decision is Decision.MALICIOUS


def scan(file: NGramSet, dbs: Mapping[Label, ClassDatabase], coefficient: Coefficient | str = Coefficient.DICE,
         params: TverskyParams | None = None, margin: float = 0.0) -> tuple[SimilarityReport, Verdict]:
    coefficient = Coefficient(coefficient)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if Label.BENIGN not in dbs:
        raise MissingBenignDb("scan needs a Benign database")
    scores = {}
    for label, db in dbs.items():
        scores[label] = {c: similarity(c, file, db, params) for c in Coefficient}
    benign = scores[Label.BENIGN][coefficient]
    best_label, best = None, 0.0
    for label in MALWARE_LABELS:
        if label in scores and (best_label is None or scores[label][coefficient] > best):
            best_label, best = label, scores[label][coefficient]
    malicious = best_label is not None and best > benign + margin
    verdict = Verdict(
        decision=Decision.MALICIOUS if malicious else Decision.BENIGN,
        family=best_label if malicious else None,
        best_malware_score=best,
        benign_score=benign,
        margin=margin,
        coefficient=coefficient,
        n=file.n,
    )
    return SimilarityReport(scores), verdict


def scan_report_json(name: str, report: SimilarityReport, verdict: Verdict) -> dict:
    return {
        "file": name,
        "n": verdict.n,
        "coefficient": verdict.coefficient.value,
        "scores": {label.value: v for label, v in report.of(verdict.coefficient).items()},
        "decision": verdict.decision.value,
        "family": verdict.family.value if verdict.family else None,
        "margin": verdict.margin,
    }


# --- cumulative phases ---------------------------------------------------------

@dataclass(frozen=True)
class LabeledSet:
    id: str
    label: Label
    grams: NGramSet


@dataclass
class PhaseReport:
    phase: int
    detection_rate: float
    false_positive_rate: float
    misdetected_malware: list[str]
    misdetected_benign: list[str]
    db_sizes_before: dict[str, int]
    db_sizes_after: dict[str, int]
    malware_count: int = 0
    benign_count: int = 0
    family_accuracy: float = 0.0

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "detection_rate": self.detection_rate,
            "false_positive_rate": self.false_positive_rate,
            "family_accuracy": self.family_accuracy,
            "malware_count": self.malware_count,
            "benign_count": self.benign_count,
            "misdetected_malware": self.misdetected_malware,
            "misdetected_benign": self.misdetected_benign,
            "db_sizes_before": self.db_sizes_before,
            "db_sizes_after": self.db_sizes_after,
        }


def _add(dbs: dict[Label, ClassDatabase], items: Sequence[LabeledSet], n: int) -> None:
    for label in Label:
        batch = [it.grams for it in items if it.label is label]
        if batch:
            dbs[label] = train(batch, label, dbs.get(label), n=n)


def run_phase(train_adds: Sequence[LabeledSet], test_set: Sequence[LabeledSet],
              dbs: Mapping[Label, ClassDatabase], coefficient: Coefficient | str = Coefficient.DICE,
              params: TverskyParams | None = None, margin: float = 0.0,
              phase: int = 1) -> tuple[PhaseReport, dict[Label, ClassDatabase]]:
    """Add ``train_adds``, scan ``test_set``, then fold misdetections back in."""
    dbs = dict(dbs)
    if Label.BENIGN not in dbs:
        raise MissingBenignDb("phase needs a Benign database")
    n = dbs[Label.BENIGN].n
    before = {label.value: len(db) for label, db in dbs.items()}
    _add(dbs, train_adds, n)

    missed, false_pos = [], []
    malware = benign = detected = flagged = right_family = 0
    for item in test_set:
        _, verdict = scan(item.grams, dbs, coefficient, params, margin)
        if item.label.is_malware:
            malware += 1
            if verdict.malicious:
                detected += 1
                right_family += verdict.family is item.label
            else:
                missed.append(item)
        else:
            benign += 1
            if verdict.malicious:
                flagged += 1
                false_pos.append(item)
    _add(dbs, missed + false_pos, n)
    report = PhaseReport(
        phase=phase,
        detection_rate=detected / malware if malware else 0.0,
        false_positive_rate=flagged / benign if benign else 0.0,
        misdetected_malware=[it.id for it in missed],
        misdetected_benign=[it.id for it in false_pos],
        db_sizes_before=before,
        db_sizes_after={label.value: len(db) for label, db in dbs.items()},
        malware_count=malware,
        benign_count=benign,
        family_accuracy=right_family / detected if detected else 0.0,
    )
    return report, dbs
