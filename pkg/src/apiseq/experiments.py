"""Desk-scale experiments on the synthetic corpus.

* :func:`family_trend` trains each family's class database with 1, 2, then 3
  variants and reports per-family detection of the held-out variants.
* :func:`cumulative_phases` runs fresh test waves against databases that
  grow by each finished wave, misdetections included.
* :func:`coefficient_sweep` produces the TPR/FPR matrix over coefficients
  and gram sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .classify import (Coefficient, Label, LabeledSet, PhaseReport, TverskyParams, empty_databases,
                       run_phase, scan, train)
from .corpusgen import FamilySpec, default_families, generate_benign, generate_variant
from .features import GRAM_SIZES, ApiIdMap, gram_set_of_file
from .pipeline import api_paths


@dataclass
class _Sample:
    id: str
    label: Label
    family: str | None
    seqs: list  # API sequences of the paths with at least one call
    _grams: dict = field(default_factory=dict)

    def grams(self, idmap: ApiIdMap, n: int):
        if n not in self._grams:
            self._grams[n] = gram_set_of_file(self.seqs, idmap, n)
        return self._grams[n]

    def labeled(self, idmap: ApiIdMap, n: int) -> LabeledSet:
        return LabeledSet(self.id, self.label, self.grams(idmap, n))


def _sample(sid, label, family, image) -> _Sample:
    return _Sample(sid, label, family, [p.apis for p in api_paths(image) if p.apis])


def _family_samples(spec: FamilySpec, start: int, count: int) -> list[_Sample]:
    return [_sample(f"{spec.name}-{i}", spec.label, spec.name, generate_variant(spec, i))
            for i in range(start, start + count)]


def _benign_samples(count: int, seed: int, families, tag: str) -> list[_Sample]:
    return [_sample(f"benign{tag}-{i}", Label.BENIGN, None, img)
            for i, img in enumerate(generate_benign(count, seed, families))]


def family_trend(seed: int = 0, n: int = 3, coefficient=Coefficient.DICE, margin: float = 0.0,
                 benign_train: int = 150, max_train: int = 3,
                 families: list[FamilySpec] | None = None) -> dict[str, list[float]]:
    """Per-family detection rate of held-out variants vs. training-set size."""
    specs = families or default_families(seed)
    idmap = ApiIdMap.seeded()
    samples = {s.name: _family_samples(s, 0, s.variant_count) for s in specs}
    benign = _benign_samples(benign_train, seed, specs, "")
    rates = {s.name: [] for s in specs}
    for k in range(1, max_train + 1):
        dbs = empty_databases(n)
        dbs[Label.BENIGN] = train([b.grams(idmap, n) for b in benign], Label.BENIGN, n=n)
        for spec in specs:
            dbs[spec.label] = train([x.grams(idmap, n) for x in samples[spec.name][:k]],
                                    spec.label, dbs[spec.label])
        for spec in specs:
            held_out = samples[spec.name][max_train:]
            hits = sum(scan(x.grams(idmap, n), dbs, coefficient, margin=margin)[1].malicious for x in held_out)
            rates[spec.name].append(hits / len(held_out) if held_out else 0.0)
    return rates


def cumulative_phases(seed: int = 0, phases: int = 3, n: int = 3, coefficient=Coefficient.DICE,
                      margin: float = 0.0, train_per_family: int = 1, wave_per_family: int = 30,
                      benign_train: int = 150, benign_wave: int = 60):
    """Phase 0 training, then ``phases`` fresh test waves.

    Misdetections of a wave are folded back by ``run_phase`` itself; the
    rest of the wave joins the training data at the start of the next phase,
    so the learning set grows by one whole wave per phase.  Returns the
    phase reports, the final databases and the fed-back items.
    """
    specs = default_families(seed)
    idmap = ApiIdMap.seeded()
    dbs = empty_databases(n)
    initial = [x for s in specs for x in _family_samples(s, 0, train_per_family)]
    initial += _benign_samples(benign_train, seed, specs, "0")
    _, dbs = run_phase([x.labeled(idmap, n) for x in initial], [], dbs, coefficient, margin=margin, phase=0)
    reports: list[PhaseReport] = []
    fed_back: list[LabeledSet] = []
    carry: list[LabeledSet] = []
    for p in range(1, phases + 1):
        wave = [x for s in specs for x in _family_samples(s, 1000 * p, wave_per_family)]
        wave += _benign_samples(benign_wave, seed + 7919 * p, specs, str(p))
        items = [x.labeled(idmap, n) for x in wave]
        report, dbs = run_phase(carry, items, dbs, coefficient, margin=margin, phase=p)
        missed = set(report.misdetected_malware) | set(report.misdetected_benign)
        fed_back += [it for it in items if it.id in missed]
        carry = [it for it in items if it.id not in missed]
        reports.append(report)
    return reports, dbs, fed_back


def coefficient_sweep(seed: int = 0, margin: float = 0.0, train_per_family: int = 3,
                      test_per_family: int = 15, benign_train: int = 150, benign_test: int = 60,
                      params: TverskyParams | None = None) -> dict:
    """TPR/FPR for every (coefficient, n) pair on one train/test split."""
    specs = default_families(seed)
    idmap = ApiIdMap.seeded()
    train_set = [x for s in specs for x in _family_samples(s, 0, train_per_family)]
    train_set += _benign_samples(benign_train, seed, specs, "tr")
    test_set = [x for s in specs for x in _family_samples(s, 500, test_per_family)]
    test_set += _benign_samples(benign_test, seed + 104729, specs, "te")
    malware = sum(x.label.is_malware for x in test_set)
    benign = len(test_set) - malware
    matrix = {}
    for n in GRAM_SIZES:
        dbs = empty_databases(n)
        for label in Label:
            batch = [x.grams(idmap, n) for x in train_set if x.label is label]
            if batch:
                dbs[label] = train(batch, label, n=n)
        for coef in Coefficient:
            tp = fp = 0
            for x in test_set:
                v = scan(x.grams(idmap, n), dbs, coef, params, margin)[1]
                if v.malicious:
                    tp += x.label.is_malware
                    fp += not x.label.is_malware
            matrix[f"{coef.value}/{n}"] = {"coefficient": coef.value, "n": n,
                                           "tpr": tp / malware, "fpr": fp / benign}
    return {
        "seed": seed,
        "margin": margin,
        "malware_tested": malware,
        "benign_tested": benign,
        "random_guess_tpr": 0.5,
        "results": matrix,
    }
