"""Verifiable evaluation metrics: distance-based bonding, stability, total
variation and kernel discrepancy over pairwise distances, composition match.

Bonding assigns, per atom pair, the bond order whose reference window contains
the pairwise distance; when windows of several orders overlap, the lowest
order wins (conservative, deterministic).  An atom is stable when its summed
bond order lies in the element's allowed valence set; a molecule is stable
when all of its atoms are.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InvalidInputError
from .geometry import pairwise_distances
from .molecules import AtomVocabulary, MoleculeRecord

__all__ = [
    "BondTable", "ValenceRules", "load_default_bond_table", "load_default_valences",
    "infer_bonds", "stability", "batch_stability", "total_variation_atoms",
    "histogram_tv", "size_tv", "mmd_pairwise_distances", "pooled_pairwise_distances",
    "composition_match", "matching_rate",
]


@dataclass(frozen=True)
class BondTable:
    """Symmetric (element, element, order) -> (reference distance, margin) lookup."""

    windows: dict

    @classmethod
    def from_text(cls, text: str) -> "BondTable":
        windows: dict = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 5:
                raise InvalidInputError(f"bond table line {line_no}: expected 5 columns")
            e1, e2, order, ref, margin = parts[0], parts[1], int(parts[2]), float(parts[3]), float(parts[4])
            if ref <= 0 or margin < 0:
                raise InvalidInputError(f"bond table line {line_no}: bad distance/margin")
            key = (min(e1, e2), max(e1, e2))
            windows.setdefault(key, []).append((order, ref, margin))
        for key in windows:
            windows[key] = sorted(windows[key])  # ascending order => lowest wins on ties
        return cls(windows=windows)

    def orders_for(self, e1: str, e2: str):
        return self.windows.get((min(e1, e2), max(e1, e2)), [])


@dataclass(frozen=True)
class ValenceRules:
    allowed: dict  # element -> frozenset of valences

    @classmethod
    def from_text(cls, text: str) -> "ValenceRules":
        allowed: dict = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise InvalidInputError(f"valence file line {line_no}: expected 'element v1[,v2..]'")
            allowed[parts[0]] = frozenset(int(v) for v in parts[1].split(","))
        return cls(allowed=allowed)


def _data_text(name: str) -> str:
    return resources.files("equigen.data").joinpath(name).read_text(encoding="utf-8")


def load_default_bond_table() -> BondTable:
    return BondTable.from_text(_data_text("bond_table.txt"))


def load_default_valences() -> ValenceRules:
    return ValenceRules.from_text(_data_text("valences.txt"))


def infer_bonds(rec: MoleculeRecord, table: BondTable, vocab: AtomVocabulary):
    """All inferred bonds ``(i, j, order)`` with i < j, plus per-atom valences."""
    m = rec.node_count
    valence = np.zeros(m, dtype=np.int64)
    bonds = []
    for i in range(m):
        for j in range(i + 1, m):
            d = float(np.linalg.norm(rec.positions[i] - rec.positions[j]))
            e1 = vocab.symbols[int(rec.elements[i])]
            e2 = vocab.symbols[int(rec.elements[j])]
            for order, ref, margin in table.orders_for(e1, e2):
                if abs(d - ref) <= margin:
                    bonds.append((i, j, order))
                    valence[i] += order
                    valence[j] += order
                    break
    return bonds, valence


def stability(rec: MoleculeRecord, table: BondTable, rules: ValenceRules,
              vocab: AtomVocabulary):
    """(fraction of stable atoms, whole-molecule stability flag)."""
    _, valence = infer_bonds(rec, table, vocab)
    stable = 0
    for i in range(rec.node_count):
        sym = vocab.symbols[int(rec.elements[i])]
        if sym not in rules.allowed:
            raise InvalidInputError(f"no valence rule for element '{sym}'")
        stable += int(valence[i]) in rules.allowed[sym]
    return stable / rec.node_count, stable == rec.node_count


def batch_stability(records, table: BondTable, rules: ValenceRules, vocab: AtomVocabulary):
    """(mean atom-stable fraction over atoms pooled, molecule-stable rate)."""
    if not records:
        raise InvalidInputError("no records to evaluate")
    atoms_total, atoms_stable, mols_stable = 0, 0.0, 0
    for rec in records:
        frac, whole = stability(rec, table, rules, vocab)
        atoms_total += rec.node_count
        atoms_stable += frac * rec.node_count
        mols_stable += whole
    return atoms_stable / atoms_total, mols_stable / len(records)


# --- distribution metrics ------------------------------------------------------

def total_variation_atoms(generated, reference, vocab: AtomVocabulary) -> float:
    """Mean absolute difference between normalized atom-type histograms."""
    def hist(records):
        counts = np.zeros(len(vocab))
        for rec in records:
            counts += np.bincount(rec.elements, minlength=len(vocab))
        total = counts.sum()
        if total == 0:
            raise InvalidInputError("empty record set")
        return counts / total

    return float(np.abs(hist(generated) - hist(reference)).mean())


def histogram_tv(samples_a, samples_b, bins) -> float:
    """Total variation distance between histograms of two scalar samples."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("empty sample set")
    pa, _ = np.histogram(a, bins=bins)
    pb, _ = np.histogram(b, bins=bins)
    return 0.5 * float(np.abs(pa / pa.sum() - pb / pb.sum()).sum())


def size_tv(sizes_a, sizes_b) -> float:
    """Total variation distance between two integer size distributions."""
    a = np.asarray(sizes_a, dtype=np.int64)
    b = np.asarray(sizes_b, dtype=np.int64)
    hi = int(max(a.max(), b.max()))
    pa = np.bincount(a, minlength=hi + 1) / a.size
    pb = np.bincount(b, minlength=hi + 1) / b.size
    return 0.5 * float(np.abs(pa - pb).sum())


def pooled_pairwise_distances(records, cap: int | None = None,
                              rng: np.random.Generator | None = None) -> np.ndarray:
    """All pairwise distances pooled over records (optionally subsampled)."""
    parts = [pairwise_distances(rec.positions) for rec in records if rec.node_count > 1]
    if not parts:
        raise InvalidInputError("no pairwise distances available")
    pooled = np.concatenate(parts)
    if cap is not None and pooled.size > cap:
        rng = rng or np.random.default_rng(0)
        pooled = pooled[rng.choice(pooled.size, size=cap, replace=False)]
    return pooled


def mmd_pairwise_distances(generated, reference,
                           bandwidths=(0.1, 0.2, 0.5, 1.0),
                           cap: int = 2000) -> float:
    """Unbiased multi-bandwidth Gaussian-kernel MMD^2 over pooled pairwise distances."""
    x = pooled_pairwise_distances(generated, cap=cap)
    y = pooled_pairwise_distances(reference, cap=cap)
    return mmd_squared(x, y, bandwidths)


def mmd_squared(x: np.ndarray, y: np.ndarray, bandwidths=(0.1, 0.2, 0.5, 1.0)) -> float:
    """Unbiased MMD^2 between two 1-d samples, Gaussian kernels summed over bandwidths."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, m = x.size, y.size
    if n < 2 or m < 2:
        raise InvalidInputError("need at least two points per sample for unbiased MMD")

    def ksum(a, b, same: bool) -> float:
        d2 = (a[:, None] - b[None, :]) ** 2
        total = 0.0
        for bw in bandwidths:
            k = np.exp(-d2 / (2.0 * bw * bw))
            if same:
                total += k.sum() - np.trace(k)
            else:
                total += k.sum()
        return float(total)

    return (ksum(x, x, True) / (n * (n - 1))
            + ksum(y, y, True) / (m * (m - 1))
            - 2.0 * ksum(x, y, False) / (n * m))


# --- composition -----------------------------------------------------------------

def composition_match(rec: MoleculeRecord, counts, vocab: AtomVocabulary) -> bool:
    """True iff the record realizes exactly the requested per-type counts."""
    want = np.asarray(counts, dtype=np.int64)
    if want.shape != (len(vocab),):
        raise InvalidInputError("composition vector length must match the vocabulary")
    have = np.bincount(rec.elements, minlength=len(vocab)).astype(np.int64)
    return bool(np.array_equal(have, want))


def matching_rate(records, conditions, vocab: AtomVocabulary) -> float:
    """Fraction of records matching their per-record target compositions."""
    if len(records) != len(conditions):
        raise InvalidInputError("one composition per record required")
    if not records:
        raise InvalidInputError("no records to evaluate")
    hits = sum(composition_match(r, c, vocab) for r, c in zip(records, conditions))
    return hits / len(records)
