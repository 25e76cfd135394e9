"""Molecule ingestion/emission, atom vocabulary, templates and synthetic data.

File format: multi-frame XYZ (count line, comment line, ``symbol x y z`` rows).
Graphs encode atom types as one-hot rows scaled by a configurable factor and
decode by argmax, which tolerates per-channel noise up to half the scale.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import GeometricGraph, random_rotation, zero_com_project

__all__ = [
    "AtomVocabulary", "MoleculeRecord", "SizeDistribution", "DEFAULT_ELEMENTS",
    "parse_xyz", "write_xyz", "encode_graph", "decode_graph", "composition_of",
    "parse_composition", "format_composition", "empirical_size_distribution",
    "TEMPLATES", "template_record", "gen_synthetic",
]

DEFAULT_ELEMENTS = ("H", "C", "N", "O", "F")


@dataclass(frozen=True)
class AtomVocabulary:
    """Ordered element symbols with index maps."""

    symbols: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidInputError("duplicate element symbols in vocabulary")

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise InvalidInputError(f"element '{symbol}' not in vocabulary {self.symbols}") from None

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.symbols


@dataclass
class MoleculeRecord:
    """A decoded molecule: element indices, raw positions, optional provenance."""

    elements: np.ndarray   # (M,) int indices into the vocabulary
    positions: np.ndarray  # (M, 3)
    tag: str = ""

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.shape != (self.elements.shape[0], 3):
            raise InvalidInputError("positions and element list disagree on atom count")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("non-finite coordinates in molecule record")

    @property
    def node_count(self) -> int:
        return int(self.elements.shape[0])


# --- XYZ ----------------------------------------------------------------------

def parse_xyz(text: str, vocab: AtomVocabulary | None = None) -> list[MoleculeRecord]:
    """Parse every frame of a multi-frame XYZ string; strict but whitespace-tolerant."""
    vocab = vocab or AtomVocabulary(DEFAULT_ELEMENTS)
    lines = text.splitlines()
    records: list[MoleculeRecord] = []
    i = 0
    frame = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():  # tolerate blank separator lines
            i += 1
            continue
        try:
            count = int(lines[i].strip())
        except ValueError:
            raise InvalidInputError(f"line {i + 1}: malformed atom count '{lines[i].strip()}'")
        if count < 1:
            raise InvalidInputError(f"line {i + 1}: frame {frame} declares {count} atoms")
        if i + 1 + count >= n + 1:
            raise InvalidInputError(f"frame {frame}: expected {count} atom rows, file ends early")
        tag = lines[i + 1].strip() if i + 1 < n else ""
        elements = np.zeros(count, dtype=np.int64)
        coords = np.zeros((count, 3))
        for row in range(count):
            line_no = i + 2 + row
            if line_no >= n or not lines[line_no].strip():
                raise InvalidInputError(f"frame {frame}: expected {count} atom rows, "
                                        f"found {row} (line {line_no + 1})")
            parts = lines[line_no].split()
            if len(parts) < 4:
                raise InvalidInputError(f"line {line_no + 1}: expected 'symbol x y z'")
            symbol = parts[0]
            if symbol not in vocab:
                raise InvalidInputError(f"line {line_no + 1}: unknown element '{symbol}'")
            elements[row] = vocab.index(symbol)
            try:
                coords[row] = [float(parts[1]), float(parts[2]), float(parts[3])]
            except ValueError:
                raise InvalidInputError(f"line {line_no + 1}: non-numeric coordinate")
        records.append(MoleculeRecord(elements, coords, tag))
        i += 2 + count
        frame += 1
    return records


def write_xyz(records, vocab: AtomVocabulary | None = None) -> str:
    """Serialize records as multi-frame XYZ with 6-decimal coordinates."""
    vocab = vocab or AtomVocabulary(DEFAULT_ELEMENTS)
    out = io.StringIO()
    for k, rec in enumerate(records):
        out.write(f"{rec.node_count}\n")
        out.write(f"{rec.tag or f'frame {k}'}\n")
        for e, (x, y, z) in zip(rec.elements, rec.positions):
            out.write(f"{vocab.symbols[int(e)]} {x:.6f} {y:.6f} {z:.6f}\n")
    return out.getvalue()


# --- graph encoding -------------------------------------------------------------

def encode_graph(rec: MoleculeRecord, vocab: AtomVocabulary,
                 scale: float = 0.25, condition: bool = False) -> GeometricGraph:
    """Centered graph with scale * one-hot features (optionally carrying its composition)."""
    if np.any(rec.elements < 0) or np.any(rec.elements >= len(vocab)):
        raise InvalidInputError("element index outside vocabulary")
    feats = np.zeros((rec.node_count, len(vocab)))
    feats[np.arange(rec.node_count), rec.elements] = scale
    cond = composition_of(rec, vocab) if condition else None
    return GeometricGraph(zero_com_project(rec.positions), feats, cond)


def decode_graph(positions, features, vocab: AtomVocabulary, tag: str = "") -> MoleculeRecord:
    """Argmax the type block back to element indices."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[1] < len(vocab):
        raise InvalidInputError("feature width smaller than vocabulary")
    elements = np.argmax(feats[:, :len(vocab)], axis=1)
    return MoleculeRecord(elements, np.asarray(positions, dtype=np.float64), tag)


def composition_of(rec: MoleculeRecord, vocab: AtomVocabulary) -> np.ndarray:
    """Per-type atom counts, length D."""
    return np.bincount(rec.elements, minlength=len(vocab)).astype(np.int64)


def parse_composition(prompt: str, vocab: AtomVocabulary) -> np.ndarray:
    """Parse a formula like ``C3H8O`` into counts (1-based default count)."""
    counts = np.zeros(len(vocab), dtype=np.int64)
    i = 0
    if not prompt:
        raise InvalidInputError("empty composition prompt")
    while i < len(prompt):
        if not prompt[i].isalpha() or not prompt[i].isupper():
            raise InvalidInputError(f"composition prompt: unexpected character '{prompt[i]}'")
        sym = prompt[i]
        i += 1
        if i < len(prompt) and prompt[i].islower():
            sym += prompt[i]
            i += 1
        digits = ""
        while i < len(prompt) and prompt[i].isdigit():
            digits += prompt[i]
            i += 1
        if sym not in vocab:
            raise InvalidInputError(f"composition prompt: unknown element '{sym}'")
        counts[vocab.index(sym)] += int(digits) if digits else 1
    if counts.sum() <= 0:
        raise InvalidInputError("composition prompt contains no atoms")
    return counts


def format_composition(counts, vocab: AtomVocabulary) -> str:
    parts = []
    for sym, c in zip(vocab.symbols, np.asarray(counts, dtype=np.int64)):
        if c > 0:
            parts.append(f"{sym}{int(c)}" if c > 1 else sym)
    return "".join(parts)


# --- size distribution -----------------------------------------------------------

@dataclass
class SizeDistribution:
    """Normalized histogram over molecule sizes, with sampling support."""

    sizes: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "SizeDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size == 0:
            raise InvalidInputError("empty dataset has no size distribution")
        values, freq = np.unique(counts, return_counts=True)
        return cls(sizes=values, probs=freq / freq.sum())

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.sizes, p=self.probs))

    def prob_of(self, size: int) -> float:
        hit = np.nonzero(self.sizes == size)[0]
        return float(self.probs[hit[0]]) if hit.size else 0.0


def empirical_size_distribution(records) -> SizeDistribution:
    return SizeDistribution.from_counts([r.node_count for r in records])


# --- templates and synthetic data --------------------------------------------------

def _tetrahedron(edge: float) -> np.ndarray:
    base = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    return base * (edge / (2.0 * math.sqrt(2.0)))


def _pyramid(bond: float, angle_deg: float) -> np.ndarray:
    # apex atom at the top, three legs below (ammonia-like)
    angle = math.radians(angle_deg)
    sin_theta = math.sqrt((1.0 - math.cos(angle)) / 1.5)
    cos_theta = math.sqrt(1.0 - sin_theta**2)
    pts = [np.zeros(3)]
    for k in range(3):
        a = 2.0 * math.pi * k / 3.0
        pts.append(np.array([bond * sin_theta * math.cos(a),
                             bond * sin_theta * math.sin(a),
                             -bond * cos_theta]))
    return np.stack(pts)


def _bent(bond: float, angle_deg: float) -> np.ndarray:
    half = math.radians(angle_deg) / 2.0
    return np.stack([np.zeros(3),
                     np.array([bond * math.sin(half), bond * math.cos(half), 0.0]),
                     np.array([-bond * math.sin(half), bond * math.cos(half), 0.0])])


def _zigzag(bonds, angle_deg: float) -> np.ndarray:
    # planar chain with the given bond lengths and constant bond angle
    half = math.radians(180.0 - angle_deg) / 2.0
    pts = [np.zeros(3)]
    sign = 1.0
    for length in bonds:
        step = np.array([math.cos(half) * length, sign * math.sin(half) * length, 0.0])
        pts.append(pts[-1] + step)
        sign = -sign
    return np.stack(pts)


def _hexagon(side: float) -> np.ndarray:
    pts = []
    for k in range(6):
        a = math.pi * k / 3.0
        pts.append(np.array([side * math.cos(a), side * math.sin(a), 0.0]))
    return np.stack(pts)


def _methane(bond: float) -> np.ndarray:
    dirs = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    return np.vstack([np.zeros(3), dirs / math.sqrt(3.0) * bond])


TEMPLATES: dict = {
    # name: (element symbols, centered positions)
    "tetra": (("C", "H", "H", "H"), _tetrahedron(1.09)),
    "pyramid": (("N", "H", "H", "H"), _pyramid(1.01, 107.0)),
    "bent3": (("O", "H", "H"), _bent(0.96, 104.5)),
    "chain5": (("C", "C", "C", "C", "O"), _zigzag([1.54, 1.54, 1.54, 1.43], 112.0)),
    "methane": (("C", "H", "H", "H", "H"), _methane(1.09)),
    "ring6": (("C",) * 6, _hexagon(1.39)),
}


def template_record(name: str, vocab: AtomVocabulary | None = None) -> MoleculeRecord:
    vocab = vocab or AtomVocabulary(DEFAULT_ELEMENTS)
    if name not in TEMPLATES:
        raise InvalidInputError(f"unknown template '{name}' (have {sorted(TEMPLATES)})")
    symbols, pos = TEMPLATES[name]
    elements = np.array([vocab.index(s) for s in symbols], dtype=np.int64)
    centered = pos - pos.mean(axis=0, keepdims=True)
    return MoleculeRecord(elements, centered, tag=name)


def gen_synthetic(template_names, jitter: float, count: int,
                  rng: np.random.Generator, vocab: AtomVocabulary | None = None):
    """Dataset of randomly rotated/reflected, jittered, recentered templates.

    The resulting distribution is invariant under the full orthogonal group by
    construction, which is what the distribution-recovery checks rely on.
    """
    vocab = vocab or AtomVocabulary(DEFAULT_ELEMENTS)
    if count < 1:
        raise InvalidInputError("count must be positive")
    bases = [template_record(n, vocab) for n in template_names]
    records = []
    for _ in range(count):
        base = bases[int(rng.integers(0, len(bases)))]
        rot = random_rotation(rng, allow_reflection=True)
        pos = base.positions @ rot.T
        if jitter > 0:
            pos = pos + rng.standard_normal(pos.shape) * jitter
        pos = pos - pos.mean(axis=0, keepdims=True)
        records.append(MoleculeRecord(base.elements.copy(), pos, tag=base.tag))
    return records
