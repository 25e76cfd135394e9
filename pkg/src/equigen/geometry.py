"""Geometric primitives: graphs, the zero-CoM subspace, rotations, noise.

Positions are stored as rows (shape ``(..., M, 3)``); a rotation given by the
3x3 matrix ``R`` acts on row-stored positions as ``x @ R.T``.  All molecules
are centered on ingestion and every operation that produces positions keeps
them in the zero center-of-mass subspace, so translations never need to be
tracked explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, NotCenteredError

__all__ = [
    "GeometricGraph", "zero_com_project", "check_centered", "random_rotation",
    "rotate_graph", "sample_invariant_noise", "zero_com_basis", "pairwise_distances",
]

CENTERED_ATOL = 1e-8


def zero_com_project(v):
    """Remove the per-graph mean position: project onto the zero-CoM subspace.

    Accepts arrays or autodiff tensors of shape ``(..., M, 3)`` (any trailing
    width actually works).  Idempotent; commutes with rotations.
    """
    raw = ad.value(v)
    if raw.ndim < 2 or raw.shape[-2] < 1:
        raise InvalidInputError(f"expected (..., M, d) positions, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("non-finite entries in position array")
    return v - ad.mean(v, axis=-2, keepdims=True)


def check_centered(v, atol: float = CENTERED_ATOL, what: str = "positions") -> None:
    """Raise if the column means of ``v`` exceed ``atol`` (relative above unit scale)."""
    raw = ad.value(v)
    if raw.size == 0:
        return
    residual = np.abs(raw.mean(axis=-2)).max()
    scale = max(1.0, float(np.abs(raw).max()))
    if not np.isfinite(residual) or residual > atol * scale:
        raise NotCenteredError(f"{what} not in the zero-CoM subspace (residual {residual:.3e})")


@dataclass(frozen=True)
class GeometricGraph:
    """A molecule-shaped data point: positions ``(M, 3)`` plus invariant features ``(M, D)``.

    ``condition`` optionally carries per-type composition counts (length D).
    Construction centers nothing; use :meth:`centered` to normalize.
    """

    positions: np.ndarray
    features: np.ndarray
    condition: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInputError(f"positions must be (M, 3), got {pos.shape}")
        if feats.ndim != 2 or feats.shape[0] != pos.shape[0]:
            raise InvalidInputError(f"features must be (M, D), got {feats.shape}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(feats))):
            raise InvalidInputError("non-finite entries in graph arrays")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feats)
        if self.condition is not None:
            cond = np.asarray(self.condition)
            object.__setattr__(self, "condition", cond)

    @property
    def node_count(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def centered(self) -> "GeometricGraph":
        return GeometricGraph(zero_com_project(self.positions), self.features, self.condition)

    def is_centered(self, atol: float = 1e-10) -> bool:
        return bool(np.abs(self.positions.mean(axis=0)).max() <= atol)


def random_rotation(rng: np.random.Generator, allow_reflection: bool = True) -> np.ndarray:
    """Draw an orthogonal 3x3 matrix, approximately uniform on the group.

    Construction: QR factorization of a standard Gaussian 3x3 draw with the
    R-diagonal sign fixed (which makes the distribution Haar-uniform).  With
    ``allow_reflection`` the determinant sign is then randomized; otherwise a
    proper rotation (det = +1) is returned.
    """
    g = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if allow_reflection:
        if rng.random() < 0.5:
            q = -q  # -I has determinant -1 in odd dimension
    elif np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotate_graph(rotation: np.ndarray, graph: GeometricGraph) -> GeometricGraph:
    """Rotate/reflect positions; invariant features and condition are untouched."""
    return GeometricGraph(graph.positions @ rotation.T, graph.features, graph.condition)


def sample_invariant_noise(m: int, d: int, rng: np.random.Generator):
    """One rotation-invariant noise draw: ``(eps_pos (M,3), eps_feat (M,D))``.

    Positions are standard normal projected to zero CoM (the subspace Gaussian);
    features are plain i.i.d. standard normal.
    """
    if m < 1:
        raise InvalidInputError("need at least one node")
    eps_pos = rng.standard_normal((m, 3))
    eps_pos = eps_pos - eps_pos.mean(axis=0, keepdims=True)
    eps_feat = rng.standard_normal((m, d))
    return eps_pos, eps_feat


def zero_com_basis(m: int) -> np.ndarray:
    """Orthonormal basis of the zero-CoM subspace, shape ``(3M, 3(M-1))``.

    Built deterministically: Gram-Schmidt over the node-difference vectors
    e_i - e_{i+1} in R^M, then expanded over the three coordinates via a
    Kronecker product.  Flattening convention is row-major over (node, xyz).
    """
    if m < 1:
        raise InvalidInputError("need at least one node")
    diffs = np.zeros((m, m - 1))
    for i in range(m - 1):
        diffs[i, i] = 1.0
        diffs[i + 1, i] = -1.0
    q = np.zeros_like(diffs)
    for i in range(m - 1):
        vec = diffs[:, i].copy()
        for j in range(i):
            vec -= (q[:, j] @ vec) * q[:, j]
        q[:, i] = vec / np.linalg.norm(vec)
    return np.kron(q, np.eye(3))


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Condensed upper-triangle pairwise distances of an ``(M, 3)`` array."""
    pos = np.asarray(positions, dtype=np.float64)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    iu = np.triu_indices(pos.shape[0], k=1)
    return dist[iu]
