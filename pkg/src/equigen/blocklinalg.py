"""Closed-form linear algebra for per-node 3x3 block transforms in ambient space.

The position transform acts on centered ``(M, 3)`` arrays as

    apply(blocks, eps) = project(blockwise 3x3 action on eps),

which equals the full ambient operator ``P B + (1/M) T T^T`` on zero-CoM input
(``P`` the zero-CoM projector, ``T`` the stacked-identity translation frame).
Determinants restricted to the subspace follow the matrix determinant lemma,

    logdet = sum_m log|det B_m| + log|det V|,   V = mean_m inverse(B_m),

and the inverse action follows the Woodbury identity: subtract the shared
3-vector shift ``c = V^{-1} mean_m[(B^{-1} - I) z]_m`` and apply the blockwise
inverses.  Everything is written with closed-form adjugates (no iterative
solver) and works on plain arrays or autodiff tensors with leading batch dims.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, SingularBlockError, SingularTransformError
from .geometry import check_centered, zero_com_project

__all__ = [
    "det3", "inv3", "block3_inverse", "ambient_apply", "ambient_logdet",
    "ambient_inverse_apply", "feature_logdet_inv", "DET_TOL",
]

DET_TOL = 1e-12


def _entries(b):
    return [b[..., i, j] for i in range(3) for j in range(3)]


def _assemble33(rows):
    # rows: 9 arrays of shape (...,) in row-major order -> (..., 3, 3)
    cols = [ad.reshape(r, ad.value(r).shape + (1,)) for r in rows]
    flat = ad.concat(cols, axis=-1)
    return ad.reshape(flat, ad.value(flat).shape[:-1] + (3, 3))


def det3(b):
    """Determinant of ``(..., 3, 3)`` blocks, closed form."""
    a, b01, c, d, e, f, g, h, i = _entries(b)
    return a * (e * i - f * h) - b01 * (d * i - f * g) + c * (d * h - e * g)


def _check_block_dets(dets: np.ndarray, tol: float = DET_TOL) -> None:
    bad = np.abs(dets) <= tol
    if np.any(bad):
        flat_idx = int(np.argmax(bad.reshape(-1)))
        node = flat_idx % dets.shape[-1] if dets.ndim else 0
        raise SingularBlockError(node, float(np.asarray(dets).reshape(-1)[flat_idx]))


def inv3(b, check: bool = True):
    """Adjugate-over-determinant inverse of ``(..., 3, 3)`` blocks."""
    a, b01, c, d, e, f, g, h, i = _entries(b)
    det = a * (e * i - f * h) - b01 * (d * i - f * g) + c * (d * h - e * g)
    if check:
        _check_block_dets(np.atleast_1d(ad.value(det)))
    adj = [
        e * i - f * h, c * h - b01 * i, b01 * f - c * e,
        f * g - d * i, a * i - c * g, c * d - a * f,
        d * h - e * g, b01 * g - a * h, a * e - b01 * d,
    ]
    inv_det = 1.0 / det
    scaled = [entry * inv_det for entry in adj]
    return _assemble33(scaled)


def block3_inverse(block, node_index: int = 0):
    """Closed-form inverse of a single 3x3 block; errors on |det| <= 1e-12."""
    raw = ad.value(block)
    if raw.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected a 3x3 block, got shape {raw.shape}")
    det = float(np.asarray(ad.value(det3(block))))
    if abs(det) <= DET_TOL:
        raise SingularBlockError(node_index, det)
    return inv3(block, check=False)


def _blockwise(blocks, vecs):
    # (..., M, 3, 3) x (..., M, 3) -> (..., M, 3), treating rows as column vectors
    return ad.einsum("...mij,...mj->...mi", blocks, vecs)


def ambient_apply(blocks, eps):
    """Apply the block transform to centered noise; output is centered.

    ``eps`` must lie in the zero-CoM subspace (checked to 1e-8); the ambient
    CoM-restoring term annihilates such input, leaving project(blockwise B eps).
    """
    check_centered(eps, what="block-transform input")
    return zero_com_project(_blockwise(blocks, eps))


def _mean_inverse(blocks):
    inv_blocks = inv3(blocks)
    return inv_blocks, ad.mean(inv_blocks, axis=-3)


def ambient_logdet(blocks):
    """Log |determinant| of the transform restricted to the zero-CoM subspace."""
    dets = det3(blocks)
    _check_block_dets(np.atleast_1d(ad.value(dets)))
    _, v = _mean_inverse(blocks)
    v_det = det3(v)
    if np.any(np.abs(ad.value(v_det)) <= DET_TOL):
        raise SingularTransformError("mean inverse block is singular")
    return ad.sum(ad.log(ad.absolute(dets)), axis=-1) + ad.log(ad.absolute(v_det))


def ambient_inverse_apply(blocks, zbar):
    """Solve apply(blocks, eps) = zbar for centered zbar via the shared-shift form."""
    check_centered(zbar, what="block-transform inverse input")
    inv_blocks, v = _mean_inverse(blocks)
    v_det = det3(v)
    if np.any(np.abs(ad.value(v_det)) <= DET_TOL):
        raise SingularTransformError("mean inverse block is singular")
    v_inv = inv3(v, check=False)
    m = ad.value(zbar).shape[-2]
    shifted = _blockwise(inv_blocks, zbar) - zbar
    total = ad.sum(shifted, axis=-2)  # (..., 3)
    com_shift = ad.einsum("...ij,...j->...i", v_inv, total) * (1.0 / m)
    centered = zbar - ad.reshape(com_shift, ad.value(com_shift).shape[:-1] + (1, 3))
    # the solution lies in the subspace by construction; the projection only
    # scrubs accumulated roundoff so downstream centering checks stay exact
    return zero_com_project(_blockwise(inv_blocks, centered))


def feature_logdet_inv(scales):
    """Invariant-feature part of the inverse-map log Jacobian: -sum log(scale)."""
    raw = ad.value(scales)
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0.0):
        raise InvalidInputError("feature scales must be strictly positive and finite")
    return -ad.sum(ad.log(scales), axis=tuple(range(-2, 0)))
