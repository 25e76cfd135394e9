"""Shared fixtures and independent oracles.

The dense oracle here is deliberately literal: it materializes the full
ambient operator (projector x block-diagonal plus the center-of-mass frame)
as a 3M x 3M matrix, restricts it to an explicit orthonormal basis of the
zero-CoM subspace, and answers apply/solve/logdet questions with generic
dense linear algebra.  Production code never does this; tests compare
against it.
"""

import numpy as np
import pytest

from equigen import diffusion as dif
from equigen import molecules as mol
from equigen import network as net
from equigen.geometry import zero_com_basis
from equigen.rng import RandomSource


def dense_ambient_operator(blocks: np.ndarray) -> np.ndarray:
    """Literal 3M x 3M ambient matrix: P B + (1/M) T T^T."""
    m = blocks.shape[0]
    proj = np.kron(np.eye(m) - np.ones((m, m)) / m, np.eye(3))
    frame = np.kron(np.ones((m, 1)), np.eye(3))
    block_diag = np.zeros((3 * m, 3 * m))
    for i in range(m):
        block_diag[3 * i:3 * i + 3, 3 * i:3 * i + 3] = blocks[i]
    return proj @ block_diag + frame @ frame.T / m


def dense_subspace_matrix(blocks: np.ndarray) -> np.ndarray:
    """The ambient operator restricted to the zero-CoM subspace basis."""
    basis = zero_com_basis(blocks.shape[0])
    return basis.T @ dense_ambient_operator(blocks) @ basis


def dense_apply(blocks: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return (dense_ambient_operator(blocks) @ eps.reshape(-1)).reshape(eps.shape)


def dense_solve(blocks: np.ndarray, zbar: np.ndarray) -> np.ndarray:
    basis = zero_com_basis(blocks.shape[0])
    coeffs = np.linalg.solve(dense_subspace_matrix(blocks), basis.T @ zbar.reshape(-1))
    return (basis @ coeffs).reshape(zbar.shape)


def dense_logdet(blocks: np.ndarray) -> float:
    return float(np.log(abs(np.linalg.det(dense_subspace_matrix(blocks)))))


def well_conditioned_blocks(m: int, rng: np.random.Generator,
                            spread: float = 0.3) -> np.ndarray:
    """Random blocks bounded away from singularity (redraw on tiny determinants)."""
    while True:
        blocks = rng.standard_normal((m, 3, 3)) * spread + np.eye(3)
        dets = np.linalg.det(blocks)
        if np.all(np.abs(dets) > 0.05):
            return blocks


def centered(rng: np.random.Generator, m: int, d: int = 3) -> np.ndarray:
    v = rng.standard_normal((m, d))
    return v - v.mean(axis=0, keepdims=True)


def randomize_readouts(model: dif.Model, seed: int, scale: float = 0.02,
                       scale_of_scales: float = 0.0) -> None:
    """Replace zero-initialized readout segments with small random values.

    Keeps head magnitudes in the well-conditioned regime; the positivity
    readouts get their own (usually zero) scale because tiny scale readouts
    wander into near-singular paths.
    """
    rng = RandomSource(seed).stream("randomize-readouts")
    for name, arr in list(model.params.items()):
        if "/out/" not in name:
            continue
        s = scale_of_scales if "scale" in name.rsplit("/", 1)[-1] else scale
        model.params._arrays[name] = rng.standard_normal(arr.shape) * s


def tiny_model(kind: str = "learned", *, elements=("H", "C", "O"), layers=2,
               hidden=16, vector_hidden=4, seed=7, conditional=False,
               **diff_kwargs) -> dif.Model:
    ncfg = net.EquiNetConfig(layers=layers, hidden=hidden, vector_hidden=vector_hidden,
                             rbf_count=8, time_dim=8,
                             cond_types=len(elements) if conditional else 0,
                             cond_type_dim=4, cond_hidden=16, cond_dim=8)
    dcfg = dif.DiffusionConfig(forward_kind=kind, elements=elements, **diff_kwargs)
    return dif.init_model(ncfg, dcfg, RandomSource(seed))


@pytest.fixture
def vocab():
    return mol.AtomVocabulary(mol.DEFAULT_ELEMENTS)


@pytest.fixture
def source():
    return RandomSource(1234)
