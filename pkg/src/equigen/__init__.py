"""equigen: equivariant diffusion for 3D molecular graphs with a learnable
forward process, plus fixed-schedule baselines, composition conditioning,
training/sampling loops and distance-based evaluation metrics."""

from .diffusion import (DiffusionConfig, Drift, Model, canonical_forward_kind,
                        generative_drift, init_model, loss_term, sample, train)
from .geometry import (GeometricGraph, random_rotation, rotate_graph,
                       sample_invariant_noise, zero_com_project)
from .network import EquiNetConfig, ParamStore
from .rng import RandomSource

__version__ = "0.1.0"

__all__ = [
    "DiffusionConfig", "Drift", "Model", "canonical_forward_kind", "generative_drift",
    "init_model", "loss_term", "sample", "train", "GeometricGraph", "random_rotation",
    "rotate_graph", "sample_invariant_noise", "zero_com_project", "EquiNetConfig",
    "ParamStore", "RandomSource", "__version__",
]
