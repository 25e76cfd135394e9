"""The learnable affine forward transform, its inverse, Jacobian and time slope.

A path at time t maps invariant-law noise (eps_pos, eps_feat) to a latent:

    z_pos  = pos_mean + blockwise(pos_blocks) eps_pos     (centered throughout)
    z_feat = feat_mean + feat_scales * eps_feat

The boundary-pinned assembly interpolates between a delta-width Gaussian at
the data point (t = 0) and the unit prior (t = 1):

    pos_mean  = project[(1 - t) x + t (1 - t) mu_res]
    blocks    = (delta^(1-t) * pos_scale^(t(1-t))) I + t (1 - t) pos_mix
    feat_mean = (1 - t) h + t (1 - t) mu_res_feat
    scales    = delta^(1-t) * feat_scale^(t(1-t))

so at t = 0 the transform is exactly x + delta * eps and at t = 1 exactly the
identity on noise, for any head values.  The time derivative at fixed noise is
defined by central finite differences with the heads re-evaluated at the
shifted times; an analytic implementation, if ever added, must match it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .blocklinalg import ambient_apply, ambient_inverse_apply, ambient_logdet, feature_logdet_inv
from .errors import DegenerateStepError, InvalidInputError
from .geometry import zero_com_project
from .network import ForwardHeads

__all__ = ["AffinePath", "assemble_path", "forward_apply", "forward_invert",
           "forward_logdet_inv", "time_derivative", "FD_STEP"]

FD_STEP = 1e-4


@dataclass
class AffinePath:
    """Affine map from noise to latent at one time; fields may carry batch dims."""

    pos_mean: object    # (..., M, 3) centered
    feat_mean: object   # (..., M, D)
    pos_blocks: object  # (..., M, 3, 3)
    feat_scales: object  # (..., M, D) > 0
    t: object           # scalar or (...,)
    delta: float


def _tpad(t, extra: int):
    """Right-pad a scalar-or-batched time for broadcasting against node axes."""
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * extra)


def assemble_path(x_pos, x_feat, t, heads: ForwardHeads, delta: float) -> AffinePath:
    """Build the boundary-pinned path at time t from raw head values."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise InvalidInputError("time must lie in [0, 1]")
    if delta <= 0.0:
        raise InvalidInputError("delta must be positive")
    t2 = _tpad(t_arr, 2)   # against (..., M, D/3)
    t3 = _tpad(t_arr, 3)   # against (..., M, 3, 3)
    ramp2, ramp3 = t2 * (1.0 - t2), t3 * (1.0 - t3)

    pos_mean = zero_com_project((1.0 - t2) * x_pos + ramp2 * heads.pos_mean_residual)
    feat_mean = (1.0 - t2) * x_feat + ramp2 * heads.feat_mean_residual

    # delta^(1-t) * scale^(t(1-t)); exponents are exact 0/1 at the endpoints
    pos_coeff = float(delta) ** (1.0 - _tpad(t_arr, 1)) * heads.pos_scale ** (_tpad(t_arr, 1) * (1.0 - _tpad(t_arr, 1)))
    blocks = ad.reshape(pos_coeff, ad.value(pos_coeff).shape + (1, 1)) * np.eye(3) \
        + ramp3 * heads.pos_mix
    feat_scales = float(delta) ** (1.0 - t2) * heads.feat_scale ** ramp2
    return AffinePath(pos_mean=pos_mean, feat_mean=feat_mean, pos_blocks=blocks,
                      feat_scales=feat_scales, t=t_arr, delta=float(delta))


def forward_apply(path: AffinePath, eps_pos, eps_feat):
    """Map noise to the latent at path.t; the position output stays centered."""
    z_pos = path.pos_mean + ambient_apply(path.pos_blocks, eps_pos)
    z_feat = path.feat_mean + path.feat_scales * eps_feat
    return z_pos, z_feat


def forward_invert(path: AffinePath, z_pos, z_feat):
    """Recover the noise that produced a latent under this path."""
    eps_pos = ambient_inverse_apply(path.pos_blocks, z_pos - path.pos_mean)
    eps_feat = (z_feat - path.feat_mean) / path.feat_scales
    return eps_pos, eps_feat


def forward_logdet_inv(path: AffinePath):
    """log |det| of the latent -> noise map (positions restricted to zero CoM)."""
    return feature_logdet_inv(path.feat_scales) - ambient_logdet(path.pos_blocks)


def fd_half_step(t) -> np.ndarray:
    """Central-difference half step, shrunk near the endpoints."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise DegenerateStepError("time derivative needs t strictly inside (0, 1)")
    return np.minimum(FD_STEP, np.minimum(t / 2.0, (1.0 - t) / 2.0))


def time_derivative(eps_pos, eps_feat, t, path_fn):
    """d/dt of the noise->latent map at fixed noise, by central differences.

    ``path_fn(t)`` must rebuild the path (re-evaluating any head network) at
    the shifted times.
    """
    h = fd_half_step(t)
    zp_pos, zp_feat = forward_apply(path_fn(np.asarray(t) + h), eps_pos, eps_feat)
    zm_pos, zm_feat = forward_apply(path_fn(np.asarray(t) - h), eps_pos, eps_feat)
    inv2 = 1.0 / (2.0 * _tpad(h, 2))
    return (zp_pos - zm_pos) * inv2, (zp_feat - zm_feat) * inv2
