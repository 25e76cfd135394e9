"""Time schedules for the fixed and semi-learned forward kinds.

The fixed baseline uses the variance-preserving decay with linear rate
``beta(s) = beta_min + s (beta_max - beta_min)``:

    alpha(t) = exp(-0.5 * integral_0^t beta)      sigma(t) = sqrt(1 - alpha^2)

The ``vp_gamma`` kind warps the decay exponent with a learned monotone map per
data modality: tau(t) = W(t) / W(1) with W(t) = integral_0^t [w0 + (a + b s)^2],
which expands to the cubic (w0 + a^2) t + a b t^2 + (b^2 / 3) t^3.  W is
strictly increasing for any (a, b), so tau is a monotone bijection of [0, 1]
and the t=0 / t=1 marginals stay pinned to the baseline's endpoints.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

__all__ = ["vp_integral", "vp_alpha_sigma", "warped_alpha_sigma", "g_value", "G_FLOOR"]

WARP_FLOOR = 1e-3  # w0 above; keeps the warp increasing at a = b = 0
G_FLOOR = 1e-3


def vp_integral(t, beta_min: float = 0.1, beta_max: float = 20.0):
    """Integral of the linear rate from 0 to t."""
    t = np.asarray(t, dtype=np.float64)
    return beta_min * t + 0.5 * (beta_max - beta_min) * t**2


def beta_value(t, beta_min: float = 0.1, beta_max: float = 20.0):
    t = np.asarray(t, dtype=np.float64)
    return beta_min + (beta_max - beta_min) * t


def vp_alpha_sigma(t, beta_min: float = 0.1, beta_max: float = 20.0):
    """Variance-preserving signal/noise scales; alpha^2 + sigma^2 = 1."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("time must lie in [0, 1]")
    alpha = np.exp(-0.5 * vp_integral(t, beta_min, beta_max))
    sigma = np.sqrt(1.0 - alpha**2)
    return alpha, sigma


def _warp(t, a, b):
    t = np.asarray(t, dtype=np.float64)

    def w(s):
        return (WARP_FLOOR + a * a) * s + a * b * s**2 + (b * b / 3.0) * s**3

    return w(t) / w(1.0)


def warped_alpha_sigma(t, a, b, beta_min: float = 0.1, beta_max: float = 20.0):
    """One modality of the learned-schedule kind; (a, b) are learnable scalars."""
    total = vp_integral(1.0, beta_min, beta_max)
    alpha = ad.exp(_warp(t, a, b) * (-0.5 * total))
    sigma = ad.sqrt(1.0 - alpha * alpha)
    return alpha, sigma


def g_value(t, diff_cfg, params):
    """Volatility g(t): constant g0, or a learned positive scalar map of t."""
    if diff_cfg.g_kind == "constant":
        return float(diff_cfg.g0)
    t = np.asarray(t, dtype=np.float64)
    c0, c1, c2 = params["gvol/c0"], params["gvol/c1"], params["gvol/c2"]
    return ad.softplus(c0 + c1 * t + c2 * t**2) + G_FLOOR
