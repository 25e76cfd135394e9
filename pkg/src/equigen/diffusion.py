"""Generative machinery: conditional marginals, drifts, loss, training, sampling.

All drifts act on a latent pair (centered positions, features).  With a path
family q(z_t | x) realized by the affine forward transform, the pieces are

    ode drift      f  = d/dt of the transform at the noise that produced z_t
    score          s  = gradient of log q(z_t | x) in the zero-CoM geometry
    forward drift  f + (g^2 / 2) s      (same marginals as the ode)
    reverse drift  f - (g^2 / 2) s      (time-reversed bridge)
    model drift    reverse drift evaluated at the predicted data point

and training minimizes E[ ||reverse - model||^2 / (2 g^2) ] over data, time
and noise draws.  Sampling integrates the model drift from t = 1 down to
t_min with Euler-Maruyama and decodes the final latent with the predictor.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import network as net
from .blocklinalg import ambient_inverse_apply
from .errors import (ConfigError, DivergenceError, InvalidInputError,
                     NonFiniteLossError, SingularBlockError, SingularTransformError)
from .forward import (AffinePath, assemble_path, fd_half_step, forward_apply,
                      forward_invert, time_derivative)
from .geometry import GeometricGraph, sample_invariant_noise, zero_com_project
from .optim import AdamState, OptimizerSettings, adam_update, clip_by_global_norm
from .rng import RandomSource
from .schedules import g_value, vp_alpha_sigma, warped_alpha_sigma

logger = logging.getLogger(__name__)

__all__ = [
    "DiffusionConfig", "Model", "Drift", "init_model", "canonical_forward_kind",
    "predict_datapoint", "make_path_fn", "conditional_score", "conditional_ode_drift",
    "forward_sde_drift", "reverse_sde_drift", "generative_drift",
    "loss_terms", "loss_term", "train", "sample", "SampleResult", "FORWARD_KINDS",
]

FORWARD_KINDS = ("learned", "learned_mean", "vp", "vp_gamma")
_KIND_ALIASES = {
    "edm_star": "vp",
    "edm_star_gamma": "vp_gamma",
    "mu_only": "learned_mean",
    "full": "learned",
}


def canonical_forward_kind(name: str) -> str:
    kind = _KIND_ALIASES.get(name.strip().lower(), name.strip().lower())
    if kind not in FORWARD_KINDS:
        raise ConfigError(f"unknown forward kind '{name}' (choose from {FORWARD_KINDS})")
    return kind


@dataclass(frozen=True)
class DiffusionConfig:
    """Forward-process family, volatility, integration and vocabulary settings."""

    forward_kind: str = "learned"
    delta: float = 1e-2
    g_kind: str = "constant"   # "constant" | "learned"
    g0: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    steps: int = 100
    t_min: float = 1e-3
    elements: tuple = ("H", "C", "N", "O", "F")
    feature_scale: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "forward_kind", canonical_forward_kind(self.forward_kind))
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.g_kind not in ("constant", "learned"):
            raise ConfigError("g_kind must be 'constant' or 'learned'")
        if self.g_kind == "constant" and self.g0 < 0:
            raise ConfigError("g0 must be nonnegative")
        if not self.beta_min < self.beta_max:
            raise ConfigError("beta_min must be < beta_max")
        if self.steps < 2:
            raise ConfigError("need at least 2 integration steps")
        if not 0.0 < self.t_min < 0.5:
            raise ConfigError("t_min must lie in (0, 0.5)")

    @property
    def feature_dim(self) -> int:
        return len(self.elements)

    @property
    def has_forward_net(self) -> bool:
        return self.forward_kind in ("learned", "learned_mean")


@dataclass
class Model:
    """Architecture + diffusion settings + one parameter store.

    ``extras`` carries small JSON-serializable metadata alongside checkpoints
    (e.g. the training set's size distribution used at sampling time).
    """

    net: net.EquiNetConfig
    diffusion: DiffusionConfig
    params: net.ParamStore
    extras: dict = field(default_factory=dict)

    @property
    def conditional(self) -> bool:
        return self.net.conditional


@dataclass
class Drift:
    """A drift value on the latent pair; positions stay centered."""

    pos: object   # (..., M, 3)
    feat: object  # (..., M, D)


def init_model(net_cfg: net.EquiNetConfig, diff_cfg: DiffusionConfig,
               source: RandomSource) -> Model:
    """Fresh parameters for the configured forward kind (+ predictor)."""
    if net_cfg.conditional and net_cfg.cond_types != diff_cfg.feature_dim:
        raise ConfigError("condition vector length must match the vocabulary size")
    rng = source.stream("init")
    store = net.ParamStore()
    d = diff_cfg.feature_dim
    if diff_cfg.has_forward_net:
        net.init_subnet_params(store, "fwd", net_cfg, d, rng, heads=True,
                               mean_only=diff_cfg.forward_kind == "learned_mean")
        if net_cfg.conditional:
            net.init_condition_params(store, "fwd/cond", net_cfg, rng)
    if diff_cfg.forward_kind == "vp_gamma":
        for name in ("sched/pos_a", "sched/feat_a"):
            store.add(name, np.array(1.0))
        for name in ("sched/pos_b", "sched/feat_b"):
            store.add(name, np.array(0.0))
    net.init_subnet_params(store, "pred", net_cfg, d, rng, heads=False)
    if net_cfg.conditional:
        net.init_condition_params(store, "pred/cond", net_cfg, rng)
    if diff_cfg.g_kind == "learned":
        g0 = max(diff_cfg.g0, 2e-3)
        store.add("gvol/c0", np.array(np.log(np.expm1(g0 - 1e-3))))
        store.add("gvol/c1", np.array(0.0))
        store.add("gvol/c2", np.array(0.0))
    return Model(net=net_cfg, diffusion=diff_cfg, params=store)


# --- paths -------------------------------------------------------------------

def _bcast_scalar_blocks(coeff, batch_shape, m):
    """(...,) positive scalar -> (..., M, 3, 3) multiples of the identity."""
    lead = np.broadcast_shapes(ad.value(coeff).shape, batch_shape)
    core = ad.reshape(coeff, ad.value(coeff).shape + (1, 1, 1)) * np.eye(3)
    return ad.broadcast_to(core, lead + (m, 3, 3))


def _bcast_scalar_scales(coeff, batch_shape, m, d):
    lead = np.broadcast_shapes(ad.value(coeff).shape, batch_shape)
    core = ad.reshape(coeff, ad.value(coeff).shape + (1, 1))
    return ad.broadcast_to(core * np.ones((m, d)), lead + (m, d))


def _tpad(t, extra):
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * extra)


def condition_embedding(model: Model, params, role: str, cond):
    if not model.conditional:
        return None
    if cond is None:
        raise ConfigError("conditional model requires a composition vector")
    return net.embed_composition(cond, params, model.net, f"{role}/cond")


def make_path_fn(model: Model, params, x_pos, x_feat, cond=None):
    """Closure t -> AffinePath describing q(z_t | x) for the configured kind."""
    cfg = model.diffusion
    kind = cfg.forward_kind
    batch_shape = ad.value(x_pos).shape[:-2]
    m = ad.value(x_pos).shape[-2]
    d = ad.value(x_feat).shape[-1]

    if kind == "vp":
        def path_fn(t):
            alpha, sigma = vp_alpha_sigma(t, cfg.beta_min, cfg.beta_max)
            sigma = np.maximum(sigma, cfg.delta)  # keeps the t ~ 0 path invertible
            return AffinePath(
                pos_mean=_tpad(alpha, 2) * x_pos,
                feat_mean=_tpad(alpha, 2) * x_feat,
                pos_blocks=_bcast_scalar_blocks(np.asarray(sigma), batch_shape, m),
                feat_scales=_bcast_scalar_scales(np.asarray(sigma), batch_shape, m, d),
                t=np.asarray(t, dtype=np.float64), delta=cfg.delta)
        return path_fn

    if kind == "vp_gamma":
        def path_fn(t):
            a_pos, s_pos = warped_alpha_sigma(t, params["sched/pos_a"], params["sched/pos_b"],
                                              cfg.beta_min, cfg.beta_max)
            a_feat, s_feat = warped_alpha_sigma(t, params["sched/feat_a"], params["sched/feat_b"],
                                                cfg.beta_min, cfg.beta_max)
            s_pos = ad.maximum(s_pos, cfg.delta)
            s_feat = ad.maximum(s_feat, cfg.delta)
            a_pos2 = ad.reshape(a_pos, ad.value(a_pos).shape + (1, 1))
            a_feat2 = ad.reshape(a_feat, ad.value(a_feat).shape + (1, 1))
            return AffinePath(
                pos_mean=a_pos2 * x_pos, feat_mean=a_feat2 * x_feat,
                pos_blocks=_bcast_scalar_blocks(s_pos, batch_shape, m),
                feat_scales=_bcast_scalar_scales(s_feat, batch_shape, m, d),
                t=np.asarray(t, dtype=np.float64), delta=cfg.delta)
        return path_fn

    cond_emb = condition_embedding(model, params, "fwd", cond)

    if kind == "learned_mean":
        def path_fn(t):
            state = net.encode(params, "fwd", model.net, x_pos, x_feat, t, cond_emb)
            mu_pos, mu_feat = net.readout_mean_heads(params, "fwd", state)
            t2 = _tpad(t, 2)
            ramp = t2 * (1.0 - t2)
            alpha, sigma = vp_alpha_sigma(t, cfg.beta_min, cfg.beta_max)
            sigma = np.maximum(sigma, cfg.delta)
            return AffinePath(
                pos_mean=zero_com_project((1.0 - t2) * x_pos + ramp * mu_pos),
                feat_mean=(1.0 - t2) * x_feat + ramp * mu_feat,
                pos_blocks=_bcast_scalar_blocks(np.asarray(sigma), batch_shape, m),
                feat_scales=_bcast_scalar_scales(np.asarray(sigma), batch_shape, m, d),
                t=np.asarray(t, dtype=np.float64), delta=cfg.delta)
        return path_fn

    def path_fn(t):  # fully learned affine forward
        state = net.encode(params, "fwd", model.net, x_pos, x_feat, t, cond_emb)
        heads = net.readout_forward_heads(params, "fwd", state)
        return assemble_path(x_pos, x_feat, t, heads, cfg.delta)

    return path_fn


def predict_datapoint(model: Model, params, z_pos, z_feat, t, cond=None):
    """The data-point predictor x_hat(z_t, t [, c]); positions come out centered."""
    cond_emb = condition_embedding(model, params, "pred", cond)
    state = net.encode(params, "pred", model.net, z_pos, z_feat, t, cond_emb)
    return net.readout_datapoint(params, "pred", state, z_pos)


# --- score and drifts ---------------------------------------------------------

def conditional_score(path: AffinePath, z_pos, z_feat) -> Drift:
    """Gradient of log q(z_t | x) at z; positions solved in the zero-CoM subspace."""
    eps_pos, eps_feat = forward_invert(path, z_pos, z_feat)
    score_feat = -eps_feat / path.feat_scales
    score_pos = ambient_inverse_apply(ad.swapaxes(path.pos_blocks, -1, -2), -eps_pos)
    return Drift(pos=score_pos, feat=score_feat)


def _slice_path(bundle: AffinePath, idx: int) -> AffinePath:
    return AffinePath(pos_mean=bundle.pos_mean[idx], feat_mean=bundle.feat_mean[idx],
                      pos_blocks=bundle.pos_blocks[idx], feat_scales=bundle.feat_scales[idx],
                      t=np.asarray(bundle.t, dtype=np.float64)[idx], delta=bundle.delta)


def _stacked_times(lead_shape: tuple, t):
    """Times (t, t+h, t-h) stacked on a new leading axis, h the FD half step."""
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), lead_shape).copy()
    h = fd_half_step(t_arr)
    return np.stack([t_arr, t_arr + h, t_arr - h], axis=0), h


def _path_bundle(path_fn, z_pos, t):
    """One head evaluation covering the path at t and both FD-shifted times."""
    stack, h = _stacked_times(ad.value(z_pos).shape[:-2], t)
    return path_fn(stack), h


def _ode_from_bundle(bundle: AffinePath, h, eps_pos, eps_feat) -> Drift:
    zp_pos, zp_feat = forward_apply(_slice_path(bundle, 1), eps_pos, eps_feat)
    zm_pos, zm_feat = forward_apply(_slice_path(bundle, 2), eps_pos, eps_feat)
    inv2 = 1.0 / (2.0 * h.reshape(h.shape + (1, 1)))
    return Drift(pos=(zp_pos - zm_pos) * inv2, feat=(zp_feat - zm_feat) * inv2)


def conditional_ode_drift(path_fn, z_pos, z_feat, t, path: AffinePath | None = None) -> Drift:
    """Time slope of the conditional path at the noise that produced z_t."""
    bundle, h = _path_bundle(path_fn, z_pos, t)
    path_t = _slice_path(bundle, 0)
    eps_pos, eps_feat = forward_invert(path_t, z_pos, z_feat)
    return _ode_from_bundle(bundle, h, eps_pos, eps_feat)


def _g2pad(g, extra):
    if not ad.is_tensor(g) and np.asarray(g).ndim == 0:
        return float(np.asarray(g)) ** 2
    return ad.reshape(g * g, ad.value(g).shape + (1,) * extra)


def _bridge_drift(path_fn, z_pos, z_feat, t, g, sign: float) -> Drift:
    bundle, h = _path_bundle(path_fn, z_pos, t)
    path_t = _slice_path(bundle, 0)
    eps_pos, eps_feat = forward_invert(path_t, z_pos, z_feat)
    ode = _ode_from_bundle(bundle, h, eps_pos, eps_feat)
    score_feat = -eps_feat / path_t.feat_scales
    score_pos = ambient_inverse_apply(ad.swapaxes(path_t.pos_blocks, -1, -2), -eps_pos)
    g2 = _g2pad(g, 2)
    return Drift(pos=ode.pos + sign * 0.5 * g2 * score_pos,
                 feat=ode.feat + sign * 0.5 * g2 * score_feat)


def forward_sde_drift(path_fn, z_pos, z_feat, t, g, path: AffinePath | None = None) -> Drift:
    """Drift of the noising bridge that shares the conditional marginals."""
    return _bridge_drift(path_fn, z_pos, z_feat, t, g, +1.0)


def reverse_sde_drift(path_fn, z_pos, z_feat, t, g, path: AffinePath | None = None) -> Drift:
    """Drift of the bridge run backward in time (the training target)."""
    return _bridge_drift(path_fn, z_pos, z_feat, t, g, -1.0)


def generative_drift(model: Model, params, z_pos, z_feat, t, g, cond=None,
                     predictor=None) -> Drift:
    """Reverse drift with the unknown data point replaced by the prediction.

    ``predictor`` overrides the model's data-point network (used by tests to
    substitute an exact predictor).
    """
    if predictor is None:
        xh_pos, xh_feat = predict_datapoint(model, params, z_pos, z_feat, t, cond)
    else:
        xh_pos, xh_feat = predictor(z_pos, z_feat, t)
    hat_fn = make_path_fn(model, params, xh_pos, xh_feat, cond)
    return reverse_sde_drift(hat_fn, z_pos, z_feat, t, g)


# --- loss ----------------------------------------------------------------------

def _stage_check(stage: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(ad.value(a))):
            raise NonFiniteLossError(stage)


def loss_terms(model: Model, params, x_pos, x_feat, t, eps_pos, eps_feat, cond=None,
               predictor=None):
    """Per-sample drift-matching losses for a (batched) graph; shape ``t.shape``."""
    g = g_value(t, model.diffusion, params)
    path_fn = make_path_fn(model, params, x_pos, x_feat, cond)
    stack, h = _stacked_times(ad.value(x_pos).shape[:-2], t)
    bundle = path_fn(stack)
    path_t = _slice_path(bundle, 0)
    z_pos, z_feat = forward_apply(path_t, eps_pos, eps_feat)
    _stage_check("latent", z_pos, z_feat)
    # recover the noise through the inverse map so the parameter gradient sees
    # the same composition the drift definitions use
    eh_pos, eh_feat = forward_invert(path_t, z_pos, z_feat)
    ode = _ode_from_bundle(bundle, h, eh_pos, eh_feat)
    g2 = _g2pad(g, 2)
    score_pos = ambient_inverse_apply(ad.swapaxes(path_t.pos_blocks, -1, -2), -eh_pos)
    score_feat = -eh_feat / path_t.feat_scales
    target = Drift(pos=ode.pos - 0.5 * g2 * score_pos,
                   feat=ode.feat - 0.5 * g2 * score_feat)
    _stage_check("target drift", target.pos, target.feat)
    if predictor is None:
        xh_pos, xh_feat = predict_datapoint(model, params, z_pos, z_feat, t, cond)
    else:
        xh_pos, xh_feat = predictor(z_pos, z_feat, t)
    _stage_check("prediction", xh_pos, xh_feat)
    hat_fn = make_path_fn(model, params, xh_pos, xh_feat, cond)
    model_drift = reverse_sde_drift(hat_fn, z_pos, z_feat, t, g)
    _stage_check("model drift", model_drift.pos, model_drift.feat)
    dp = target.pos - model_drift.pos
    df = target.feat - model_drift.feat
    sq = ad.sum(dp * dp, axis=(-2, -1)) + ad.sum(df * df, axis=(-2, -1))
    out = sq / (2.0 * g * g)
    _stage_check("loss", out)
    return out


def loss_term(model: Model, x: GeometricGraph, t: float, eps_pos, eps_feat,
              params=None) -> float:
    """Single-sample loss value (no tape); mirrors one summand of the objective."""
    params = model.params if params is None else params
    val = loss_terms(model, params, x.positions, x.features, float(t),
                     eps_pos, eps_feat, cond=x.condition)
    return float(np.asarray(ad.value(val)))


# --- training -------------------------------------------------------------------

@dataclass
class TraceRow:
    step: int
    loss: float
    wall_ms: float


@dataclass
class TrainResult:
    model: Model
    trace: list = field(default_factory=list)


def _group_by_size(indices, graphs):
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(graphs[int(i)].node_count, []).append(int(i))
    return dict(sorted(groups.items()))


def train(dataset, model: Model, source: RandomSource,
          settings: OptimizerSettings | None = None,
          invariant_check_every: int = 0, on_step=None) -> TrainResult:
    """Drift-matching training loop; deterministic given the random source.

    Draws (x, t, eps) per step, groups same-size molecules into batched loss
    graphs, and takes clipped Adam steps.  On a non-finite loss the last finite
    parameters are attached to the raised :class:`DivergenceError`.
    """
    if not dataset:
        raise InvalidInputError("empty dataset")
    settings = settings or OptimizerSettings()
    cfg = model.diffusion
    if model.conditional and any(g.condition is None for g in dataset):
        raise InvalidInputError("conditional training needs composition vectors on every graph")
    graphs = [g if g.is_centered() else g.centered() for g in dataset]

    batch_rng = source.stream("train/batch")
    time_rng = source.stream("train/time")
    noise_rng = source.stream("train/noise")
    check_rng = source.stream("train/check")

    flat = model.params.flat()
    adam = AdamState.zeros(flat.size, beta2=float(settings.extra.get("beta2", 0.999)))
    trace: list[TraceRow] = []
    skipped = 0

    for step in range(settings.steps):
        t0 = _time.perf_counter()
        idx = batch_rng.integers(0, len(graphs), size=settings.batch_size)
        times = time_rng.uniform(cfg.t_min, 1.0 - cfg.t_min, size=settings.batch_size)
        noises = [sample_invariant_noise(graphs[int(i)].node_count, cfg.feature_dim, noise_rng)
                  for i in idx]
        groups = _group_by_size(idx, graphs)
        order = {int(i): k for k, i in enumerate(idx)}

        def step_loss(params):
            total = 0.0
            for _, members in groups.items():
                x_pos = np.stack([graphs[i].positions for i in members])
                x_feat = np.stack([graphs[i].features for i in members])
                cond = (np.stack([graphs[i].condition for i in members])
                        if model.conditional else None)
                tt = np.array([times[order[i]] for i in members])
                e_pos = np.stack([noises[order[i]][0] for i in members])
                e_feat = np.stack([noises[order[i]][1] for i in members])
                terms = loss_terms(model, params, x_pos, x_feat, tt, e_pos, e_feat, cond)
                total = total + ad.sum(terms)
            return total * (1.0 / settings.batch_size)

        model.params.set_flat(flat)
        try:
            grad, loss_val = net.gradient_and_value(step_loss, model.params)
            skipped = 0
        except NonFiniteLossError as err:
            raise DivergenceError(f"training diverged at step {step} ({err.stage})") from err
        except (SingularTransformError, SingularBlockError, InvalidInputError) as err:
            # the learned blocks wandered across det = 0 for this draw; skip the
            # update rather than aborting (the loss barrier is infinitely steep
            # but thin, so a finite step can momentarily cross it)
            skipped += 1
            if skipped > 25:
                raise DivergenceError(
                    f"{skipped} consecutive singular-transform steps at step {step}") from err
            logger.warning("step %d skipped (%s)", step, err)
            trace.append(TraceRow(step=step, loss=float("nan"),
                                  wall_ms=(_time.perf_counter() - t0) * 1e3))
            continue
        grad = clip_by_global_norm(grad, settings.clip_norm)
        flat = adam_update(adam, flat, grad, settings.lr)
        if not np.all(np.isfinite(flat)):
            raise DivergenceError(f"parameters became non-finite at step {step}")
        row = TraceRow(step=step, loss=loss_val,
                       wall_ms=(_time.perf_counter() - t0) * 1e3)
        trace.append(row)
        if on_step is not None:
            on_step(row)

        if settings.log_every and step % settings.log_every == 0:
            logger.info("step %d loss %.6f", step, loss_val)
        if invariant_check_every and step % invariant_check_every == 0:
            _log_invariant_summary(model, graphs, times[0], noises[0], idx[0], check_rng)

    model.params.set_flat(flat)
    return TrainResult(model=model, trace=trace)


def _log_invariant_summary(model, graphs, t, noise, index, rng) -> None:
    """Spot-check rotation invariance of the objective under shared randomness."""
    from .geometry import random_rotation, rotate_graph

    g = graphs[int(index)]
    rot = random_rotation(rng)
    base = loss_term(model, g, float(t), noise[0], noise[1])
    rotated = loss_term(model, rotate_graph(rot, g), float(t), noise[0] @ rot.T, noise[1])
    logger.info("invariance check |L(Rx) - L(x)| = %.3e", abs(base - rotated))


# --- sampling --------------------------------------------------------------------

@dataclass
class SampleResult:
    graphs: list          # decoded predictions, one per surviving chain
    sizes: list
    aborted: list = field(default_factory=list)  # chain indices that went non-finite


def sample(model: Model, count: int, source: RandomSource, *,
           steps: int | None = None, size_distribution=None, condition=None,
           drift_fn=None, state_callback=None) -> SampleResult:
    """Euler-Maruyama integration of the model drift from t = 1 down to t_min.

    Sizes come from the provided empirical distribution, or from the condition
    (sum of requested counts) when one is given.  Chains of equal size are
    integrated together; each chain consumes its own named noise stream, so
    results do not depend on the grouping.
    """
    cfg = model.diffusion
    t_steps = int(steps if steps is not None else cfg.steps)
    if t_steps < 2:
        raise ConfigError("need at least 2 integration steps")
    d = cfg.feature_dim

    if condition is not None:
        cond_vec = np.asarray(condition, dtype=np.int64)
        if cond_vec.shape != (d,) or cond_vec.sum() <= 0:
            raise InvalidInputError("condition must be a length-D count vector with atoms")
        sizes = [int(cond_vec.sum())] * count
    else:
        if size_distribution is None:
            raise InvalidInputError("unconditional sampling needs a size distribution")
        size_rng = source.stream("sample/sizes")
        sizes = [int(size_distribution.sample(size_rng)) for _ in range(count)]

    dt = (1.0 - cfg.t_min) / t_steps
    grid = 1.0 - dt * np.arange(t_steps)
    eval_times = np.clip(grid, cfg.t_min, 1.0 - cfg.t_min)

    chain_rngs = [source.stream(f"sample/chain{i}") for i in range(count)]
    groups: dict[int, list[int]] = {}
    for i, m in enumerate(sizes):
        groups.setdefault(m, []).append(i)
    # bound the batched-array footprint; chunking cannot change results because
    # every chain draws from its own stream
    chunked = []
    for m, members in sorted(groups.items()):
        for lo in range(0, len(members), 256):
            chunked.append((m, members[lo:lo + 256]))

    params = model.params
    graphs: list = [None] * count
    aborted: list[int] = []

    for m, members in chunked:
        b = len(members)
        z_pos = np.zeros((b, m, 3))
        z_feat = np.zeros((b, m, d))
        for row, i in enumerate(members):
            z_pos[row], z_feat[row] = sample_invariant_noise(m, d, chain_rngs[i])
        cond = (np.broadcast_to(cond_vec, (b, d)) if condition is not None else None)
        alive = np.ones(b, dtype=bool)

        def eval_drift(zp, zf, t_eval, cvec):
            if drift_fn is None:
                g_val = float(np.asarray(ad.value(g_value(t_eval, cfg, params))))
                return generative_drift(model, params, zp, zf, t_eval, g_val, cvec)
            return drift_fn(zp, zf, t_eval)

        def mark_dead(mask, reason):
            nonlocal alive
            for row in np.nonzero(mask & alive)[0]:
                aborted.append(members[row])
                logger.warning("chain %d aborted (%s)", members[row], reason)
            alive = alive & ~mask
            z_pos[mask] = 0.0
            z_feat[mask] = 0.0

        for k in range(t_steps):
            t_eval = float(eval_times[k])
            g = float(np.asarray(ad.value(g_value(t_eval, cfg, params))))
            # screen runaway states before they reach a non-invertible transform
            huge = (np.abs(z_pos).max(axis=(1, 2)) > 1e8) | (np.abs(z_feat).max(axis=(1, 2)) > 1e8)
            if huge.any():
                mark_dead(huge, "state magnitude overflow")
            try:
                drift = eval_drift(z_pos, z_feat, t_eval, cond)
                d_pos = np.array(ad.value(drift.pos), copy=True)
                d_feat = np.array(ad.value(drift.feat), copy=True)
            except (SingularTransformError, SingularBlockError, InvalidInputError):
                # one chain poisons the batched evaluation; retry chains one by one
                d_pos = np.zeros_like(z_pos)
                d_feat = np.zeros_like(z_feat)
                failed = np.zeros(b, dtype=bool)
                for row in range(b):
                    if not alive[row]:
                        continue
                    try:
                        one = eval_drift(z_pos[row:row + 1], z_feat[row:row + 1], t_eval,
                                         cond[row:row + 1] if cond is not None else None)
                        d_pos[row] = ad.value(one.pos)[0]
                        d_feat[row] = ad.value(one.feat)[0]
                    except (SingularTransformError, SingularBlockError, InvalidInputError):
                        failed[row] = True
                mark_dead(failed, "singular transform")
            w_pos = np.zeros_like(z_pos)
            w_feat = np.zeros_like(z_feat)
            for row, i in enumerate(members):
                w_pos[row], w_feat[row] = sample_invariant_noise(m, d, chain_rngs[i])
            z_pos = z_pos - d_pos * dt + g * np.sqrt(dt) * w_pos
            z_feat = z_feat - d_feat * dt + g * np.sqrt(dt) * w_feat
            z_pos[~alive] = 0.0
            z_feat[~alive] = 0.0
            bad = ~(np.isfinite(z_pos).all(axis=(1, 2)) & np.isfinite(z_feat).all(axis=(1, 2)))
            if bad.any():
                mark_dead(bad, "non-finite state")
            if state_callback is not None:
                state_callback(k, t_eval, z_pos.copy(), z_feat.copy())

        xh_pos, xh_feat = predict_datapoint(model, params, z_pos, z_feat, cfg.t_min, cond)
        xh_pos, xh_feat = ad.value(xh_pos), ad.value(xh_feat)
        for row, i in enumerate(members):
            if alive[row]:
                graphs[i] = GeometricGraph(xh_pos[row], xh_feat[row],
                                           cond_vec.copy() if condition is not None else None)

    kept = [g for g in graphs if g is not None]
    kept_sizes = [g.node_count for g in kept]
    return SampleResult(graphs=kept, sizes=kept_sizes, aborted=sorted(aborted))
