"""Equivariant message-passing backbone shared by the forward-transform head
network and the data-point predictor.

Node state is a pair (scalars ``(..., M, H)``, vectors ``(..., M, H_v, 3)``).
Under a rotation/reflection of the input positions, scalars are invariant and
every vector channel rotates with the input; permuting the nodes permutes both
tracks consistently.  That pair of facts is the module's contract and is what
the property tests pin down.

Concrete layer math (the single place it is documented):

    rel[i,j]   = pos_i - pos_j                       (directions, M x M x 3)
    phi[i,j]   = gaussian_rbf(|rel[i,j]|)            (M x M x K)
    e[i,j]     = mlp_edge([s_i, s_j, phi[i,j]])      -> [m_s | gate_v | gate_d]
    S_i        = sum_{j != i} m_s[i,j]
    V_i        = sum_{j != i} gate_v[i,j,c] * v[j,c] + gate_d[i,j,c] * rel[i,j]
    s_i       += mlp_node([s_i, S_i, <v_i, V_i>_c, |v_i|^2_c])[:H]
    gate_i     = mlp_node(...)[H:]
    v_i       += V_i + gate_i * (v_i W_mix)          (W_mix mixes channels)
    s_i       += silu(linear([s_i, cond_emb]))       (conditional models only)

Positions are never updated; geometric information flows only through the
relative directions and distances, so the whole stack is translation invariant
and O(3) equivariant.  Aggregations are plain ordered sums, which keeps runs
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidInputError, NonFiniteLossError
from .geometry import zero_com_project

__all__ = [
    "EquiNetConfig", "ParamStore", "HiddenState", "ForwardHeads",
    "rbf_expand", "embed_time", "embed_composition", "encode",
    "readout_forward_heads", "readout_datapoint", "init_subnet_params",
    "init_condition_params", "gradient", "gradient_and_value", "SCALE_FLOOR",
]

SCALE_FLOOR = 1e-6  # added after softplus; keeps log-determinants finite


@dataclass(frozen=True)
class EquiNetConfig:
    """Desk-scale architecture settings."""

    layers: int = 3
    hidden: int = 64          # invariant channels per node
    vector_hidden: int = 16   # equivariant vector channels per node
    rbf_count: int = 16
    rbf_max: float = 12.0     # distance featurization range; graphs stay fully connected
    time_dim: int = 16
    cond_types: int = 0       # composition vector length; 0 = unconditional
    cond_type_dim: int = 16   # per-type embedding width
    cond_hidden: int = 64
    cond_dim: int = 16        # final condition embedding width

    def __post_init__(self):
        for name in ("layers", "hidden", "vector_hidden", "rbf_count", "time_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def conditional(self) -> bool:
        return self.cond_types > 0


class ParamStore:
    """Ordered named float64 arrays with a flat-vector view.

    The segment order is insertion order; ``flat()``/``set_flat`` round-trip
    every entry exactly once, which is what checkpointing, the optimizer and
    the finite-difference gradient oracle rely on.
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self._arrays:
            raise ConfigError(f"duplicate parameter segment '{name}'")
        self._arrays[name] = np.asarray(array, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def segments(self) -> list[tuple[str, tuple]]:
        return [(k, v.shape) for k, v in self._arrays.items()]

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.reshape(-1) for v in self._arrays.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise InvalidInputError(f"flat vector has {vec.size} entries, store has {self.size}")
        offset = 0
        for k, v in self._arrays.items():
            self._arrays[k] = vec[offset:offset + v.size].reshape(v.shape).copy()
            offset += v.size

    def tensors(self, requires_grad: bool = True) -> dict:
        return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in self._arrays.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self._arrays.items():
            out.add(k, v.copy())
        return out


@dataclass
class HiddenState:
    """Per-node hidden state; scalars invariant, vectors covariant."""

    scalars: object  # (..., M, H)
    vectors: object  # (..., M, H_v, 3)


@dataclass
class ForwardHeads:
    """Raw outputs of the forward-transform readout (boundary shaping happens later)."""

    pos_mean_residual: object   # (..., M, 3), centered
    feat_mean_residual: object  # (..., M, D)
    pos_scale: object           # (..., M), > 0
    feat_scale: object          # (..., M, D), > 0
    pos_mix: object             # (..., M, 3, 3)


def _silu(x):
    return x * ad.sigmoid(x)


def _linear(x, w, b=None):
    y = ad.einsum("...i,ij->...j", x, w)
    return y if b is None else y + b


# --- featurization ----------------------------------------------------------

def rbf_expand(d, cfg: EquiNetConfig):
    """Gaussian radial basis features of a distance array ``(...,) -> (..., K)``."""
    centers = np.linspace(0.0, cfg.rbf_max, cfg.rbf_count)
    width = cfg.rbf_max / max(cfg.rbf_count - 1, 1)
    dd = ad.reshape(d, ad.value(d).shape + (1,))
    return ad.exp((dd - centers) ** 2 * (-0.5 / width**2))


def embed_time(t, dim: int) -> np.ndarray:
    """Sinusoidal features of t on geometrically spaced frequencies, shape ``(..., dim)``.

    The top frequency is kept moderate (25 rad over the unit interval): the
    whole transform must stay smooth enough in t for quadratically convergent
    central differences, and higher bands would dominate the third derivative.
    """
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(25.0), half))
    phase = t[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def embed_composition(counts, params, cfg: EquiNetConfig, prefix: str):
    """Embed per-type atom counts; depends on proportions only.

    Each type owns a learned embedding which is weighted by the fraction of
    atoms it contributes; the weighted embeddings are flattened and passed
    through a two-layer map.
    """
    raw = np.asarray(ad.value(counts), dtype=np.float64)
    if np.any(raw < 0):
        raise InvalidInputError("composition counts must be nonnegative")
    totals = raw.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise InvalidInputError("composition must contain at least one atom")
    weights = raw / totals  # (..., D)
    emb = params[f"{prefix}/type_emb"]  # (D, E)
    weighted = ad.reshape(weights, weights.shape + (1,)) * emb  # (..., D, E)
    flat = ad.reshape(weighted, weights.shape[:-1] + (weights.shape[-1] * cfg.cond_type_dim,))
    h = _silu(_linear(flat, params[f"{prefix}/w0"], params[f"{prefix}/b0"]))
    return _linear(h, params[f"{prefix}/w1"], params[f"{prefix}/b1"])


# --- message passing --------------------------------------------------------

def encode(params, role: str, cfg: EquiNetConfig, positions, features, t,
           cond_emb=None) -> HiddenState:
    """Run the message-passing trunk of subnet ``role`` on a (batched) graph.

    ``positions`` must be centered ``(..., M, 3)``; ``t`` is a scalar or a
    leading-batch array.  Returns the final hidden state.
    """
    m = ad.value(positions).shape[-2]
    h, hv = cfg.hidden, cfg.vector_hidden

    # align every input on a common set of leading batch axes (graphs may be
    # evaluated at several times at once, or times at several graphs)
    t_arr = np.asarray(t, dtype=np.float64)
    batch_shape = np.broadcast_shapes(ad.value(positions).shape[:-2], t_arr.shape)
    if ad.value(positions).shape[:-2] != batch_shape:
        positions = ad.broadcast_to(positions, batch_shape + ad.value(positions).shape[-2:])
        features = ad.broadcast_to(features, batch_shape + ad.value(features).shape[-2:])

    t_emb = embed_time(np.broadcast_to(t_arr, batch_shape), cfg.time_dim)
    t_nodes = np.broadcast_to(t_emb[..., None, :], batch_shape + (m, cfg.time_dim))
    scalar_inputs = [features, t_nodes]
    if cfg.conditional:
        if cond_emb is None:
            raise ConfigError("conditional network called without a condition embedding")
        cond_nodes = ad.broadcast_to(
            ad.reshape(cond_emb, ad.value(cond_emb).shape[:-1] + (1, cfg.cond_dim)),
            batch_shape + (m, cfg.cond_dim))
        scalar_inputs.append(cond_nodes)
    s = _linear(ad.concat(scalar_inputs, axis=-1),
                params[f"{role}/embed/w"], params[f"{role}/embed/b"])
    v = np.zeros(batch_shape + (m, hv, 3))

    rel = positions[..., :, None, :] - positions[..., None, :, :]  # (..., M, M, 3)
    # unit shift on the diagonal keeps sqrt smooth where rel = 0
    dist = ad.sum(rel * rel, axis=-1) + np.eye(m) + 1e-12
    phi = rbf_expand(ad.sqrt(dist), cfg)
    mask = (1.0 - np.eye(m))[..., None]  # drop self-messages

    s_shape = batch_shape + (m, m, h)
    for layer in range(cfg.layers):
        p = f"{role}/l{layer}"
        si = ad.broadcast_to(s[..., :, None, :], s_shape)
        sj = ad.broadcast_to(s[..., None, :, :], s_shape)
        e_hidden = _silu(_linear(ad.concat([si, sj, phi], axis=-1),
                                 params[f"{p}/edge_w0"], params[f"{p}/edge_b0"]))
        msg = _linear(e_hidden, params[f"{p}/edge_w1"], params[f"{p}/edge_b1"]) * mask
        m_s = msg[..., :h]
        gate_v = msg[..., h:h + hv]
        gate_d = msg[..., h + hv:]

        agg_s = ad.sum(m_s, axis=-2)
        agg_v = ad.einsum("...ijc,...jck->...ick", gate_v, v) \
            + ad.einsum("...ijc,...ijk->...ick", gate_d, rel)

        dots = ad.einsum("...ick,...ick->...ic", v, agg_v)
        norms = ad.sum(v * v, axis=-1)
        node_in = ad.concat([s, agg_s, dots, norms], axis=-1)
        node_hidden = _silu(_linear(node_in, params[f"{p}/node_w0"], params[f"{p}/node_b0"]))
        node_out = _linear(node_hidden, params[f"{p}/node_w1"], params[f"{p}/node_b1"])
        s = s + node_out[..., :h]
        gate = node_out[..., h:]
        mixed = ad.einsum("...ick,ce->...iek", v, params[f"{p}/vmix"])
        v = v + agg_v + ad.reshape(gate, ad.value(gate).shape + (1,)) * mixed

        if cfg.conditional:
            cond_in = ad.concat([s, cond_nodes], axis=-1)
            s = s + _silu(_linear(cond_in, params[f"{p}/cond_w"], params[f"{p}/cond_b"]))

    return HiddenState(scalars=s, vectors=v)


# --- readouts ---------------------------------------------------------------

def readout_datapoint(params, role: str, state: HiddenState, z_positions):
    """Predict the clean data point from a latent: centered positions + features."""
    shift = ad.einsum("...ick,c->...ik", state.vectors, params[f"{role}/out/vec"])
    pos = zero_com_project(z_positions + shift)
    feats = _linear(state.scalars, params[f"{role}/out/feat_w"], params[f"{role}/out/feat_b"])
    return pos, feats


def readout_mean_heads(params, role: str, state: HiddenState):
    """Mean residuals only (used when the scale stays on a fixed schedule)."""
    mu_pos = zero_com_project(
        ad.einsum("...ick,c->...ik", state.vectors, params[f"{role}/out/mu_vec"]))
    mu_feat = _linear(state.scalars, params[f"{role}/out/feat_mu_w"],
                      params[f"{role}/out/feat_mu_b"])
    return mu_pos, mu_feat


def readout_forward_heads(params, role: str, state: HiddenState) -> ForwardHeads:
    """Produce the forward-transform head values from a hidden state.

    The per-node mixing matrix is the Gram square A A^T of a sum of outer
    products of equivariant vector readouts.  Two properties follow: it
    conjugates under rotations (B -> R B R^T, required for the assembled
    transform to commute with rotations pointwise), and it is positive
    semidefinite, so the block s I + t(1-t) B stays invertible for every
    positive scalar part no matter where the optimizer wanders.
    """
    s, v = state.scalars, state.vectors
    mu_pos = zero_com_project(ad.einsum("...ick,c->...ik", v, params[f"{role}/out/mu_vec"]))
    left = ad.einsum("...ick,ca->...iak", v, params[f"{role}/out/mix_u"])
    right = ad.einsum("...ick,ca->...iak", v, params[f"{role}/out/mix_w"])
    factor = ad.einsum("...iak,...ial->...ikl", left, right)
    mix = ad.einsum("...ikl,...iml->...ikm", factor, factor)
    pos_scale = ad.softplus(
        _linear(s, params[f"{role}/out/pos_scale_w"], params[f"{role}/out/pos_scale_b"])
    )[..., 0] + SCALE_FLOOR
    feat_scale = ad.softplus(
        _linear(s, params[f"{role}/out/feat_scale_w"], params[f"{role}/out/feat_scale_b"])
    ) + SCALE_FLOOR
    mu_feat = _linear(s, params[f"{role}/out/feat_mu_w"], params[f"{role}/out/feat_mu_b"])
    return ForwardHeads(pos_mean_residual=mu_pos, feat_mean_residual=mu_feat,
                        pos_scale=pos_scale, feat_scale=feat_scale, pos_mix=mix)


# --- initialization ---------------------------------------------------------

def _lin_init(rng: np.random.Generator, n_in: int, n_out: int, scale: float = 1.0):
    return rng.standard_normal((n_in, n_out)) * (scale / np.sqrt(n_in)), np.zeros(n_out)


def init_subnet_params(store: ParamStore, role: str, cfg: EquiNetConfig,
                       feature_dim: int, rng: np.random.Generator, *,
                       heads: bool, mean_only: bool = False) -> None:
    """Register trunk + readout parameters for one subnet under ``role/``.

    ``heads=True`` adds the forward-transform readout (zero-initialized so the
    transform starts exactly on the boundary-pinned interpolant), ``heads=False``
    adds the data-point readout.  ``mean_only`` skips the scale/mixing readouts
    for the kind that only learns the mean.
    """
    h, hv, k = cfg.hidden, cfg.vector_hidden, cfg.rbf_count
    d_in = feature_dim + cfg.time_dim + (cfg.cond_dim if cfg.conditional else 0)
    w, b = _lin_init(rng, d_in, h)
    store.add(f"{role}/embed/w", w)
    store.add(f"{role}/embed/b", b)
    for layer in range(cfg.layers):
        p = f"{role}/l{layer}"
        w, b = _lin_init(rng, 2 * h + k, h)
        store.add(f"{p}/edge_w0", w)
        store.add(f"{p}/edge_b0", b)
        # small output-layer init keeps the residual stream near its inputs at
        # any depth; training grows the updates as needed
        w, b = _lin_init(rng, h, h + 2 * hv, scale=0.1)
        store.add(f"{p}/edge_w1", w)
        store.add(f"{p}/edge_b1", b)
        w, b = _lin_init(rng, 2 * h + 2 * hv, h)
        store.add(f"{p}/node_w0", w)
        store.add(f"{p}/node_b0", b)
        w, b = _lin_init(rng, h, h + hv, scale=0.1)
        store.add(f"{p}/node_w1", w)
        store.add(f"{p}/node_b1", b)
        store.add(f"{p}/vmix", rng.standard_normal((hv, hv)) * (0.1 / np.sqrt(hv)))
        if cfg.conditional:
            w, b = _lin_init(rng, h + cfg.cond_dim, h, scale=0.1)
            store.add(f"{p}/cond_w", w)
            store.add(f"{p}/cond_b", b)
    if heads:
        store.add(f"{role}/out/mu_vec", np.zeros(hv))
        if not mean_only:
            store.add(f"{role}/out/mix_u", rng.standard_normal((hv, 3)) / np.sqrt(hv))
            # small (not zero) init: the Gram square would have a vanishing
            # gradient at an exactly zero factor
            store.add(f"{role}/out/mix_w", rng.standard_normal((hv, 3)) * 0.02)
            store.add(f"{role}/out/pos_scale_w", np.zeros((h, 1)))
            store.add(f"{role}/out/pos_scale_b", np.zeros(1))
            store.add(f"{role}/out/feat_scale_w", np.zeros((h, feature_dim)))
            store.add(f"{role}/out/feat_scale_b", np.zeros(feature_dim))
        store.add(f"{role}/out/feat_mu_w", np.zeros((h, feature_dim)))
        store.add(f"{role}/out/feat_mu_b", np.zeros(feature_dim))
    else:
        # zero-initialized predictor readout: the initial prediction is
        # (z positions, zero features), which is already accurate at small t
        # and keeps the early drift-matching gradients sane
        store.add(f"{role}/out/vec", np.zeros(hv))
        store.add(f"{role}/out/feat_w", np.zeros((h, feature_dim)))
        store.add(f"{role}/out/feat_b", np.zeros(feature_dim))


def init_condition_params(store: ParamStore, prefix: str, cfg: EquiNetConfig,
                          rng: np.random.Generator) -> None:
    store.add(f"{prefix}/type_emb",
              rng.standard_normal((cfg.cond_types, cfg.cond_type_dim)))
    w, b = _lin_init(rng, cfg.cond_types * cfg.cond_type_dim, cfg.cond_hidden)
    store.add(f"{prefix}/w0", w)
    store.add(f"{prefix}/b0", b)
    w, b = _lin_init(rng, cfg.cond_hidden, cfg.cond_dim)
    store.add(f"{prefix}/w1", w)
    store.add(f"{prefix}/b1", b)


# --- differentiation --------------------------------------------------------

def gradient_and_value(loss_fn, store: ParamStore) -> tuple[np.ndarray, float]:
    """Reverse-mode gradient of ``loss_fn(params_dict)`` over every segment.

    The loss evaluator receives a dict of named tensors and must return a
    scalar.  Returns the flat gradient (segment order) and the loss value.
    """
    tensors = store.tensors(requires_grad=True)
    loss = loss_fn(tensors)
    loss_value = float(np.asarray(ad.value(loss)))
    if not np.isfinite(loss_value):
        raise NonFiniteLossError("loss")
    if not ad.is_tensor(loss):
        return np.zeros(store.size), loss_value  # loss ignores the parameters
    loss.backward()
    parts = []
    for name, _ in store.items():
        t = tensors[name]
        parts.append((t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0), loss_value


def gradient(loss_fn, store: ParamStore) -> np.ndarray:
    """Flat parameter gradient of a deterministic scalar loss evaluator."""
    return gradient_and_value(loss_fn, store)[0]
