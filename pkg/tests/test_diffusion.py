import numpy as np
import pytest

from conftest import centered, randomize_readouts, tiny_model
from equigen import autodiff as ad
from equigen import diffusion as dif
from equigen import molecules as mol
from equigen.errors import ConfigError, InvalidInputError
from equigen.forward import forward_apply
from equigen.geometry import (GeometricGraph, random_rotation, rotate_graph,
                              sample_invariant_noise)
from equigen.optim import OptimizerSettings
from equigen.rng import RandomSource
from equigen.schedules import beta_value, vp_alpha_sigma


def _sample_case(seed=50, m=4, d=3):
    rng = RandomSource(seed).stream("case")
    x_pos = centered(rng, m)
    x_feat = rng.standard_normal((m, d)) * 0.25
    eps = sample_invariant_noise(m, d, rng)
    return x_pos, x_feat, eps, rng


def test_forward_kind_aliases():
    assert dif.canonical_forward_kind("edm_star") == "vp"
    assert dif.canonical_forward_kind("edm_star_gamma") == "vp_gamma"
    assert dif.canonical_forward_kind("mu_only") == "learned_mean"
    with pytest.raises(ConfigError):
        dif.canonical_forward_kind("nonsense")


def test_vp_path_boundary_clamps_sigma():
    model = tiny_model("vp")
    x_pos, x_feat, eps, _ = _sample_case()
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(0.0)
    np.testing.assert_allclose(np.asarray(path.pos_mean), x_pos, atol=1e-15)
    np.testing.assert_allclose(np.asarray(path.pos_blocks)[0], 0.01 * np.eye(3),
                               atol=1e-15)  # sigma floor = delta keeps it invertible
    np.testing.assert_allclose(np.asarray(path.feat_scales), 0.01, atol=1e-15)


def test_learned_path_with_zero_heads_is_interpolant():
    # fresh init: mean residuals are exactly zero, mixing is O(1e-4) PSD
    model = tiny_model("learned")
    x_pos, x_feat, eps, _ = _sample_case()
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    t = 0.35
    path = pf(t)
    np.testing.assert_allclose(np.asarray(ad.value(path.pos_mean)), (1 - t) * x_pos,
                               atol=1e-12)
    scale = 0.01 ** (1 - t) * (np.logaddexp(0, 0) + 1e-6) ** (t * (1 - t))
    np.testing.assert_allclose(np.asarray(ad.value(path.pos_blocks))[2],
                               scale * np.eye(3), atol=1e-3)
    # exactly zero heads reproduce the interpolant exactly, per the assembly formula
    from equigen.forward import assemble_path
    from equigen.network import ForwardHeads
    zero_heads = ForwardHeads(
        pos_mean_residual=np.zeros_like(x_pos), feat_mean_residual=np.zeros_like(x_feat),
        pos_scale=np.full(4, np.logaddexp(0, 0) + 1e-6),
        feat_scale=np.full((4, 3), np.logaddexp(0, 0) + 1e-6),
        pos_mix=np.zeros((4, 3, 3)))
    exact = assemble_path(x_pos, x_feat, t, zero_heads, 0.01)
    np.testing.assert_allclose(np.asarray(exact.pos_blocks)[2], scale * np.eye(3),
                               atol=1e-15)


def test_learned_mean_path_uses_vp_scale():
    model = tiny_model("learned_mean")
    x_pos, x_feat, eps, _ = _sample_case()
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    t = 0.5
    path = pf(t)
    _, sigma = vp_alpha_sigma(t)
    np.testing.assert_allclose(np.asarray(ad.value(path.pos_mean)), (1 - t) * x_pos,
                               atol=1e-12)
    np.testing.assert_allclose(np.asarray(ad.value(path.feat_scales)),
                               max(sigma, 0.01), atol=1e-12)


def test_vp_gamma_path_pins_endpoints():
    model = tiny_model("vp_gamma")
    x_pos, x_feat, _, _ = _sample_case()
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    p0 = pf(0.0)
    np.testing.assert_allclose(np.asarray(ad.value(p0.pos_mean)), x_pos, atol=1e-12)
    p1 = pf(1.0)
    alpha1, sigma1 = vp_alpha_sigma(1.0)
    np.testing.assert_allclose(np.asarray(ad.value(p1.pos_mean)), alpha1 * x_pos,
                               atol=1e-12)
    np.testing.assert_allclose(np.asarray(ad.value(p1.feat_scales)), sigma1, atol=1e-12)


def test_score_zero_at_the_mean():
    model = tiny_model("learned")
    randomize_readouts(model, 51)
    x_pos, x_feat, eps, _ = _sample_case()
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(0.4)
    score = dif.conditional_score(path, ad.value(path.pos_mean), ad.value(path.feat_mean))
    np.testing.assert_allclose(ad.value(score.pos), 0.0, atol=1e-10)
    np.testing.assert_allclose(ad.value(score.feat), 0.0, atol=1e-10)


def test_score_closed_form_on_vp_path():
    model = tiny_model("vp")
    x_pos, x_feat, eps, rng = _sample_case()
    t = 0.6
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(t)
    z_pos, z_feat = forward_apply(path, *eps)
    score = dif.conditional_score(path, z_pos, z_feat)
    alpha, sigma = vp_alpha_sigma(t)
    np.testing.assert_allclose(ad.value(score.pos), (alpha * x_pos - z_pos) / sigma**2,
                               atol=1e-10)
    np.testing.assert_allclose(ad.value(score.feat), (alpha * x_feat - z_feat) / sigma**2,
                               atol=1e-10)


def test_score_matches_log_density_gradient():
    # oracle: central differences of log q(z|x) computed through the inverse
    # map and the independentlyassembled log-determinant
    from equigen.forward import forward_invert, forward_logdet_inv
    from equigen.geometry import zero_com_basis

    model = tiny_model("learned")
    randomize_readouts(model, 52)
    x_pos, x_feat, eps, _ = _sample_case()
    t = 0.45
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(t)
    z_pos, z_feat = forward_apply(path, *eps)
    z_pos, z_feat = ad.value(z_pos), ad.value(z_feat)
    score = dif.conditional_score(path, z_pos, z_feat)

    def logq(zp, zf):
        ep, ef = forward_invert(path, zp, zf)
        ep, ef = ad.value(ep), ad.value(ef)
        return float(-0.5 * (ep**2).sum() - 0.5 * (ef**2).sum()
                     + ad.value(forward_logdet_inv(path)))

    h = 1e-5
    m = z_pos.shape[0]
    basis = zero_com_basis(m)
    grad_sub = np.zeros(basis.shape[1])
    for k in range(basis.shape[1]):
        step = basis[:, k].reshape(m, 3) * h
        grad_sub[k] = (logq(z_pos + step, z_feat) - logq(z_pos - step, z_feat)) / (2 * h)
    fd_pos = (basis @ grad_sub).reshape(m, 3)
    np.testing.assert_allclose(ad.value(score.pos), fd_pos,
                               rtol=1e-4, atol=1e-6 * np.abs(fd_pos).max())
    fd_feat = np.zeros_like(z_feat)
    for (i, j), _ in np.ndenumerate(z_feat):
        dz = np.zeros_like(z_feat)
        dz[i, j] = h
        fd_feat[i, j] = (logq(z_pos, z_feat + dz) - logq(z_pos, z_feat - dz)) / (2 * h)
    np.testing.assert_allclose(ad.value(score.feat), fd_feat,
                               rtol=1e-4, atol=1e-6 * np.abs(fd_feat).max())


def test_reverse_drift_identities():
    model = tiny_model("learned")
    randomize_readouts(model, 53)
    x_pos, x_feat, eps, _ = _sample_case()
    t = 0.5
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(t)
    z_pos, z_feat = (ad.value(v) for v in forward_apply(path, *eps))
    # g = 0 collapses the bridge onto the ode slope
    fb0 = dif.reverse_sde_drift(pf, z_pos, z_feat, t, 0.0)
    ode = dif.conditional_ode_drift(pf, z_pos, z_feat, t)
    np.testing.assert_allclose(ad.value(fb0.pos), ad.value(ode.pos), atol=1e-12)
    # forward and reverse bridges differ by exactly g^2 * score
    g = 0.8
    ff = dif.forward_sde_drift(pf, z_pos, z_feat, t, g)
    fb = dif.reverse_sde_drift(pf, z_pos, z_feat, t, g)
    score = dif.conditional_score(path, z_pos, z_feat)
    np.testing.assert_allclose(ad.value(ff.pos) - ad.value(fb.pos),
                               g**2 * ad.value(score.pos), atol=1e-10)
    np.testing.assert_allclose(ad.value(ff.feat) - ad.value(fb.feat),
                               g**2 * ad.value(score.feat), atol=1e-10)


def test_vp_reverse_drift_matches_closed_form():
    # with g^2 = beta(t), the bridge drift reduces to f(t) z - g^2 * score with
    # f(t) = -beta(t)/2 (the classical variance-preserving reversal)
    model = tiny_model("vp")
    x_pos, x_feat, eps, _ = _sample_case(m=5)
    t = 0.35
    g = float(np.sqrt(beta_value(t)))
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    path = pf(t)
    z_pos, z_feat = forward_apply(path, *eps)
    fb = dif.reverse_sde_drift(pf, z_pos, z_feat, t, g)
    score = dif.conditional_score(path, z_pos, z_feat)
    f_lin = -0.5 * beta_value(t)
    np.testing.assert_allclose(ad.value(fb.pos),
                               f_lin * z_pos - g**2 * ad.value(score.pos), atol=1e-6)
    np.testing.assert_allclose(ad.value(fb.feat),
                               f_lin * z_feat - g**2 * ad.value(score.feat), atol=1e-6)


def test_generative_drift_with_perfect_predictor():
    model = tiny_model("learned")
    randomize_readouts(model, 54)
    x_pos, x_feat, eps, _ = _sample_case()
    t = 0.55
    pf = dif.make_path_fn(model, model.params, x_pos, x_feat, None)
    z_pos, z_feat = (ad.value(v) for v in forward_apply(pf(t), *eps))
    fb = dif.reverse_sde_drift(pf, z_pos, z_feat, t, 0.7)
    fhat = dif.generative_drift(model, model.params, z_pos, z_feat, t, 0.7,
                                predictor=lambda zp, zf, tt: (x_pos, x_feat))
    np.testing.assert_allclose(ad.value(fhat.pos), ad.value(fb.pos), atol=1e-12)
    np.testing.assert_allclose(ad.value(fhat.feat), ad.value(fb.feat), atol=1e-12)


def test_drifts_stay_centered():
    model = tiny_model("learned")
    randomize_readouts(model, 55)
    x_pos, x_feat, eps, rng = _sample_case(m=6)
    t = 0.4
    z_pos, z_feat = (ad.value(v) for v in
                     forward_apply(dif.make_path_fn(model, model.params, x_pos, x_feat,
                                                    None)(t), *eps))
    drift = dif.generative_drift(model, model.params, z_pos, z_feat, t, 1.0)
    assert np.abs(ad.value(drift.pos).mean(axis=0)).max() <= 1e-8


def test_loss_zero_for_perfect_predictor():
    model = tiny_model("learned")
    randomize_readouts(model, 56)
    x_pos, x_feat, eps, _ = _sample_case()
    val = dif.loss_terms(model, model.params, x_pos, x_feat, 0.5, *eps,
                         predictor=lambda zp, zf, tt: (x_pos, x_feat))
    assert float(np.asarray(ad.value(val))) <= 1e-16


def test_loss_nonnegative_and_invariant():
    model = tiny_model("learned")
    randomize_readouts(model, 57, scale=0.01)
    x_pos, x_feat, eps, rng = _sample_case()
    x = GeometricGraph(x_pos, x_feat)
    t = 0.5
    v = dif.loss_term(model, x, t, *eps)
    assert v >= 0.0
    rot = random_rotation(rng)
    v_rot = dif.loss_term(model, rotate_graph(rot, x), t, eps[0] @ rot.T, eps[1])
    assert abs(v - v_rot) <= 1e-5


def test_batched_loss_matches_singles():
    model = tiny_model("learned")
    randomize_readouts(model, 58, scale=0.01)
    x_pos, x_feat, eps, _ = _sample_case()
    ts = np.array([0.25, 0.5, 0.75])
    batched = ad.value(dif.loss_terms(
        model, model.params, np.stack([x_pos] * 3), np.stack([x_feat] * 3), ts,
        np.stack([eps[0]] * 3), np.stack([eps[1]] * 3)))
    for i, t in enumerate(ts):
        single = dif.loss_term(model, GeometricGraph(x_pos, x_feat), float(t), *eps)
        np.testing.assert_allclose(batched[i], single, rtol=1e-12)


def _toy_dataset(vocab, names=("tetra",), count=40, seed=60):
    data = mol.gen_synthetic(names, 0.05, count, RandomSource(seed).stream("data"), vocab)
    return data, [mol.encode_graph(r, vocab, 0.25) for r in data]


def test_train_improves_loss_and_is_reproducible(vocab):
    _, graphs = _toy_dataset(vocab)
    settings = OptimizerSettings(lr=1e-3, clip_norm=10.0, batch_size=4, steps=200,
                                 log_every=0)

    def run():
        model = tiny_model("learned", elements=vocab.symbols, g0=0.3)
        result = dif.train(graphs, model, RandomSource(31), settings)
        return [r.loss for r in result.trace]

    losses = run()
    assert np.nanmean(losses[-50:]) < np.nanmean(losses[:50])
    assert losses == run()  # bit-identical trace for identical seeds


def test_train_vp_kind_same_loop(vocab):
    _, graphs = _toy_dataset(vocab)
    model = tiny_model("vp", elements=vocab.symbols, g0=0.3)
    result = dif.train(graphs, model, RandomSource(32),
                       OptimizerSettings(lr=1e-3, batch_size=4, steps=50, log_every=0))
    assert len(result.trace) == 50
    assert np.isfinite([r.loss for r in result.trace]).all()


def test_train_rejects_empty_and_unconditioned(vocab):
    model = tiny_model("learned", elements=vocab.symbols)
    with pytest.raises(InvalidInputError):
        dif.train([], model, RandomSource(0))
    cond_model = tiny_model("learned", elements=vocab.symbols, conditional=True)
    _, graphs = _toy_dataset(vocab)
    with pytest.raises(InvalidInputError):
        dif.train(graphs, cond_model, RandomSource(0),
                  OptimizerSettings(steps=1, batch_size=2))


def test_sample_frozen_dynamics_returns_prior(vocab):
    model = tiny_model("learned", elements=vocab.symbols, g0=0.0)
    dist = mol.SizeDistribution(sizes=np.array([4]), probs=np.array([1.0]))
    states = []
    zero_drift = lambda zp, zf, t: dif.Drift(pos=np.zeros_like(zp), feat=np.zeros_like(zf))
    out = dif.sample(model, 3, RandomSource(70), steps=12, size_distribution=dist,
                     drift_fn=zero_drift,
                     state_callback=lambda k, t, zp, zf: states.append((zp, zf)))
    first_pos, first_feat = states[0]
    last_pos, last_feat = states[-1]
    np.testing.assert_array_equal(first_pos, last_pos)
    np.testing.assert_array_equal(first_feat, last_feat)
    assert len(out.graphs) == 3 and not out.aborted


def test_sample_states_stay_centered(vocab):
    model = tiny_model("learned", elements=vocab.symbols, g0=0.3)
    dist = mol.SizeDistribution(sizes=np.array([3, 4]), probs=np.array([0.5, 0.5]))
    residuals = []
    dif.sample(model, 4, RandomSource(71), steps=20, size_distribution=dist,
               state_callback=lambda k, t, zp, zf:
               residuals.append(np.abs(zp.mean(axis=1)).max()))
    assert max(residuals) <= 1e-8


def test_sample_deterministic_and_conditional_sizes(vocab):
    model = tiny_model("learned", elements=vocab.symbols, conditional=True, g0=0.3)
    cond = np.zeros(len(vocab), dtype=np.int64)
    cond[vocab.index("C")] = 2
    cond[vocab.index("H")] = 3
    a = dif.sample(model, 3, RandomSource(72), steps=10, condition=cond)
    b = dif.sample(model, 3, RandomSource(72), steps=10, condition=cond)
    assert a.sizes == [5, 5, 5]
    for ga, gb in zip(a.graphs, b.graphs):
        np.testing.assert_array_equal(ga.positions, gb.positions)


def test_sample_requires_size_source(vocab):
    model = tiny_model("learned", elements=vocab.symbols)
    with pytest.raises(InvalidInputError):
        dif.sample(model, 2, RandomSource(73), steps=10)


def test_checkpointed_size_distribution_tv(vocab):
    # drawing from the empirical size distribution reproduces it closely
    dist = mol.SizeDistribution(sizes=np.array([3, 5]), probs=np.array([2 / 3, 1 / 3]))
    rng = RandomSource(74).stream("sizes")
    draws = np.array([dist.sample(rng) for _ in range(10_000)])
    freq3 = (draws == 3).mean()
    tv = 0.5 * (abs(freq3 - 2 / 3) + abs((1 - freq3) - 1 / 3))
    assert tv <= 0.02
