import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from rtgb import core_rbm
from rtgb import temporal as tp
from rtgb.errors import DimensionError, DivergenceError, EnumerationLimitError, FormatError
from rtgb.temporal import RtgbParams, TrainConfig, VisibleMode


def random_params(rng, n_v, n_h, scale=0.5, mode=VisibleMode.CONTINUOUS):
    return RtgbParams(
        w=rng.normal(0, scale, (n_v, n_h)),
        u=rng.normal(0, 1.0, (n_h, n_h)),
        b=rng.normal(0, scale, n_v),
        c=rng.normal(0, 1.0, n_h),
        s=rng.uniform(0.7, 1.3, n_v),
        mode=mode,
    )


def gradient_instance(seed):
    """3 visible x 2 hidden with s = 1 and large gradients (data far from the model mean)."""
    rng = np.random.default_rng(seed)
    p = RtgbParams(
        w=rng.normal(1.0, 0.2, (3, 2)),
        u=rng.normal(0, 1, (2, 2)),
        b=rng.normal(0, 0.3, 3),
        c=rng.normal(-3, 0.3, 2),
        s=np.ones(3),
    )
    return p, rng.normal(2.5, 0.3, (3, 3))


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_hidden_mean_step_zero_params():
    p = RtgbParams.zeros(4, 3)
    np.testing.assert_array_equal(tp.hidden_mean_step(p, np.ones(4)), 0.5)
    np.testing.assert_array_equal(tp.hidden_mean_step(p, np.ones(4), np.ones(3)), 0.5)


def test_hidden_mean_two_step_hand_evaluation():
    p = RtgbParams(
        w=[[0.5, -1.0], [2.0, 0.25]],
        u=[[0.3, -0.7], [1.1, 0.4]],
        b=[0.1, -0.2],
        c=[0.2, -0.1],
        s=[1.0, 2.0],
    )
    v1, v2 = np.array([0.4, 0.9]), np.array([-0.3, 1.5])
    a1 = [0.4 * 0.5 + 0.9 * 2.0 / 4 + 0.2, 0.4 * -1.0 + 0.9 * 0.25 / 4 - 0.1]
    h1 = [sig(a1[0]), sig(a1[1])]
    a2 = [
        -0.3 * 0.5 + 1.5 * 2.0 / 4 + 0.2 + 0.3 * h1[0] - 0.7 * h1[1],
        -0.3 * -1.0 + 1.5 * 0.25 / 4 - 0.1 + 1.1 * h1[0] + 0.4 * h1[1],
    ]
    got1 = tp.hidden_mean_step(p, v1)
    got2 = tp.hidden_mean_step(p, v2, got1)
    np.testing.assert_allclose(got1, h1, rtol=0, atol=1e-12)
    np.testing.assert_allclose(got2, [sig(a2[0]), sig(a2[1])], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(tp.hidden_means(p, np.stack([v1, v2])), np.stack([got1, got2]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_v=st.integers(1, 6), n_h=st.integers(1, 5))
def test_hidden_means_strictly_inside_unit_interval(seed, n_v, n_h):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n_v, n_h)
    hh = tp.hidden_means(p, rng.uniform(0, 1, (4, n_v)))
    assert hh.shape == (4, n_h)
    assert np.all((hh > 0) & (hh < 1))


def test_cond_hidden_without_temporal_coupling_is_static():
    rng = np.random.default_rng(1)
    p = random_params(rng, 5, 3).replace(u=np.zeros((3, 3)))
    v = rng.normal(size=5)
    static = core_rbm.hidden_prob(p.static(), v)
    assert np.max(np.abs(tp.cond_hidden(p, v, rng.uniform(size=3)) - static)) <= 1e-15


def test_cond_hidden_zero_previous_mean_is_first_step():
    rng = np.random.default_rng(2)
    p = random_params(rng, 4, 3)
    v = rng.normal(size=4)
    np.testing.assert_array_equal(tp.cond_hidden(p, v, np.zeros(3)), tp.hidden_mean_step(p, v))


def test_cond_hidden_scalar_oracle():
    rng = np.random.default_rng(3)
    p = random_params(rng, 4, 3)
    v, prev = rng.normal(size=4), rng.uniform(size=3)
    expected = []
    for j in range(3):
        a = p.c[j]
        for i in range(4):
            a += p.w[i, j] * v[i] / p.s[i] ** 2
        for k in range(3):
            a += p.u[j, k] * prev[k]
        expected.append(sig(a))
    np.testing.assert_allclose(tp.cond_hidden(p, v, prev), expected, rtol=0, atol=1e-12)


def test_cond_visible_contracts():
    rng = np.random.default_rng(4)
    p = random_params(rng, 3, 2)
    d = tp.cond_visible(p, np.zeros(2))
    np.testing.assert_array_equal(d.mean, p.b)
    np.testing.assert_array_equal(d.std, p.s)
    np.testing.assert_allclose(tp.cond_visible(p, [0.0, 1.0]).mean, p.b + p.w[:, 1], atol=1e-15)
    np.testing.assert_allclose(tp.cond_visible(p, np.zeros(2), VisibleMode.BINARY).mean, sig(p.b), atol=1e-15)
    sat = RtgbParams(w=[[10.0], [-10.0]], u=[[0.0]], b=[0.0, 0.0], c=[0.0], s=[1.0, 1.0], mode=VisibleMode.BINARY)
    np.testing.assert_allclose(tp.cond_visible(sat, [1.0]).mean, [1.0, 0.0], atol=1e-4)


def test_dimension_errors():
    p = RtgbParams.zeros(3, 2)
    with pytest.raises(DimensionError):
        tp.hidden_mean_step(p, np.zeros(4))
    with pytest.raises(DimensionError):
        tp.cond_hidden(p, np.zeros(3), np.zeros(3))
    with pytest.raises(DimensionError):
        tp.cond_visible(p, np.zeros(3))
    with pytest.raises(DimensionError):
        RtgbParams(w=np.zeros((3, 2)), u=np.zeros((2, 3)), b=np.zeros(3), c=np.zeros(2), s=np.ones(3))


def test_cd_zero_bundle_when_reconstruction_equals_data():
    rng = np.random.default_rng(5)
    p = random_params(rng, 4, 3)
    seq = rng.uniform(size=(5, 4))

    def echo(params, seq, prev, K, rng, chains):
        return np.broadcast_to(seq, (chains,) + seq.shape)

    g = tp.cd_gradients(p, seq, 3, rng, chains=2, sampler=echo)
    for part in g:
        np.testing.assert_allclose(part, 0.0, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_v=st.integers(1, 5), n_h=st.integers(1, 4), T=st.integers(2, 5))
def test_cd_gradient_shapes(seed, n_v, n_h, T):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n_v, n_h)
    g = tp.cd_gradients(p, rng.uniform(size=(T, n_v)), 2, rng)
    assert g.dw.shape == p.w.shape and g.du.shape == p.u.shape
    assert g.db.shape == p.b.shape and g.dc.shape == p.c.shape


def test_cd_rejects_bad_arguments():
    p = RtgbParams.zeros(3, 2)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        tp.cd_gradients(p, np.zeros((3, 3)), 0, rng)
    with pytest.raises(ValueError):
        tp.cd_gradients(p, np.zeros((1, 3)), 1, rng)


def _perturbed(params, name, index, delta):
    arr = np.array(getattr(params, name))
    arr[index] += delta
    return params.replace(**{name: arr})


def test_exact_gradient_matches_finite_differences():
    p, seq = gradient_instance(0)
    p = p.replace(s=np.array([0.8, 1.0, 1.3]))
    prev = tp._previous_means(tp.hidden_means(p, seq))
    g = tp.exact_loglik_gradient(p, seq)
    eps = 1e-5
    for name, grad in zip(("w", "u", "b", "c"), g):
        for index in np.ndindex(grad.shape):
            up = tp.exact_conditional_loglik(_perturbed(p, name, index, eps), seq, prev)
            down = tp.exact_conditional_loglik(_perturbed(p, name, index, -eps), seq, prev)
            fd = (up - down) / (2 * eps)
            assert abs(fd - grad[index]) <= 1e-4 * abs(grad[index]), (name, index, fd, grad[index])


def test_cd_converges_to_exact_gradient():
    p, seq = gradient_instance(0)
    exact = tp.exact_loglik_gradient(p, seq).flat()
    errors = {}
    for K in (1, 3, 10, 50):
        errors[K] = np.mean(
            [np.mean(np.abs(tp.cd_gradients(p, seq, K, np.random.default_rng(s), chains=200).flat() - exact) / np.abs(exact)) for s in range(20)]
        )
    ks = sorted(errors)
    rho = spearmanr(ks, [errors[k] for k in ks]).statistic
    assert rho == pytest.approx(-1.0)
    cd = tp.cd_gradients(p, seq, 50, np.random.default_rng(0), chains=200).flat()
    assert np.all(np.abs(cd - exact) <= 0.1 * np.abs(exact))


def test_exact_transition_distribution_factorises():
    rng = np.random.default_rng(6)
    p = random_params(rng, 3, 3).replace(w=np.zeros((3, 3)), u=np.zeros((3, 3)))
    table = tp.exact_transition_distribution(p, np.array([1.0, 0.0, 1.0]))
    q = sig(p.c)
    for k in range(8):
        bits = [(k >> j) & 1 for j in range(3)]
        expected = np.prod([q[j] if bits[j] else 1 - q[j] for j in range(3)])
        assert table[k] == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("mode", list(VisibleMode))
def test_exact_transition_distribution_normalised(mode):
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = random_params(rng, 4, 5, mode=mode)
        table = tp.exact_transition_distribution(p, rng.integers(0, 2, 5).astype(float))
        assert np.all(table >= 0)
        assert abs(table.sum() - 1.0) <= 1e-10


def test_exact_transition_guard():
    p = RtgbParams.zeros(1, tp.MAX_TRANSITION_HIDDEN + 1)
    with pytest.raises(EnumerationLimitError):
        tp.exact_transition_distribution(p, np.zeros(p.n_hidden))


def small_data(seed=0, n=6, L=8, V=9):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, L, V))


def test_train_zero_learning_rate_is_identity():
    rng = np.random.default_rng(8)
    p = random_params(rng, 9, 4)
    q, curve = tp.train(p, small_data(), TrainConfig(cd_steps=2, learning_rate=0.0, epochs=3))
    assert q == p
    assert len(curve) == 4


def test_train_is_deterministic():
    p = RtgbParams.initial(9, 4, np.random.default_rng(0))
    cfg = TrainConfig(cd_steps=2, learning_rate=0.05, epochs=2, seed=3)
    a, ca = tp.train(p, small_data(), cfg)
    b, cb = tp.train(p, small_data(), cfg)
    assert a == b
    assert ca == cb
    assert a != p


def test_train_divergence_guard():
    p = RtgbParams.initial(9, 4, np.random.default_rng(0))
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as err:
        tp.train(p, small_data() * 1e200, TrainConfig(cd_steps=1, learning_rate=1e200, epochs=1))
    assert err.value.epoch == 1
    assert "epoch 1" in str(err.value)


def test_train_validates_config():
    p = RtgbParams.zeros(9, 2)
    with pytest.raises(ValueError):
        TrainConfig(cd_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(input_prefix_len=5, total_len=5)
    with pytest.raises(ValueError):
        tp.train(p, small_data(L=4), TrainConfig(total_len=8))


def test_train_holdout_scores_last_tenth():
    p = RtgbParams.initial(9, 3, np.random.default_rng(0))
    data = small_data(n=20)
    _, curve = tp.train(p, data, TrainConfig(cd_steps=1, learning_rate=0.0, holdout=True))
    held = tp.evaluate(p, data[18:], 3, 8, tp.derive_rng(0, 0, 2**31)).mean_loss
    assert curve[0] == held


def test_predict_zero_params_emits_bias():
    p = RtgbParams.zeros(5, 3).replace(b=np.linspace(0, 1, 5))
    out = tp.predict(p, np.random.default_rng(0).uniform(size=(3, 5)), 4, np.random.default_rng(1))
    assert out.shape == (4, 5)
    np.testing.assert_array_equal(out, np.broadcast_to(p.b, (4, 5)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), T=st.integers(1, 4), horizon=st.integers(1, 6), batch=st.integers(0, 3))
def test_predict_shape_and_finite(seed, T, horizon, batch):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 6, 3)
    shape = ((batch,) if batch else ()) + (T, 6)
    out = tp.predict(p, rng.uniform(size=shape), horizon, rng)
    assert out.shape == shape[:-2] + (horizon, 6)
    assert np.all(np.isfinite(out))


def test_predict_rejects_bad_horizon():
    p = RtgbParams.zeros(2, 2)
    with pytest.raises(ValueError):
        tp.predict(p, np.zeros((2, 2)), 0, np.random.default_rng(0))


def test_checkpoint_round_trip(tmp_path):
    for mode in VisibleMode:
        p = random_params(np.random.default_rng(9), 6, 4, mode=mode)
        path = tmp_path / f"m{int(mode)}.rtgb"
        tp.save_rtgb(p, path)
        raw = path.read_bytes()
        assert raw[:4] == b"RTGB" and raw[4] == tp.RTGB_VERSION and raw[5] == int(mode)
        assert len(raw) == 14 + 8 * (6 + 4 + 6 + 24 + 16)
        q = tp.load_rtgb(path)
        assert q == p and q.mode is mode
        tp.save_rtgb(q, tmp_path / "again.rtgb")
        assert (tmp_path / "again.rtgb").read_bytes() == raw


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.rtgb"
    tp.save_rtgb(RtgbParams.zeros(2, 2), path)
    raw = path.read_bytes()
    for bad, match in ((b"RBM1" + raw[4:], "magic"), (raw[:4] + b"\x09" + raw[5:], "version"), (raw[:-1], "offset")):
        (tmp_path / "bad").write_bytes(bad)
        with pytest.raises(FormatError, match=match):
            tp.load_rtgb(tmp_path / "bad")
