import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from rtgb import core_rbm as cr
from rtgb.core_rbm import GbRbmParams, SpinConvention
from rtgb.errors import DimensionError, EnumerationLimitError, FormatError


def random_params(rng, n_v, n_h, convention=SpinConvention.ZERO_ONE):
    return GbRbmParams(
        w=rng.normal(0, 0.5, (n_v, n_h)),
        b=rng.normal(0, 0.5, n_v),
        c=rng.normal(0, 0.5, n_h),
        s=rng.uniform(0.7, 1.3, n_v),
        convention=convention,
    )


def quadrature_log_partition(params, points=4001):
    """log Z by 1-D trapezoid integrals; the v-integral factorises given h."""
    total = 0.0
    for h in cr.hidden_states(params.n_hidden, params.convention):
        shift = params.w @ h
        term = np.exp(params.c @ h)
        for i in range(params.n_visible):
            half = 10 * params.s[i] + abs(shift[i])
            x = np.linspace(params.b[i] - half, params.b[i] + half, points)
            f = np.exp(-((x - params.b[i]) ** 2) / (2 * params.s[i] ** 2) + x * shift[i] / params.s[i] ** 2)
            term *= trapezoid(f, x)
        total += term
    return np.log(total)


def grid_mass(params, points=40):
    """Integral of exp(exact_visible_loglik) over a box covering every mixture component."""
    reach = 10 * params.s + np.abs(params.w).sum(axis=1)
    axes = [np.linspace(params.b[i] - reach[i], params.b[i] + reach[i], points) for i in range(params.n_visible)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, params.n_visible)
    dens = np.concatenate([np.exp(cr.exact_visible_loglik(params, chunk)) for chunk in np.array_split(mesh, 64)])
    dens = dens.reshape((points,) * params.n_visible)
    for i in reversed(range(params.n_visible)):
        dens = trapezoid(dens, axes[i], axis=i)
    return float(dens)


def test_energy_zero_cases():
    p = GbRbmParams.zeros(3, 2)
    assert cr.energy(p, np.zeros(3), np.zeros(2)) == 0.0
    rng = np.random.default_rng(0)
    q = random_params(rng, 3, 2)
    assert cr.energy(q, q.b, np.zeros(2)) == 0.0


def test_energy_hand_example():
    # quadratic (1 + 4)/2 = 2.5, coupling sum w v h = 1 - 2 = -1, bias 0.5
    p = GbRbmParams(w=[[1.0], [-1.0]], b=[0.0, 0.0], c=[0.5], s=[1.0, 1.0])
    assert cr.energy(p, [1.0, 2.0], [1.0]) == pytest.approx(2.5 + 1.0 - 0.5, abs=1e-15)


def test_energy_rejects_bad_shapes_and_states():
    p = GbRbmParams.zeros(2, 1)
    with pytest.raises(DimensionError, match="visible"):
        cr.energy(p, np.zeros(3), np.zeros(1))
    with pytest.raises(DimensionError, match="hidden"):
        cr.energy(p, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        cr.energy(p, np.zeros(2), [0.5])
    pm = GbRbmParams.zeros(2, 1, convention=SpinConvention.PLUS_MINUS_ONE)
    with pytest.raises(ValueError):
        cr.energy(pm, np.zeros(2), [0.0])


def test_params_validation_and_immutability():
    with pytest.raises(ValueError):
        GbRbmParams(w=np.zeros((2, 1)), b=np.zeros(2), c=np.zeros(1), s=[1.0, 0.0])
    with pytest.raises(DimensionError):
        GbRbmParams(w=np.zeros((2, 1)), b=np.zeros(3), c=np.zeros(1), s=np.ones(2))
    with pytest.raises(ValueError):
        GbRbmParams(w=[[np.nan]], b=[0.0], c=[0.0], s=[1.0])
    p = GbRbmParams.zeros(2, 1)
    with pytest.raises(ValueError):
        p.w[0, 0] = 1.0


def test_sample_visible_tiny_s_collapses_to_mean():
    rng = np.random.default_rng(1)
    p = random_params(rng, 4, 3)
    p = GbRbmParams(p.w, p.b, p.c, np.full(4, 1e-9))
    h = np.array([1.0, 0.0, 1.0])
    v = cr.sample_visible(p, h, rng)
    np.testing.assert_allclose(v, p.b + p.w @ h, atol=1e-6)


def test_sample_visible_monte_carlo_moments():
    rng = np.random.default_rng(2)
    p = random_params(rng, 3, 2)
    n = 100_000
    v = cr.sample_visible(p, np.zeros((n, 2)), rng)
    se = p.s / np.sqrt(n)
    assert np.all(np.abs(v.mean(axis=0) - p.b) < 4 * se)
    var_se = p.s**2 * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(v.var(axis=0, ddof=1) - p.s**2) < 5 * var_se)


def test_sample_visible_deterministic():
    p = random_params(np.random.default_rng(3), 3, 2)
    a = cr.sample_visible(p, [1.0, 0.0], np.random.default_rng(9))
    b = cr.sample_visible(p, [1.0, 0.0], np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_hidden_prob_symmetric_at_zero():
    for conv in SpinConvention:
        p = GbRbmParams.zeros(3, 4, convention=conv)
        np.testing.assert_array_equal(cr.hidden_prob(p, np.ones(3)), 0.5)


def test_plus_minus_one_identity():
    a = np.linspace(-5, 5, 1001)
    lhs = np.exp(a) / (2 * np.cosh(a))
    np.testing.assert_allclose(lhs, 1 / (1 + np.exp(-2 * a)), rtol=0, atol=1e-12)
    # with s = 1 the implementation is exactly the printed cosh form
    p = GbRbmParams(w=np.ones((1, a.size)), b=[0.0], c=a - 0.5, s=[1.0], convention=SpinConvention.PLUS_MINUS_ONE)
    np.testing.assert_allclose(cr.hidden_prob(p, [0.5]), lhs, rtol=0, atol=1e-12)


def test_hidden_prob_saturates_without_overflow():
    p = GbRbmParams(w=np.zeros((2, 2)), b=np.zeros(2), c=[30.0, 800.0], s=np.ones(2))
    with np.errstate(all="raise"):
        prob = cr.hidden_prob(p, np.zeros(2))
    assert np.all(np.abs(prob - 1.0) < 1e-9)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    c_low=st.floats(-10, 10),
    delta=st.floats(0, 5),
    conv=st.sampled_from(list(SpinConvention)),
)
def test_hidden_prob_open_interval_and_monotone(seed, c_low, delta, conv):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 2, conv)
    v = rng.normal(0, 1, 3)
    lo = GbRbmParams(p.w, p.b, [c_low, 0.0], p.s, conv)
    hi = GbRbmParams(p.w, p.b, [c_low + delta, 0.0], p.s, conv)
    p_lo, p_hi = cr.hidden_prob(lo, v), cr.hidden_prob(hi, v)
    assert np.all((p_lo > 0) & (p_lo < 1))
    assert p_hi[0] >= p_lo[0]


def test_log_partition_independent_units():
    rng = np.random.default_rng(4)
    p = random_params(rng, 3, 4)
    p = GbRbmParams(np.zeros((3, 4)), p.b, p.c, p.s)
    expected = np.sum(np.log(np.sqrt(2 * np.pi) * p.s)) + np.sum(np.log1p(np.exp(p.c)))
    assert cr.exact_log_partition(p) == pytest.approx(expected, abs=1e-12)
    assert cr.exact_log_partition(p) == pytest.approx(quadrature_log_partition(p), rel=1e-9)


def test_log_partition_trivial():
    assert cr.exact_log_partition(GbRbmParams.zeros(1, 1)) == pytest.approx(np.log(2 * np.sqrt(2 * np.pi)), abs=1e-15)


@pytest.mark.parametrize("conv", list(SpinConvention))
def test_log_partition_matches_quadrature(conv):
    p = random_params(np.random.default_rng(5), 2, 2, conv)
    z = np.exp(cr.exact_log_partition(p))
    assert abs(z - np.exp(quadrature_log_partition(p))) / z < 1e-6


def test_enumeration_guard():
    p = GbRbmParams.zeros(1, cr.MAX_ENUM_HIDDEN + 1)
    with pytest.raises(EnumerationLimitError):
        cr.exact_log_partition(p)
    with pytest.raises(EnumerationLimitError):
        cr.exact_visible_loglik(p, [0.0])


def test_visible_loglik_normalises():
    p = random_params(np.random.default_rng(6), 2, 2)
    assert abs(grid_mass(p, points=200) - 1.0) < 1e-4


def test_visible_loglik_factorised_model():
    rng = np.random.default_rng(7)
    p = random_params(rng, 3, 2)
    p = GbRbmParams(np.zeros((3, 2)), p.b, p.c, p.s)
    v = rng.normal(size=(5, 3))
    log_normal = -0.5 * ((v - p.b) / p.s) ** 2 - np.log(np.sqrt(2 * np.pi) * p.s)
    np.testing.assert_allclose(cr.exact_visible_loglik(p, v), log_normal.sum(axis=1), atol=1e-12)


def test_visible_loglik_duplicated_unit_symmetry():
    # two hidden units with identical weights are exchangeable, so swapping their biases leaves P(v) unchanged
    rng = np.random.default_rng(8)
    w = rng.normal(0, 0.5, (3, 1))
    base = GbRbmParams(np.hstack([w, w]), rng.normal(size=3), [0.3, -0.2], np.ones(3))
    swapped = GbRbmParams(np.hstack([w, w]), base.b, [-0.2, 0.3], np.ones(3))
    v = rng.normal(size=(4, 3))
    np.testing.assert_allclose(cr.exact_visible_loglik(base, v), cr.exact_visible_loglik(swapped, v), atol=1e-10)


def test_gibbs_chain_stationary_hidden_marginal():
    rng = np.random.default_rng(10)
    p = random_params(rng, 2, 2)
    states = cr.hidden_states(2)
    # closed-form hidden marginal: v integrated out per state
    m = p.b + states @ p.w.T
    logw = states @ p.c + np.sum((m**2 - p.b**2) / (2 * p.s**2), axis=1)
    exact = np.exp(logw - np.logaddexp.reduce(logw))

    h = np.zeros(2)
    counts = np.zeros(4)
    for it in range(20_000):
        v = cr.sample_visible(p, h, rng)
        h = (rng.random(2) < cr.hidden_prob(p, v)).astype(float)
        if it >= 10_000:
            counts[int(h[0] + 2 * h[1])] += 1
    assert 0.5 * np.abs(counts / counts.sum() - exact).sum() < 0.02


def test_checkpoint_round_trip(tmp_path):
    p = random_params(np.random.default_rng(11), 5, 3, SpinConvention.PLUS_MINUS_ONE)
    path = tmp_path / "m.rbm"
    cr.save_gbrbm(p, path)
    raw = path.read_bytes()
    assert raw[:4] == b"RBM1"
    assert len(raw) == 13 + 8 * (5 + 3 + 5 + 15)
    q = cr.load_gbrbm(path)
    assert q == p
    cr.save_gbrbm(q, tmp_path / "again.rbm")
    assert (tmp_path / "again.rbm").read_bytes() == raw


def test_checkpoint_errors(tmp_path):
    p = GbRbmParams.zeros(2, 2)
    path = tmp_path / "m.rbm"
    cr.save_gbrbm(p, path)
    raw = path.read_bytes()
    (tmp_path / "bad.rbm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        cr.load_gbrbm(tmp_path / "bad.rbm")
    (tmp_path / "short.rbm").write_bytes(raw[:-3])
    with pytest.raises(FormatError) as err:
        cr.load_gbrbm(tmp_path / "short.rbm")
    assert err.value.offset is not None
    (tmp_path / "long.rbm").write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        cr.load_gbrbm(tmp_path / "long.rbm")
