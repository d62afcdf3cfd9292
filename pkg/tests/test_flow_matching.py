import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvrlab.flow_matching import (
    ContractiveToyVelocity,
    InferenceTrace,
    NumericalError,
    OracleLinearVelocity,
    TimestepDistribution,
    ZeroVelocity,
    add_noise,
    apply_noise_augmentation,
    build_detail_aware_sampler,
    cfm_loss,
    discrete_timestep,
    ode_sample,
    predict_clean,
    sample_timestep,
    sample_timestep_uniform,
    sdedit_degrade,
)
from gvrlab.tensor import Rng, idct2d, randn


def pair(seed, shape=(2, 3, 4, 4)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape).astype(np.float32), rng.normal(size=shape).astype(np.float32)


# --- path and loss -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_endpoints_exact(seed):
    z0, eps = pair(seed)
    assert add_noise(z0, 0.0, eps).z_t.tobytes() == z0.tobytes()
    assert add_noise(z0, 1.0, eps).z_t.tobytes() == eps.tobytes()


def test_midpoint_scalar():
    assert float(add_noise(2.0, 0.5, 0.0).z_t) == 1.0


def test_add_noise_range_check():
    with pytest.raises(ValueError):
        add_noise(0.0, 1.5, 0.0)


def test_flow_state_timestep():
    assert add_noise(np.zeros(2), 0.3, np.zeros(2)).timestep == 300


def test_cfm_oracle_zero_loss():
    z0, eps = pair(0)
    for t in (0.0, 0.2, 0.77, 1.0):
        assert cfm_loss(OracleLinearVelocity(z0, eps), z0, eps, t) <= 1e-10


def test_cfm_zero_model_expectation():
    # E||eps - 0||^2 per element = 1 for unit-variance noise
    losses = []
    for seed in range(10_000):
        eps = randn(Rng(seed), (8,))
        losses.append(cfm_loss(ZeroVelocity(), np.zeros(8, np.float32), eps, 0.5))
    assert abs(np.mean(losses) - 1.0) < 0.05


def test_cfm_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z0, eps = pair(int(rng.integers(1 << 30)))
        model = lambda z, t, c: np.sin(z)  # noqa: E731
        assert cfm_loss(model, z0, eps, float(rng.random())) >= 0


# --- clean prediction -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_predict_clean_inverts_oracle(seed, t):
    z0, eps = pair(seed)
    z_t = add_noise(z0, t, eps).z_t
    np.testing.assert_allclose(predict_clean(z_t, t, eps - z0), z0, atol=1e-5)


def test_predict_clean_at_zero():
    z = np.arange(4.0)
    np.testing.assert_array_equal(predict_clean(z, 0.0, np.full(4, 9.0)), z)


def test_predict_clean_linearity():
    z0, eps = pair(4)
    delta = np.random.default_rng(5).normal(size=z0.shape)
    t = 0.35
    z_t = add_noise(z0, t, eps).z_t
    err = predict_clean(z_t, t, (eps - z0) + delta) - z0
    np.testing.assert_allclose(err, -t * delta, atol=1e-5)


# --- ODE sampling ------------------------------------------------------------


@pytest.mark.parametrize("steps", [1, 5, 50])
def test_ode_constant_velocity_exact(steps):
    z0, eps = pair(6)
    out = ode_sample(OracleLinearVelocity(z0, eps), eps, steps)
    assert np.abs(out - z0).max() <= 1e-5


def test_ode_zero_velocity_identity():
    _, eps = pair(7)
    np.testing.assert_array_equal(ode_sample(ZeroVelocity(), eps, 10), eps)


def test_ode_condition_passed_unchanged():
    seen = []

    def model(z, t, cond):
        seen.append(cond)
        return np.zeros_like(z)

    cond = object()
    ode_sample(model, np.zeros(3), 4, condition=cond)
    assert len(seen) == 4 and all(c is cond for c in seen)


def test_ode_nonfinite_reports_step():
    def model(z, t, cond):
        return np.full_like(z, np.inf) if t <= 0.5 else np.zeros_like(z)

    with pytest.raises(NumericalError) as exc:
        ode_sample(model, np.zeros(3), 4)
    assert exc.value.step == 2


def test_ode_trace_records_every_step():
    z0, eps = pair(8)
    tr = InferenceTrace()
    ode_sample(OracleLinearVelocity(z0, eps), eps, 7, trace=tr)
    assert len(tr) == 7
    for p in tr.predictions:
        np.testing.assert_allclose(p, z0, atol=1e-5)


# --- SDEdit -------------------------------------------------------------------


def test_sdedit_alpha_zero_identity():
    c0, _ = pair(9)
    for model in (ZeroVelocity(), ContractiveToyVelocity(), OracleLinearVelocity(c0, c0 * 2)):
        assert sdedit_degrade(model, c0, 0.0, 10, Rng(0)).tobytes() == c0.tobytes()


@pytest.mark.parametrize("alpha", [0.1, 0.35, 0.8])
def test_sdedit_oracle_recovers(alpha):
    c0, eps = pair(10)
    out = sdedit_degrade(OracleLinearVelocity(c0, eps), c0, alpha, 7, eps=eps)
    np.testing.assert_allclose(out, c0, atol=1e-5)


def sdedit_divergence_curve(alphas, seeds=32):
    c0 = np.tile(np.linspace(-1.5, 1.5, 16, dtype=np.float32), (2, 1))
    model = ContractiveToyVelocity(mean=0.0, std=0.5)
    curve = []
    for a in alphas:
        d = [np.mean((sdedit_degrade(model, c0, a, 20, Rng(s, 77)) - c0) ** 2) for s in range(seeds)]
        curve.append(float(np.mean(d)))
    return curve


def test_sdedit_divergence_monotone():
    alphas = [round(0.1 * k, 1) for k in range(1, 10)]
    curve = sdedit_divergence_curve(alphas)
    assert all(b >= a for a, b in zip(curve, curve[1:])), curve


# --- timestep samplers -----------------------------------------------------------


def test_uniform_deciles():
    rng = Rng(11)
    draws = np.array([sample_timestep_uniform(rng) for _ in range(100_000)])
    freq = np.histogram(draws, bins=10, range=(0, 1))[0] / draws.size
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_point_mass_bin():
    dist = TimestepDistribution([0.0, 0.4, 0.42, 1.0], [0.0, 1.0, 0.0])
    rng = Rng(12)
    draws = [sample_timestep(dist, rng) for _ in range(2000)]
    assert all(0.4 <= d < 0.42 for d in draws)


def test_unnormalized_distribution_rejected():
    with pytest.raises(ValueError, match="normalized"):
        TimestepDistribution([0, 0.5, 1], [0.5, 0.6])


def test_distribution_csv_round_trip(tmp_path):
    dist = TimestepDistribution([0, 0.25, 1.0], [0.3, 0.7])
    back = TimestepDistribution.from_csv(dist.to_csv(tmp_path / "d.csv"))
    np.testing.assert_array_equal(back.edges, dist.edges)
    np.testing.assert_array_equal(back.probabilities, dist.probabilities)


def constructed_trace(steps=20, change_until=10, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(2, 3, 8, 8))
    coeffs = np.zeros((8, 8))
    coeffs[6:, 5:] = rng.normal(size=(2, 3))
    hf_pattern = idct2d(coeffs)
    tr = InferenceTrace()
    for i in range(steps):
        tr.times.append(1.0 - i / steps)
        tr.predictions.append(base + hf_pattern * min(i, change_until) / change_until)
    return tr


def test_detail_aware_constructed_trace(tmp_path):
    traces = [constructed_trace(seed=s) for s in range(3)]
    svg = tmp_path / "curve.svg"
    dist = build_detail_aware_sampler(traces, hf_cut=0.5, curve_path=svg)
    assert abs(dist.probabilities.sum() - 1) <= 1e-6
    first_half = dist.probabilities[dist.edges[:-1] >= 0.5 - 1e-12].sum()
    assert first_half >= 0.99
    assert svg.read_text().startswith("<?xml")
    assert dist.edges[0] == 0.0 and dist.edges[-1] == 1.0


def test_detail_aware_degenerate_trace():
    tr = InferenceTrace()
    z = np.random.default_rng(1).normal(size=(1, 2, 8, 8))
    for i in range(5):
        tr.times.append(1 - i / 5)
        tr.predictions.append(z)
    with pytest.raises(ValueError, match="degenerate"):
        build_detail_aware_sampler([tr])


def test_detail_aware_needs_two_steps():
    tr = InferenceTrace([1.0], [np.zeros((1, 1, 4, 4))])
    with pytest.raises(ValueError, match="2 steps"):
        build_detail_aware_sampler([tr])


# --- noise augmentation ----------------------------------------------------------


def test_augmentation_zero_interval():
    c = np.random.default_rng(2).normal(size=(3, 4)).astype(np.float32)
    out, a = apply_noise_augmentation(c, (0.0, 0.0), Rng(1))
    assert a == 0.0 and out.tobytes() == c.tobytes()


def test_augmentation_timestep_range():
    rng = Rng(13)
    g = rng.generator
    levels = g.uniform(0.3, 0.6, 100_000)
    assert all(300 <= discrete_timestep(a) <= 600 for a in levels)
    for _ in range(200):
        _, a = apply_noise_augmentation(np.zeros(2, np.float32), (0.3, 0.6), rng)
        assert 300 <= discrete_timestep(a) <= 600


def test_augmentation_variance_matches_level():
    rng = Rng(14)
    ratios = []
    for _ in range(10_000):
        out, a = apply_noise_augmentation(np.zeros(16, np.float32), (0.3, 0.6), rng)
        ratios.append(out.astype(np.float64) ** 2 / a**2)
    assert abs(np.mean(ratios) - 1.0) < 0.02


def test_augmentation_inverted_interval():
    with pytest.raises(ValueError):
        apply_noise_augmentation(np.zeros(2), (0.6, 0.3), Rng(0))


def test_truncated_distribution_quantile_and_samples():
    dist = TimestepDistribution.truncated(0.1)
    u = np.linspace(0, 1, 11)
    np.testing.assert_allclose(dist.quantile(u), 0.1 + 0.9 * u)
    draws = dist.sample(Rng(0), size=2000)
    assert draws.min() >= 0.1
    assert TimestepDistribution.truncated(0.0).probabilities.tolist() == [1.0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda p: sum(p) > 0.1), st.floats(0.0, 1.0))
def test_quantile_inverts_cdf(weights, u):
    # sampled quantiles must land in bins with mass, at the CDF position
    p = np.array(weights) / sum(weights)
    dist = TimestepDistribution(np.linspace(0, 1, len(p) + 1), p)
    t = dist.quantile(u)
    idx = min(int(t * len(p)), len(p) - 1)
    cdf_t = p[:idx].sum() + p[idx] * (t * len(p) - idx)
    assert cdf_t == pytest.approx(u, abs=1e-9)
    assert p[idx] > 0 or t * len(p) == idx
