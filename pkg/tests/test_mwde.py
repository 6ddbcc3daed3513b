import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_minimize, oracle_w2
from mwmix.distributions import (
    GUMBEL,
    LOGISTIC,
    NORMAL,
    MixingDistribution,
    MixtureError,
    SortedSample,
    sample,
)
from mwmix.mwde import (
    DegenerateSampleError,
    FitReport,
    MwdeConfig,
    UnconstrainedParams,
    build_workspace,
    fit_homogeneous_mwde,
    fit_mwde,
    gradient_w2,
    initial_points,
    objective_w2,
)
from mwmix.pmle import PmleConfig, fit_pmle

FAMS = [NORMAL, LOGISTIC, GUMBEL]


def random_instance(rng, fam, K=None, N=None):
    K = K or int(rng.integers(1, 4))
    N = N or int(rng.integers(K + 2, 201))
    truth = MixingDistribution.normalized(rng.dirichlet(np.ones(K)), rng.normal(0, 3, K),
                                          np.exp(rng.uniform(-1, 0.7, K)))
    x = sample(truth, fam, N, seed=int(rng.integers(2**31)))
    params = UnconstrainedParams(rng.normal(0, 2, K), rng.uniform(-1, 0.7, K), rng.normal(0, 1, K))
    params.ts = params.ts - params.ts[-1]
    return params, SortedSample(x)


def fd_gradient(params, x, fam, h=1e-6):
    v = params.to_vector()
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        fp = objective_w2(UnconstrainedParams.from_vector(v + e).to_mixing(), x, fam)
        fm = objective_w2(UnconstrainedParams.from_vector(v - e).to_mixing(), x, fam)
        out[i] = (fp - fm) / (2 * h)
    return out


def coordinate_rel_err(a, b):
    # per-coordinate relative error; coordinates that are tiny relative to the
    # whole gradient are measured against 1e-3 of its largest entry
    floor = 1e-3 * max(np.max(np.abs(b)), 1e-8)
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


# ------------------------------------------------------------- params

def test_unconstrained_roundtrip(rng):
    for _ in range(50):
        K = int(rng.integers(1, 6))
        G = MixingDistribution.normalized(rng.dirichlet(np.ones(K)), rng.normal(0, 5, K),
                                          np.exp(rng.normal(0, 1, K)))
        p = UnconstrainedParams.from_mixing(G)
        assert p.ts[-1] == 0.0
        H = UnconstrainedParams.from_vector(p.to_vector()).to_mixing()
        np.testing.assert_allclose(H.weights, G.weights, atol=1e-12)
        np.testing.assert_allclose(H.locations, G.locations, atol=1e-12)
        np.testing.assert_allclose(H.scales, G.scales, rtol=1e-12)


def test_unconstrained_rejects_point_mass():
    with pytest.raises(MixtureError):
        UnconstrainedParams.from_mixing(MixingDistribution([1.0], [0.0], [0.0]))


# ----------------------------------------------------------- workspace

@pytest.mark.parametrize("fam", FAMS, ids=lambda f: f.name)
def test_workspace_invariants(fam, rng):
    params, x = random_instance(rng, fam, K=3, N=80)
    G = params.to_mixing()
    ws = build_workspace(G, x.values, fam)
    assert ws.xi.size == x.N + 1 and ws.xi[0] == -np.inf and ws.xi[-1] == np.inf
    assert np.all(np.diff(ws.xi) > 0)
    np.testing.assert_allclose(ws.delta_F.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(ws.delta_T.sum(axis=0), fam.mu0, atol=1e-12)
    assert np.all(ws.delta_F >= 0)


# ------------------------------------------------------------ objective

def test_objective_point_mass_limit():
    x = SortedSample([0.0, 0.0, 0.0])
    assert objective_w2(MixingDistribution([1.0], [3.0], [1e-9]), x, NORMAL) == pytest.approx(9.0, abs=1e-6)


def test_objective_second_moment_at_zero():
    # one observation at 0 against N(0, 1): the cross term vanishes
    x = SortedSample([0.0, 0.0])
    assert objective_w2(MixingDistribution([1.0], [0.0], [1.0]), x, NORMAL) == pytest.approx(1.0, abs=1e-12)


def test_objective_degenerate_sample():
    G = MixingDistribution([0.5, 0.5], [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(DegenerateSampleError):
        objective_w2(G, [1.0, 2.0], NORMAL)
    with pytest.raises(DegenerateSampleError):
        objective_w2(MixingDistribution([1.0], [0.0], [1.0]), [0.0], NORMAL)
    with pytest.raises(MixtureError):
        objective_w2(MixingDistribution([1.0], [0.0], [0.0]), [0.0, 1.0, 2.0], NORMAL)


@pytest.mark.parametrize("fam", FAMS, ids=lambda f: f.name)
def test_objective_matches_quantile_integral(fam, rng):
    params, x = random_instance(rng, fam, K=2, N=50)
    G = params.to_mixing()
    expect = oracle_w2(G, fam, x.values)
    assert abs(objective_w2(G, x, fam) / expect - 1) < 1e-6


def test_objective_translation_and_scale(rng):
    params, x = random_instance(rng, LOGISTIC, K=2, N=60)
    G = params.to_mixing()
    base = objective_w2(G, x, LOGISTIC)
    moved = objective_w2(G.affine(3.0, -7.0), SortedSample(3.0 * x.values - 7.0), LOGISTIC)
    assert moved == pytest.approx(9.0 * base, rel=1e-9)


# ------------------------------------------------------------- gradient

@pytest.mark.parametrize("fam", FAMS, ids=lambda f: f.name)
def test_gradient_finite_differences(fam, rng):
    for _ in range(5):
        params, x = random_instance(rng, fam)
        g = gradient_w2(params, x, fam)
        assert g.shape == (3 * params.mus.size,)
        assert np.max(coordinate_rel_err(g, fd_gradient(params, x, fam))) < 1e-5


def test_gradient_homogeneous_stationary_mu(rng):
    x = SortedSample(rng.normal(2, 3, 100))
    p = UnconstrainedParams(np.array([x.mean]), np.array([0.4]), np.array([0.0]))
    assert abs(gradient_w2(p, x, NORMAL)[0]) < 1e-12


def test_gradient_exchange_antisymmetry(rng):
    x = SortedSample(rng.normal(0, 1, 40))
    p = UnconstrainedParams(np.array([0.3, 0.3]), np.array([0.1, 0.1]), np.array([0.0, 0.0]))
    g = gradient_w2(p, x, NORMAL)
    assert g[4] == pytest.approx(-g[5], abs=1e-12)


# ------------------------------------------------------------------ fit

def test_initial_points_deterministic():
    x = SortedSample(np.arange(100.0))
    a = initial_points(x, 3, 4, seed=5)
    b = initial_points(x, 3, 4, seed=5)
    assert len(a) == 4
    np.testing.assert_allclose(a[0].locations, np.quantile(x.values, [1 / 6, 0.5, 5 / 6]))
    for g, h in zip(a, b):
        np.testing.assert_array_equal(g.locations, h.locations)
    np.testing.assert_allclose(a[1].scales, math.sqrt(x.var_s) / 3)
    np.testing.assert_allclose(a[2].weights, 1 / 3)


@pytest.fixture(scope="module")
def separated():
    truth = MixingDistribution([0.5, 0.5], [0.0, 6.0], [1.0, 1.0])
    return SortedSample(sample(truth, NORMAL, 1000, seed=101))


def test_fit_recovers_separated(separated):
    rep = fit_mwde(separated, NORMAL, 2, MwdeConfig(seed=1))
    assert isinstance(rep, FitReport)
    loc = np.sort(rep.g_hat.locations)
    assert np.all(np.abs(loc - [0.0, 6.0]) < 0.2)
    assert rep.converged and rep.objective >= 0
    ref = fit_pmle(separated, NORMAL, 2, PmleConfig(seed=1)).g_hat
    assert np.all(np.abs(loc - np.sort(ref.locations)) < 0.2)


def test_fit_trace_monotone(separated):
    rep = fit_mwde(separated, NORMAL, 2, MwdeConfig(n_starts=3, seed=4))
    assert np.all(np.diff(rep.trace) <= 1e-12)
    assert rep.objective == pytest.approx(min(rep.start_objectives))
    assert rep.starts_tried == 3


def test_fit_k1_matches_closed_form(rng):
    x = SortedSample(rng.normal(1.0, 2.0, 300))
    rep = fit_mwde(x, NORMAL, 1, MwdeConfig(n_starts=1, grad_tol=1e-10))
    mu, sigma = fit_homogeneous_mwde(x, NORMAL)
    assert rep.g_hat.locations[0] == pytest.approx(mu, abs=1e-6)
    assert rep.g_hat.scales[0] == pytest.approx(sigma, abs=1e-6)


def test_more_starts_never_worse():
    truth = MixingDistribution([0.3, 0.4, 0.3], [-4.0, 0.0, 3.0], [0.5, 1.5, 0.3])
    x = SortedSample(sample(truth, NORMAL, 300, seed=9))
    one = fit_mwde(x, NORMAL, 3, MwdeConfig(n_starts=1, seed=2))
    ten = fit_mwde(x, NORMAL, 3, MwdeConfig(n_starts=10, seed=2))
    assert ten.objective <= one.objective + 1e-12


def test_fit_equivariance(separated):
    cfg = MwdeConfig(n_starts=2, seed=3, grad_tol=1e-9)
    base = fit_mwde(separated, NORMAL, 2, cfg)
    c, m = 2.5, -4.0
    moved = fit_mwde(SortedSample(c * separated.values + m), NORMAL, 2, cfg)
    g, h = base.g_hat.sorted_by_location(), moved.g_hat.sorted_by_location()
    np.testing.assert_allclose(h.weights, g.weights, atol=1e-5)
    np.testing.assert_allclose(h.locations, c * g.locations + m, atol=1e-4)
    np.testing.assert_allclose(h.scales, c * g.scales, rtol=1e-4)
    assert moved.objective == pytest.approx(c * c * base.objective, rel=1e-6)


def test_fit_errors():
    with pytest.raises(DegenerateSampleError):
        fit_mwde([1.0, 2.0], NORMAL, 2)
    with pytest.raises(DegenerateSampleError):
        fit_mwde([1.0, 1.0, 1.0, 1.0], NORMAL, 2)
    with pytest.raises(ValueError):
        MwdeConfig(n_starts=0)
    with pytest.raises(ValueError):
        MwdeConfig(grad_tol=0)


def test_fit_report_serializes(separated):
    d = fit_mwde(separated, NORMAL, 2, MwdeConfig(n_starts=1)).to_dict()
    assert d["method"] == "mwde" and d["objective_name"] == "w2_squared"
    assert set(d["g_hat"]) == {"family", "weights", "locations", "scales"}


# ------------------------------------------------------------ homogeneous

def test_homogeneous_normal_two_points():
    mu, sigma = fit_homogeneous_mwde([-1.0, 1.0], NORMAL)
    assert mu == pytest.approx(0.0, abs=1e-12)
    assert sigma == pytest.approx(2 / math.sqrt(2 * math.pi), abs=1e-7)
    x = SortedSample([-1.0, 1.0])
    best = grid_minimize(lambda a, b: objective_w2(MixingDistribution([1.0], [a], [b]), x, NORMAL),
                         [0.2, 1.0], [1.0, 0.9])
    assert best == pytest.approx([mu, sigma], abs=1e-6)


def test_homogeneous_logistic_two_points():
    mu, sigma = fit_homogeneous_mwde([-1.0, 1.0], LOGISTIC)
    assert mu == pytest.approx(0.0, abs=1e-12)
    assert sigma == pytest.approx(6 * math.log(2) / math.pi**2, abs=1e-12)
    x = SortedSample([-1.0, 1.0])
    best = grid_minimize(lambda a, b: objective_w2(MixingDistribution([1.0], [a], [b]), x, LOGISTIC),
                         [0.2, 0.5], [1.0, 0.45])
    assert best == pytest.approx([mu, sigma], abs=1e-6)


def test_homogeneous_gumbel_matches_numeric(rng):
    x = SortedSample(sample(MixingDistribution([1.0], [1.0], [2.0]), GUMBEL, 200, seed=8))
    mu, sigma = fit_homogeneous_mwde(x, GUMBEL)
    rep = fit_mwde(x, GUMBEL, 1, MwdeConfig(n_starts=1, grad_tol=1e-10))
    assert rep.g_hat.locations[0] == pytest.approx(mu, abs=1e-6)
    assert rep.g_hat.scales[0] == pytest.approx(sigma, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100), m=st.floats(-100, 100))
def test_homogeneous_equivariance(seed, c, m):
    z = np.random.default_rng(seed).normal(size=25)
    for fam in (NORMAL, GUMBEL):
        mu, sigma = fit_homogeneous_mwde(z, fam)
        mu2, sigma2 = fit_homogeneous_mwde(c * z + m, fam)
        assert mu2 == pytest.approx(m + c * mu, abs=1e-9 * (abs(m) + c * (1 + abs(mu))))
        assert sigma2 == pytest.approx(c * sigma, rel=1e-9)


def test_homogeneous_constant_sample():
    mu, sigma = fit_homogeneous_mwde([2.0, 2.0, 2.0], NORMAL)
    assert mu == pytest.approx(2.0) and sigma == 0.0
    with pytest.raises(DegenerateSampleError):
        fit_homogeneous_mwde([1.0], NORMAL)
