import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from shelab.density import (
    DensityEstimate,
    SampleSet,
    bandwidth,
    default_grid,
    gaussian_density,
    gaussian_tail_mass,
    kde,
    mollifier,
    refined_distances,
    sup_distance,
    tv_distance,
    write_density,
)
from shelab.errors import DomainError
from shelab.scheme import AffineDrift, GaussianLaw, InitialDatum, ModelSpec, SchemeConfig, affine_perturbed_law, point_values, simulate_batch

STD = GaussianLaw(0.0, 1.0)


def test_bandwidth_schedule():
    assert bandwidth(10**6) == pytest.approx(0.005, rel=1e-12)
    assert bandwidth(10**5) > bandwidth(10**6)
    assert bandwidth(2 * 10**6) / bandwidth(10**6) == pytest.approx(2**-0.4)


def test_mollifier_normalised():
    val, _ = quad(lambda y: mollifier(0.04, y), -np.inf, np.inf, epsabs=1e-13)
    assert abs(val - 1) <= 1e-10
    assert mollifier(0.04, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi * 0.04), rel=1e-15)


def test_mollifier_semigroup():
    a, b, y, z = 0.01, 0.03, 0.1, -0.05
    val, _ = quad(lambda w: mollifier(a, y - w) * mollifier(b, w - z), -3, 3, epsabs=1e-12, points=[y, z])
    assert abs(val - mollifier(a + b, y - z)) <= 1e-9


def test_mollifier_rejects_bad_variance():
    with pytest.raises(DomainError):
        mollifier(0.0, 1.0)


def test_single_sample_kde_is_normal_curve():
    z = np.linspace(-4, 4, 81)
    est = kde([0.0], 1.0, z)
    assert np.allclose(est.values, norm.pdf(z), atol=1e-15)


def test_kde_targets_smoothed_density():
    rng = np.random.Generator(np.random.PCG64(12))
    x = rng.standard_normal(1_000_000)
    z = np.linspace(-4, 4, 161)
    est = kde(x, 0.01, z)
    assert np.max(np.abs(est.values - norm.pdf(z, scale=math.sqrt(1.01)))) <= 0.01


def test_kde_flattens_with_bandwidth():
    x = np.random.Generator(np.random.PCG64(1)).standard_normal(5000)
    z = np.linspace(-4, 4, 201)
    peaks = [kde(x, zeta, z).values.max() for zeta in (0.01, 0.05, 0.2, 1.0)]
    assert all(b < a for a, b in zip(peaks, peaks[1:]))


def test_kde_permutation_and_linearity():
    rng = np.random.Generator(np.random.PCG64(5))
    x = rng.standard_normal(10_000)
    z = np.linspace(-3, 3, 31)
    a = kde(x, 0.05, z).values
    assert np.allclose(a, kde(rng.permutation(x), 0.05, z).values, rtol=1e-13)
    half = 0.5 * (kde(x[:5000], 0.05, z).values + kde(x[5000:], 0.05, z).values)
    assert np.allclose(a, half, rtol=1e-13)


def test_kde_shift_equivariance():
    x = np.random.Generator(np.random.PCG64(6)).standard_normal(2000)
    z = np.linspace(-3, 3, 61)
    a = kde(x, 0.1, z).values
    b = kde(x + 0.375, 0.1, z + 0.375).values
    assert np.max(np.abs(a - b)) <= 1e-14


def test_gaussian_density_values():
    z = np.linspace(-8, 8, 4001)
    g = gaussian_density(STD, z)
    assert g.values[2000] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    assert abs(g.mass() - 1) <= 1e-9
    law = GaussianLaw(0.3, 0.7)
    assert np.max(np.abs(gaussian_density(law, z).values - mollifier(0.7, z - 0.3))) <= 1e-14


def test_sup_distance_basics():
    z = np.linspace(-6, 6, 2001)
    a = gaussian_density(STD, z)
    b = gaussian_density(GaussianLaw(0.1, 1.0), z)
    assert sup_distance(a, a) == 0
    best = minimize_scalar(lambda t: -abs(norm.pdf(t) - norm.pdf(t, 0.1)), bounds=(0, 3), method="bounded",
                           options={"xatol": 1e-10})
    assert abs(sup_distance(a, b) - (-best.fun)) <= 1e-3


def test_sup_distance_grid_mismatch():
    a = gaussian_density(STD, np.linspace(-5, 5, 11))
    b = gaussian_density(STD, np.linspace(-5, 5, 12))
    with pytest.raises(DomainError):
        sup_distance(a, b)


def test_tv_distance_against_quadrature():
    mu = 0.5
    z = np.linspace(-9, 9.5, 20001)
    a, b = gaussian_density(STD, z), gaussian_density(GaussianLaw(mu, 1.0), z)
    # closed form: 2 (2 Phi(mu/2) - 1)
    want, _ = quad(lambda t: abs(norm.pdf(t) - norm.pdf(t, mu)), -12, 12, points=[mu / 2], epsabs=1e-13)
    assert abs(tv_distance(a, b) - want) <= 1e-4
    assert want == pytest.approx(2 * (2 * norm.cdf(mu / 2) - 1), abs=1e-10)
    assert tv_distance(a, a) == 0


def test_tv_distance_requires_span():
    z = np.linspace(-2, 2, 401)
    with pytest.raises(DomainError):
        tv_distance(gaussian_density(STD, z), gaussian_density(STD, z))


def test_tail_mass_and_default_grid():
    z = default_grid(STD, GaussianLaw(1.0, 4.0), width=6)
    assert z[0] == pytest.approx(-11) and z[-1] == pytest.approx(13)
    assert gaussian_tail_mass(STD, np.array([-8.0, 8.0])) == pytest.approx(2 * norm.sf(8), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(0.2, 3)), min_size=3, max_size=3))
def test_triangle_and_bounds(params):
    z = np.linspace(-20, 20, 4001)
    a, b, c = (gaussian_density(GaussianLaw(m, v), z) for m, v in params)
    assert sup_distance(a, c) <= sup_distance(a, b) + sup_distance(b, c)
    tv = tv_distance(a, b)
    assert tv <= 2 + 1e-12
    assert tv <= (z[-1] - z[0]) * sup_distance(a, b)


def test_refined_distances_close_to_raw():
    z = np.linspace(-8, 8, 1025)
    a, b = gaussian_density(STD, z), gaussian_density(GaussianLaw(0.2, 1.1), z)
    d = refined_distances(a, b)
    assert abs(d["tv_refined"] - d["tv"]) <= 1e-6
    assert abs(d["sup_refined"] - d["sup"]) <= 1e-4


def test_estimate_validation():
    with pytest.raises(DomainError):
        DensityEstimate([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        SampleSet([])
    with pytest.raises(DomainError):
        SampleSet([np.inf])


def test_write_density(tmp_path):
    est = kde(SampleSet([0.0, 1.0], seed=4, config_hash="abc"), 0.5, np.linspace(-2, 3, 6))
    write_density(est, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "z,value" and len(lines) == 7
    meta = json.loads((tmp_path / "d.json").read_text())
    assert meta == {"config_hash": "abc", "n_samples": 2, "seed": 4, "zeta": 0.5}


@pytest.mark.slow
def test_affine_kde_matches_perturbed_law():
    m = ModelSpec(AffineDrift(1.0, 0.0), 1.0, InitialDatum("const", 1.0))
    cfg = SchemeConfig(1.0, 16, 15, 32, 1)
    n = 1_000_000
    ac, _ = simulate_batch(m, cfg, 17, np.arange(n), reference=False)
    u = point_values(m.bc, ac, 0.5)
    law = affine_perturbed_law(m, cfg, 0.5)
    z = default_grid(law, n=257)
    est = kde(u, bandwidth(n), z)
    assert sup_distance(est, gaussian_density(law, z)) <= 0.02
