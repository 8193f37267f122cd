import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halfline import model


def test_geometry_deterministic_limit():
    g = model.derive_geometry(0.0, 1.0)
    assert g.rho == 0.0
    assert g.alpha == pytest.approx(math.pi / 2, abs=0.0)
    assert g.critical_beta == pytest.approx(1.0, abs=1e-15)


def test_geometry_equal_amplitudes():
    g = model.derive_geometry(1.0, 1.0)
    assert g.rho == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-15)
    assert g.alpha == pytest.approx(0.75 * math.pi, rel=1e-15)
    assert g.critical_beta == pytest.approx(1.0 / 3.0, abs=1e-14)


@given(
    st.floats(min_value=1e-3, max_value=1e3),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_alpha_always_interior(sm, si):
    g = model.derive_geometry(sm, si)
    assert math.pi / 2 < g.alpha < math.pi
    assert 0.0 < g.critical_beta < 1.0


def test_geometry_rejects_degenerate_idiosyncratic():
    with pytest.raises(ValueError):
        model.derive_geometry(1.0, 0.0)
    with pytest.raises(ValueError):
        model.derive_geometry(-0.5, 1.0)


def test_alpha_strictly_increasing_in_common_amplitude():
    # 100-point grid at fixed sigma_i, per the monotonicity property
    sm = np.linspace(0.0, 20.0, 100)
    alphas = [model.derive_geometry(s, 1.0).alpha for s in sm]
    assert all(b > a for a, b in zip(alphas, alphas[1:]))


def test_critical_beta_decreasing_in_rho():
    rhos = np.linspace(0.0, 0.999, 200)
    betas = [math.pi / model.wedge_angle(r) - 1.0 for r in rhos]
    assert betas[0] == pytest.approx(1.0, abs=1e-15)
    assert all(b < a for a, b in zip(betas, betas[1:]))


def test_params_validation():
    with pytest.raises(ValueError):
        model.ModelParams(mu=0.0, sigma_m=1.0, sigma_i=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        model.ModelParams(mu=0.0, sigma_m=1.0, sigma_i=1.0, horizon=0.0)
    with pytest.raises(ValueError):
        model.ModelParams(mu=0.0, sigma_m=-1.0, sigma_i=1.0, horizon=1.0)


def test_pair_correlation_is_rho_squared():
    """Two samples sharing the common driver correlate at rho**2.

    cov = sigma_m^2 t, var = (sigma_m^2 + sigma_i^2) t each, so the
    correlation is the squared amplitude ratio.
    """
    p = model.ModelParams(mu=0.0, sigma_m=2.0, sigma_i=1.0, horizon=1.0)
    assert p.pair_correlation == pytest.approx(p.rho**2, rel=1e-15)
    assert p.pair_correlation == pytest.approx(4.0 / 5.0, rel=1e-15)


def test_params_for_pair_correlation_inverts():
    target = 1.0 / math.sqrt(2.0)
    p = model.params_for_pair_correlation(target, sigma_i=1.0)
    assert p.pair_correlation == pytest.approx(target, rel=1e-14)
    # closed form: sigma_m^2 = r / (1 - r) at sigma_i = 1
    assert p.sigma_m**2 == pytest.approx(target / (1.0 - target), rel=1e-13)


# weight family -------------------------------------------------------------


def test_weight_frozen_values():
    assert model.weight_eval(3.7, 1.0) == pytest.approx(0.367879, abs=1e-6)
    assert model.weight_eval(-5.0, 1.0) == pytest.approx(0.367879, abs=1e-6)
    assert model.weight_eval(2.0, 2.0) == pytest.approx(0.541341, abs=1e-6)
    assert model.weight_eval(-0.5, 1e-4) == pytest.approx(99.990, abs=1e-3)


def test_weight_no_overflow_at_tiny_x():
    for c in (-8.0, -4.0, 4.0, 8.0):
        v = model.weight_eval(c, 1e-12)
        assert np.isfinite(v) and v > 0.0


def test_weight_rejects_nonpositive_x():
    with pytest.raises(ValueError):
        model.weight_eval(1.0, 0.0)
    with pytest.raises(ValueError):
        model.weight_eval(1.0, np.array([0.5, -1.0]))


@settings(max_examples=200)
@given(
    st.floats(min_value=-8.0, max_value=8.0),
    st.floats(min_value=1e-10, max_value=50.0),
)
def test_weight_product_identity(c, x):
    # w_c * w_{-c} = e^{-2x}, 1 ulp-scale slack
    prod = model.weight_eval(c, x) * model.weight_eval(-c, x)
    ref = math.exp(-2.0 * x)
    assert prod == pytest.approx(ref, rel=5e-15)


def test_weight_function_callable_matches_eval():
    w = model.WeightFunction(exponent_c=-0.15)
    xs = np.geomspace(1e-6, 10.0, 50)
    np.testing.assert_allclose(w(xs), model.weight_eval(-0.15, xs), rtol=0)


def test_weight_limits():
    assert model.weight_eval(0.5, 1e-300) < 1e-100
    assert model.weight_eval(-3.0, 800.0) == 0.0  # underflow to 0 is the limit


# initial densities ----------------------------------------------------------


@pytest.fixture(scope="module")
def density_catalog():
    return model.catalog()


def test_catalog_has_all_kinds(density_catalog):
    assert set(density_catalog) == {
        "uniform-interval",
        "step",
        "truncated-gaussian",
        "tabulated-grid",
    }


def test_densities_normalized(density_catalog):
    for name, d in density_catalog.items():
        # trapezoid audit; jumps in the uniform/step kinds cost O(h)
        xs = np.linspace(d.x_min, d.x_max, 200001)
        mass = np.trapezoid(d.pdf(xs), xs)
        assert mass == pytest.approx(1.0, abs=2e-5), name
        # closed-form CDF hits 1 exactly at the right edge
        assert d.cdf(np.array([d.x_max]))[0] == pytest.approx(1.0, abs=1e-10), name


def test_densities_bounded_by_sup(density_catalog):
    for name, d in density_catalog.items():
        xs = np.linspace(d.x_min - 0.5, d.x_max + 0.5, 40001)
        xs = xs[xs > 0]
        assert d.pdf(xs).max() <= d.sup_bound * (1.0 + 1e-12), name


def test_densities_vanish_off_support(density_catalog):
    for name, d in density_catalog.items():
        outside = np.array([d.x_min / 2.0 if d.x_min > 0 else 1e-9, d.x_max + 1.0])
        assert np.all(d.pdf(outside) == 0.0), name


def test_inverse_cdf_round_trip(density_catalog):
    u = np.linspace(1e-9, 1.0 - 1e-9, 20001)
    for name, d in density_catalog.items():
        x = d.inv_cdf(u)
        assert np.all((x >= d.x_min) & (x <= d.x_max)), name
        np.testing.assert_allclose(d.cdf(x), u, atol=5e-13, err_msg=name)


def test_cdf_matches_quadrature(density_catalog):
    """CDF agrees with direct quadrature of the pdf at interior probes."""
    for name, d in density_catalog.items():
        probes = np.linspace(d.x_min, d.x_max, 7)[1:-1]
        for p in probes:
            xs = np.linspace(d.x_min, p, 100001)
            quad = np.trapezoid(d.pdf(xs), xs)
            assert d.cdf(np.array([p]))[0] == pytest.approx(quad, abs=2e-5), name


def test_sampling_matches_cdf(density_catalog):
    # KS distance of 1e5 inverse-CDF samples against the exact CDF
    rng = np.random.default_rng(11)
    for name, d in density_catalog.items():
        x = np.sort(d.inv_cdf(rng.random(100000)))
        emp = np.arange(1, x.size + 1) / x.size
        ks = np.abs(emp - d.cdf(x)).max()
        assert ks < 0.006, (name, ks)


def test_interval_mass(density_catalog):
    d = density_catalog["uniform-interval"]
    assert d.interval_mass(1.25, 1.75) == pytest.approx(0.5, abs=1e-14)
    assert d.interval_mass(0.0, 3.0) == pytest.approx(1.0, abs=1e-14)


def test_step_density_levels():
    d = model.step_density(0.5, 1.0, 2.0, 0.4)
    assert d.pdf(np.array([0.75]))[0] == pytest.approx(0.8, rel=1e-14)
    assert d.pdf(np.array([1.5]))[0] == pytest.approx(0.6, rel=1e-14)
    assert d.cdf(np.array([1.0]))[0] == pytest.approx(0.4, abs=1e-14)


def test_tabulated_rejects_bad_tables():
    with pytest.raises(ValueError):
        model.tabulated_grid([0.0, 1.0], [1.0, -0.1])
    with pytest.raises(ValueError):
        model.tabulated_grid([1.0, 0.5], [1.0, 1.0])
    with pytest.raises(ValueError):
        model.tabulated_grid([0.0, 1.0], [0.9, 0.9])  # integrates to 0.9


def test_tabulated_normalize_flag():
    d = model.tabulated_grid([0.0, 1.0, 2.0], [0.0, 2.0, 0.0], normalize=True)
    assert d.cdf(np.array([2.0]))[0] == pytest.approx(1.0, abs=1e-12)
    assert d.pdf(np.array([1.0]))[0] == pytest.approx(1.0, rel=1e-12)


def test_truncate_below_threshold(density_catalog):
    d = density_catalog["uniform-interval"]
    t = d.truncate_below(1.25)
    assert t.birth_threshold == pytest.approx(0.25, abs=1e-14)
    assert t.x_max == d.x_max and t.sup_bound == d.sup_bound


def test_truncated_gaussian_window_mass_error():
    with pytest.raises(ValueError):
        model.truncated_gaussian(1.0, 1e-12, 5.0, 6.0)
