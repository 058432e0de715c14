import math
import warnings

import numpy as np
import pytest

from pftlab.canonical import PhasePoint
from pftlab.ensemble import (
    GibbsSpec,
    OverlapError,
    SamplerConfig,
    combine,
    estimate,
    estimate_values,
    log_weight,
    matter_hamiltonian,
    sample,
    stationarity_test,
    thermo,
)
from pftlab.ensemble.gibbs import NotNormalizableError, REGULATED, check_normalizable, kernel_basis
from pftlab.geometry import Embedding
from pftlab.grid import Lattice, SpacetimeVectorField, derivative_matrix

XI = SpacetimeVectorField.parse("1", "0")
SMALL = SamplerConfig(seed=7, chains=4, samples=200, burn_in=200)


def test_log_weight_closed_form():
    lat = Lattice(64)
    st_ = PhasePoint(np.sin(lat.sites), np.zeros(64), Embedding.identity(lat), np.zeros((2, 64)))
    lw = log_weight(st_, GibbsSpec(XI, b=2.0, mass=0.0), lat)
    assert lw == pytest.approx(-math.pi * lat.stencil_factor**2, abs=1e-13)


@pytest.mark.parametrize("comps, kw", [
    (("0", "1"), {}),
    (("1", "2"), {}),
    (("1", "0"), {"mass": 0.0}),
])
def test_non_normalizable_specs_are_refused(comps, kw):
    with pytest.raises(NotNormalizableError):
        check_normalizable(GibbsSpec(SpacetimeVectorField.parse(*comps), **kw), Lattice(8))


def test_non_positive_b_is_refused():
    with pytest.raises(NotNormalizableError):
        GibbsSpec(XI, b=0.0)


def test_massless_state_with_pinned_kernel_samples():
    lat = Lattice(8)
    s = sample(GibbsSpec(XI, mass=0.0, pin_zero_mode=True), SMALL, lat)
    proj = s.phi @ kernel_basis(lat).T
    assert np.max(np.abs(proj)) < 1e-10


@pytest.mark.parametrize("b", [1.0, 4.0])
def test_equipartition(b):
    lat = Lattice(16)
    spec = GibbsSpec(XI, b=b)
    s = sample(spec, SamplerConfig(seed=11), lat)
    e = estimate_values(matter_hamiltonian(spec, s.phi, s.pi, lat))
    assert abs(e.z(lat.n / b)) <= 3


def test_field_propagator():
    lat = Lattice(8)
    b = 1.5
    D = derivative_matrix(lat)
    cov = np.linalg.inv(b * lat.spacing * (D.T @ D + np.eye(8)))
    s = sample(GibbsSpec(XI, b=b), SamplerConfig(seed=12), lat)
    for i, j in ((0, 0), (0, 1), (0, 2), (3, 7)):
        e = estimate_values(s.phi[..., i] * s.phi[..., j])
        assert abs(e.z(cov[i, j])) <= 3.5


def test_sampling_is_bit_identical_across_threads_and_groups():
    lat = Lattice(8)
    spec = GibbsSpec(SpacetimeVectorField.parse("1 + 0.2*cos(x)", "0.1"), b=1.3)
    base = sample(spec, SamplerConfig(seed=5, chains=6, samples=50), lat)
    for workers, group in ((3, 2), (2, 1), (1, 4)):
        other = sample(spec, SamplerConfig(seed=5, chains=6, samples=50, workers=workers, group_size=group), lat)
        np.testing.assert_array_equal(base.phi, other.phi)
        np.testing.assert_array_equal(base.pi, other.pi)
        np.testing.assert_array_equal(base.log_weights, other.log_weights)


def test_global_rescaling_equals_inverse_temperature():
    lat = Lattice(8)
    cfg = SamplerConfig(seed=3, chains=4, samples=100)
    a = sample(GibbsSpec(SpacetimeVectorField.parse("2", "0"), b=1.0), cfg, lat)
    b = sample(GibbsSpec(XI, b=2.0), cfg, lat)
    np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(a.log_weights, b.log_weights)


def test_stored_log_weights_match_recomputation():
    lat = Lattice(8)
    spec = GibbsSpec(SpacetimeVectorField.parse("1 + 0.2*cos(x)", "0.1"), b=0.7)
    s = sample(spec, SMALL, lat)
    for c, k in ((0, 0), (2, 150)):
        assert s.log_weights[c, k] == pytest.approx(log_weight(s.state(c, k), spec, lat), rel=1e-12, abs=1e-12)


def test_mala_proposal_samples_the_same_state():
    lat = Lattice(8)
    spec = GibbsSpec(XI, b=2.0)
    s = sample(spec, SamplerConfig(seed=13, proposal="mala"), lat)
    e = estimate_values(matter_hamiltonian(spec, s.phi, s.pi, lat))
    assert abs(e.z(lat.n / 2.0)) <= 3


def test_acceptance_outside_band_is_flagged():
    lat = Lattice(8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = sample(GibbsSpec(XI), SamplerConfig(seed=1, chains=2, samples=50, target_accept=0.95), lat)
    assert s.meta["warnings"]


def test_regulated_mode_samples_all_sectors():
    lat = Lattice(8)
    spec = GibbsSpec(XI, mode=REGULATED)
    s = sample(spec, SamplerConfig(seed=2, chains=2, samples=100), lat)
    assert s.tau0.shape == (2, 100, 8) and s.p.shape == (2, 100, 2, 8)
    assert np.all(np.isfinite(s.log_weights))
    assert s.log_weights[1, 50] == pytest.approx(log_weight(s.state(1, 50), spec, lat), rel=1e-12)


def test_estimator_examples():
    lat = Lattice(8)
    s = sample(GibbsSpec(XI), SMALL, lat)
    const = estimate(lambda phi, pi: np.full(phi.shape[:2], 2.5), s)
    assert const.mean == 2.5 and const.error == 0.0
    # a 3 sigma cut needs enough chains for the error bar to have many degrees of freedom
    full = sample(GibbsSpec(XI), SamplerConfig(seed=7), lat)
    lin = estimate(lambda phi, pi: phi[..., 0] + pi[..., 3], full)
    assert abs(lin.z(0.0)) <= 3
    with pytest.raises(ValueError):
        estimate_values(np.zeros((2, 0)))


def test_combine_keeps_correlations_within_an_ensemble():
    v = np.random.default_rng(0).normal(size=(4, 100))
    same = combine([("a", 1.0, v), ("a", -1.0, v)])
    assert same.mean == 0.0 and same.error == 0.0
    indep = combine([("a", 1.0, v), ("b", -1.0, v)])
    assert indep.error > 0


def test_identical_states_have_no_thermodynamic_difference():
    lat = Lattice(8)
    spec = GibbsSpec(XI)
    r = thermo(spec, spec, SMALL, lat, ti_points=3)
    assert r.KL.mean == 0.0 and r.logZ_diff.mean == 0.0 and r.F_diff.mean == 0.0
    assert r.work.mean == 0.0


def test_poor_overlap_is_refused():
    lat = Lattice(8)
    with pytest.raises(OverlapError):
        thermo(GibbsSpec(XI, b=1.0), GibbsSpec(XI, b=200.0), SMALL, lat, ti_points=3)


def test_stationarity_without_flow_is_exact():
    lat = Lattice(8)
    rep = stationarity_test(GibbsSpec(XI), SMALL, 0.0, lat)
    assert rep.max_deviation == 0.0
