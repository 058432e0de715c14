import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pftlab.geometry import (
    Embedding,
    NotSpacelikeError,
    decompose_lapse_shift,
    local_temperature,
    pushforward_spatial,
    slice_geometry,
)
from pftlab.grid import Lattice, SpacetimeVectorField


def tilted(lat):
    return Embedding(0.5 * np.sin(lat.sites), lat.sites.copy())


def test_identity_slice_geometry():
    lat = Lattice(16)
    geo = slice_geometry(Embedding.identity(lat), lat)
    np.testing.assert_allclose(geo.q11, 1.0)
    np.testing.assert_allclose(geo.normal_up, [[1.0] * 16, [0.0] * 16])
    np.testing.assert_allclose(geo.normal_down, [[-1.0] * 16, [0.0] * 16])


def test_timelike_slice_is_refused_with_sites():
    lat = Lattice(16)
    with pytest.raises(NotSpacelikeError) as info:
        slice_geometry(Embedding(lat.sites.copy(), np.zeros(16)), lat)
    # the periodic wrap makes the ramp's derivative jump at the ends
    assert set(range(1, 15)) <= set(info.value.sites)


def test_normal_is_unit_and_orthogonal():
    lat = Lattice(32)
    geo = slice_geometry(tilted(lat), lat)
    n, t = geo.normal_up, geo.tangent
    np.testing.assert_allclose(-n[0] ** 2 + n[1] ** 2, -1.0, atol=1e-14)
    np.testing.assert_allclose(-n[0] * t[0] + n[1] * t[1], 0.0, atol=1e-14)


def test_pure_normal_and_pure_tangent():
    lat = Lattice(16)
    tau = Embedding.identity(lat)
    N, S = decompose_lapse_shift(SpacetimeVectorField.parse("1", "0"), tau, lat)
    np.testing.assert_allclose(N, 1.0)
    np.testing.assert_allclose(S, 0.0)
    N, S = decompose_lapse_shift(SpacetimeVectorField.parse("0", "1"), tau, lat)
    np.testing.assert_allclose(N, 0.0)
    np.testing.assert_allclose(S, 1.0)


def test_tilted_slice_lapse_and_shift():
    lat = Lattice(64)
    tau = tilted(lat)
    u0 = 0.5 * lat.stencil_factor  # stencil value of tau0' at x = 0
    N, S = decompose_lapse_shift(SpacetimeVectorField.parse("1", "0"), tau, lat)
    assert N[0] == pytest.approx(1 / math.sqrt(1 - u0**2), abs=1e-12)
    assert S[0] == pytest.approx(-u0 / (1 - u0**2), abs=1e-12)
    # continuum values at x = 0
    assert N[0] == pytest.approx(1 / math.sqrt(0.75), abs=2e-3)
    assert S[0] == pytest.approx(-0.5 / 0.75, abs=2e-3)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.6), st.floats(-0.3, 0.3), st.floats(-2, 2), st.floats(-2, 2))
def test_lapse_shift_reconstruction(tilt, stretch, a, b):
    lat = Lattice(32)
    x = lat.sites
    tau = Embedding(tilt * np.sin(x), x + stretch * np.sin(2 * x) / 2)
    xi = SpacetimeVectorField.parse(f"1 + {abs(a)}*cos(x)^2", f"{b}*sin(t + x)")
    N, S = decompose_lapse_shift(xi, tau, lat)
    geo = slice_geometry(tau, lat)
    rebuilt = N * geo.normal_up + S * geo.tangent
    np.testing.assert_allclose(rebuilt, xi(tau.tau0, tau.tau1), atol=1e-12)


def test_pushforward_examples():
    lat = Lattice(64)
    assert np.all(pushforward_spatial(np.zeros(64), Embedding.identity(lat), lat) == 0)
    np.testing.assert_allclose(pushforward_spatial(np.ones(64), Embedding.identity(lat), lat),
                               [[0.0] * 64, [1.0] * 64], atol=1e-14)
    v = pushforward_spatial(np.cos(lat.sites), tilted(lat), lat)
    np.testing.assert_allclose(v[:, 0], [0.5 * lat.stencil_factor, 1.0], atol=1e-14)


def test_local_temperature():
    lat = Lattice(8)
    tau = Embedding.identity(lat)
    for comps, T in ((("1", "0"), 1.0), (("2", "0"), 0.5), (("1", "1"), 1 / math.sqrt(2))):
        np.testing.assert_allclose(local_temperature(SpacetimeVectorField.parse(*comps), tau, lat), T)
    with pytest.raises(ValueError):
        local_temperature(SpacetimeVectorField.parse("0", "0"), tau, lat)


def test_embedding_csv_round_trip():
    lat = Lattice(8)
    tau = tilted(lat)
    text = tau.to_csv()
    assert text.startswith("tau0,tau1\n")
    back = Embedding.from_csv(text)
    np.testing.assert_array_equal(back.stacked, tau.stacked)
