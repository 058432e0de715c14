"""Pointwise covariant quantities for the parametrized free scalar.

Jet coordinates are (x^mu, y, v_mu, u^a, u^a_mu) with du[a, mu] = d_mu eta^a.
The pulled-back metric is G = du^T eta du, and

    L = -sqrt(-det G) (G^{mu nu} v_mu v_nu + m^2 y^2) / 2.

All functions broadcast over leading axes, so a whole slice is evaluated in
one call with arrays of shape (n, 2) and (n, 2, 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import PhasePoint, comomentum, matter_constraints
from .geometry import ETA, slice_geometry
from .grid import Lattice, SpacetimeVectorField, central_derivative


@dataclass(frozen=True)
class JetPoint:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    u: np.ndarray
    du: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "v", "u", "du"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.linalg.det(self.du) <= 0):
            raise ValueError("covariance field must preserve orientation (det du > 0)")

    @classmethod
    def identity(cls, v=(0.0, 0.0), y=0.0, x=(0.0, 0.0)) -> "JetPoint":
        x = np.asarray(x, dtype=float)
        return cls(x, np.asarray(y, dtype=float), np.asarray(v, dtype=float), x.copy(), np.eye(2))


@dataclass(frozen=True)
class MultiMomenta:
    p_tilde: np.ndarray
    p: np.ndarray  # (..., 2) upper index mu
    rho: np.ndarray  # (..., 2, 2) [a, mu]
    piola: np.ndarray  # (..., 2, 2) [mu, nu]


def pulled_metric(du: np.ndarray) -> np.ndarray:
    return np.einsum("...am,ab,...bn->...mn", du, ETA, du)


def scalar_lagrangian(j: JetPoint, m: float) -> tuple[np.ndarray, np.ndarray]:
    G = pulled_metric(j.du)
    det = np.linalg.det(G)
    if np.any(det >= 0):
        raise ValueError("degenerate or non-Lorentzian pulled-back metric")
    Ginv = np.linalg.inv(G)
    X = np.einsum("...mn,...m,...n->...", Ginv, j.v, j.v) + m * m * j.y**2
    return -np.sqrt(-det) * X / 2, G


def legendre(j: JetPoint, m: float) -> MultiMomenta:
    L, G = scalar_lagrangian(j, m)
    root = np.sqrt(-np.linalg.det(G))
    Ginv = np.linalg.inv(G)
    v_up = np.einsum("...mn,...n->...m", Ginv, j.v)
    X = np.einsum("...m,...m->...", v_up, j.v) + m * m * j.y**2
    p = -root[..., None] * v_up
    piola = -0.5 * (root * X)[..., None, None] * Ginv + root[..., None, None] * np.einsum("...m,...n->...mn", v_up, v_up)
    rho = np.einsum("ab,...bn,...nm->...am", ETA, j.du, piola)
    p_tilde = L - np.einsum("...m,...m->...", p, j.v) - np.einsum("...am,...am->...", rho, j.du)
    return MultiMomenta(p_tilde, p, rho, piola)


def momentum_map_density(j: JetPoint, mm: MultiMomenta, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Components p~ xi^mu (the fibre part vanishes for a scalar) and the
    two-form blocks -p^mu xi^nu and -rho_a^mu xi^nu."""
    if isinstance(xi, SpacetimeVectorField):
        xi = xi(j.x[..., 0], j.x[..., 1])
        xi = np.moveaxis(xi, 0, -1)
    xi = np.asarray(xi, dtype=float)
    density = mm.p_tilde[..., None] * xi
    field_block = -np.einsum("...m,...n->...mn", mm.p, xi)
    cov_block = -np.einsum("...am,...n->...amn", mm.rho, xi)
    return density, field_block, cov_block


def slice_jet(state: PhasePoint, m: float, lat: Lattice, transversal=None) -> tuple[JetPoint, np.ndarray]:
    """Holonomic jet on the slice in coordinates adapted to the foliation.

    The adapted frame is du = [T | tau'] with T the unit normal unless a
    transversal (2, n) field is given. The normal velocity v_0 is fixed by
    requiring p^0 = Pi. Returns the jet and the per-site frame du.
    """
    geo = slice_geometry(state.tau, lat)
    T = geo.normal_up if transversal is None else np.asarray(transversal, dtype=float)
    du = np.stack([T, geo.tangent], axis=-1).transpose(1, 0, 2)  # (n, 2, 2): [i, a, mu]
    dphi = central_derivative(state.phi, lat)
    G = pulled_metric(du)
    Ginv = np.linalg.inv(G)
    root = np.sqrt(-np.linalg.det(G))
    v0 = -(state.pi / root + Ginv[:, 0, 1] * dphi) / Ginv[:, 0, 0]
    x = np.stack([state.tau.tau0, state.tau.tau1], axis=-1)
    return JetPoint(x, state.phi.copy(), np.stack([v0, dphi], axis=-1), x.copy(), du), du


def slice_pullback_check(state: PhasePoint, xi: SpacetimeVectorField, m: float, lat: Lattice,
                         transversal=None) -> float:
    """|integral of -(Pi phidot + P_a xi^a - L xi^0_adapted) + H(xi)|.

    The left side is assembled from the covariant quantities of the lifted
    jet; H(xi) comes from the canonical module.
    """
    jet, du = slice_jet(state, m, lat, transversal)
    mm = legendre(jet, m)
    if not np.allclose(mm.p[:, 0], state.pi, rtol=1e-10, atol=1e-10):
        raise ValueError("inconsistent state: Pi differs from p^0 of the lifted jet")
    xi_phys = np.moveaxis(xi(state.tau.tau0, state.tau.tau1), 0, -1)  # (n, 2)
    xi_adapted = np.linalg.solve(du, xi_phys[..., None])[..., 0]
    phidot = np.einsum("im,im->i", xi_adapted, jet.v)
    lagrangian = mm.p_tilde + np.einsum("im,im->i", mm.p, jet.v) + np.einsum("iam,iam->i", mm.rho, du)
    p_term = np.einsum("ai,ia->i", state.p, xi_phys)
    integrand = -(state.pi * phidot + p_term - lagrangian * xi_adapted[:, 0])
    lhs = float(np.sum(integrand) * lat.spacing)
    rhs = -comomentum(state, xi, m, lat).value
    return abs(lhs - rhs)


def lifted_momenta(state: PhasePoint, m: float, lat: Lattice) -> np.ndarray:
    """rho_a^0 of the lifted jet in the normal-adapted frame, shape (2, n)."""
    jet, _ = slice_jet(state, m, lat)
    return legendre(jet, m).rho[:, :, 0].T


def lift_consistency(state: PhasePoint, m: float, lat: Lattice) -> float:
    """max |rho_a^0 + h_a|: the covariance momenta of the lift equal -h."""
    return float(np.max(np.abs(lifted_momenta(state, m, lat) + matter_constraints(state, m, lat))))
