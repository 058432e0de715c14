"""Constraint densities, smeared functionals and the lattice Poisson bracket.

Model: free scalar of mass m. With u = tau0', w = tau1', Q = w^2 - u^2 and
s = sqrt(Q) the matter constraint densities are

    H_perp = (Pi^2 + phi'^2) / (2 s) + s m^2 phi^2 / 2,    H_par = Pi phi',

and the covector h_mu = -n_mu H_perp + (tau'_mu / Q) H_par, so that
xi^mu h_mu = N H_perp + N1 H_par. Total constraints are P_mu + h_mu.

Every smeared functional here has the form F = sum_i dx c^mu_i (P + h)_mu,i
with a coefficient c that may depend on tau and tau'. Gradients are stored
as raw partial derivatives dF/dz_i (they carry one factor of dx), so the
bracket carries the matching 1/dx.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Embedding, NotSpacelikeError, slice_geometry, tangent
from .grid import Lattice, SpacetimeVectorField, central_derivative, derivative_matrix, quadrature


@dataclass(frozen=True)
class PhasePoint:
    phi: np.ndarray
    pi: np.ndarray
    tau: Embedding
    p: np.ndarray  # (2, n): P_0, P_1

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        p = np.asarray(self.p, dtype=float)
        n = phi.shape[-1]
        if phi.shape != (n,) or pi.shape != (n,) or p.shape != (2, n) or self.tau.tau0.shape != (n,):
            raise ValueError("phase point sectors must all have length n")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.phi.size

    @property
    def token(self) -> str:
        h = hashlib.blake2b(self.flat().tobytes(), digest_size=12)
        return h.hexdigest()

    def flat(self) -> np.ndarray:
        """Layout (phi, tau0, tau1, Pi, P0, P1): coordinates then momenta."""
        return np.concatenate([self.phi, self.tau.tau0, self.tau.tau1, self.pi, self.p[0], self.p[1]])

    @classmethod
    def from_flat(cls, z: np.ndarray) -> "PhasePoint":
        phi, t0, t1, pi, p0, p1 = np.split(np.asarray(z, dtype=float), 6)
        return cls(phi, pi, Embedding(t0, t1), np.stack([p0, p1]))

    def replace(self, **kw) -> "PhasePoint":
        d = dict(phi=self.phi, pi=self.pi, tau=self.tau, p=self.p)
        d.update(kw)
        return PhasePoint(**d)


@dataclass(frozen=True)
class SmearedFunctional:
    value: float
    grad_phi: np.ndarray
    grad_pi: np.ndarray
    grad_tau: np.ndarray  # (2, n)
    grad_p: np.ndarray  # (2, n)
    token: str = field(default="", compare=False)

    def flat_grad(self) -> np.ndarray:
        return np.concatenate(
            [self.grad_phi, self.grad_tau[0], self.grad_tau[1], self.grad_pi, self.grad_p[0], self.grad_p[1]]
        )


# --- pointwise densities and their partials --------------------------------


@dataclass(frozen=True)
class MatterPartials:
    """h_mu and its partials; every array has shape (2, ..., n)."""

    h: np.ndarray
    d_phi: np.ndarray
    d_dphi: np.ndarray
    d_pi: np.ndarray
    d_u: np.ndarray
    d_w: np.ndarray
    h_perp: np.ndarray
    h_par: np.ndarray


def matter_partials(phi, pi, u, w, m: float, lat: Lattice) -> MatterPartials:
    shape = np.broadcast_shapes(np.shape(phi), np.shape(pi), np.shape(u), np.shape(w))
    phi, pi, u, w = (np.broadcast_to(a, shape) for a in (phi, pi, u, w))
    dphi = central_derivative(phi, lat)
    q = w * w - u * u
    s = np.sqrt(q)
    kin = 0.5 * (pi * pi + dphi * dphi)
    pot = 0.5 * m * m * phi * phi
    h_perp = kin / s + s * pot
    h_par = pi * dphi

    alpha = np.stack([w / s, -u / s])
    beta = np.stack([-u / q, w / q])
    h = alpha * h_perp + beta * h_par

    d_phi = alpha * (s * m * m * phi)
    d_dphi = alpha * (dphi / s) + beta * pi
    d_pi = alpha * (pi / s) + beta * dphi

    ds = -kin / q + pot
    s3 = s * q
    q2 = q * q
    d_alpha_u = np.stack([w * u / s3, -w * w / s3])
    d_alpha_w = np.stack([-u * u / s3, u * w / s3])
    d_beta_u = np.stack([-(w * w + u * u) / q2, 2 * u * w / q2])
    d_beta_w = np.stack([2 * u * w / q2, -(w * w + u * u) / q2])
    d_u = d_alpha_u * h_perp + alpha * (ds * (-u / s)) + d_beta_u * h_par
    d_w = d_alpha_w * h_perp + alpha * (ds * (w / s)) + d_beta_w * h_par
    return MatterPartials(h, d_phi, d_dphi, d_pi, d_u, d_w, h_perp, h_par)


def _geometry_checked(tau: Embedding, lat: Lattice):
    geo = slice_geometry(tau, lat)
    return geo.tangent


def constraint_densities(state: PhasePoint, m: float, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
    u, w = _geometry_checked(state.tau, lat)
    mp = matter_partials(state.phi, state.pi, u, w, m, lat)
    return mp.h_perp, mp.h_par


def matter_constraints(state: PhasePoint, m: float, lat: Lattice) -> np.ndarray:
    """h_mu per site, shape (2, n)."""
    u, w = _geometry_checked(state.tau, lat)
    return matter_partials(state.phi, state.pi, u, w, m, lat).h


def full_constraints(state: PhasePoint, m: float, lat: Lattice) -> np.ndarray:
    """P_mu + h_mu per site, shape (2, n)."""
    return state.p + matter_constraints(state, m, lat)


def on_shell(state: PhasePoint, m: float, lat: Lattice) -> PhasePoint:
    """Same matter and embedding with P set to -h, so all constraints vanish."""
    return state.replace(p=-matter_constraints(state, m, lat))


# --- generic smearing -------------------------------------------------------


@dataclass(frozen=True)
class Coefficient:
    """Per-site smearing c^mu with partials dc^mu/dtau^nu and dc^mu/dtau'^nu."""

    c: np.ndarray  # (2, n)
    d_tau: Optional[np.ndarray] = None  # (2, 2, n) [mu, nu]
    d_tangent: Optional[np.ndarray] = None  # (2, 2, n) [mu, nu]


def smear(state: PhasePoint, coef: Coefficient, m: float, lat: Lattice) -> SmearedFunctional:
    u, w = _geometry_checked(state.tau, lat)
    mp = matter_partials(state.phi, state.pi, u, w, m, lat)
    dx = lat.spacing
    c = coef.c
    total = state.p + mp.h
    value = float(np.sum(c * total) * dx)

    g_phi = dx * (np.sum(c * mp.d_phi, axis=0) - central_derivative(np.sum(c * mp.d_dphi, axis=0), lat))
    g_pi = dx * np.sum(c * mp.d_pi, axis=0)
    g_p = dx * c

    flux = np.stack([np.sum(c * mp.d_u, axis=0), np.sum(c * mp.d_w, axis=0)])
    if coef.d_tangent is not None:
        flux = flux + np.einsum("mvi,mi->vi", coef.d_tangent, total)
    g_tau = -dx * central_derivative(flux, lat)
    if coef.d_tau is not None:
        g_tau = g_tau + dx * np.einsum("mvi,mi->vi", coef.d_tau, total)
    return SmearedFunctional(value, g_phi, g_pi, g_tau, g_p, state.token)


def vector_coefficient(state: PhasePoint, xi) -> Coefficient:
    """c = xi(tau) for an analytic field, or frozen per-site components."""
    if isinstance(xi, SpacetimeVectorField):
        vals, jac = xi.with_jacobian(state.tau.tau0, state.tau.tau1)
        return Coefficient(vals, d_tau=jac)
    c = np.asarray(xi, dtype=float)
    if c.shape != (2, state.n):
        raise ValueError(f"per-site vector field must have shape (2, {state.n})")
    return Coefficient(c)


def comomentum(state: PhasePoint, xi, m: float, lat: Lattice) -> SmearedFunctional:
    """H(xi) = sum dx xi^mu(tau) (P_mu + h_mu) with exact gradients."""
    return smear(state, vector_coefficient(state, xi), m, lat)


def comomentum_pairing(state: PhasePoint, xi, m: float, lat: Lattice) -> SmearedFunctional:
    """Pairing <J~, xi> = -H(xi), the sign convention of the momentum map."""
    F = comomentum(state, xi, m, lat)
    return SmearedFunctional(-F.value, -F.grad_phi, -F.grad_pi, -F.grad_tau, -F.grad_p, F.token)


def _normal_coefficient(state: PhasePoint, lapse, lat: Lattice) -> Coefficient:
    u, w = tangent(state.tau.tau0, state.tau.tau1, lat)
    q = w * w - u * u
    s = np.sqrt(q)
    s3 = s * q
    N = np.broadcast_to(np.asarray(lapse, dtype=float), (state.n,))
    c = N * np.stack([w / s, u / s])
    d_tan = N * np.stack([
        np.stack([w * u / s3, -u * u / s3]),
        np.stack([w * w / s3, -u * w / s3]),
    ])
    return Coefficient(c, d_tangent=d_tan)


def _tangent_coefficient(state: PhasePoint, shift, lat: Lattice) -> Coefficient:
    u, w = tangent(state.tau.tau0, state.tau.tau1, lat)
    S = np.broadcast_to(np.asarray(shift, dtype=float), (state.n,))
    zero = np.zeros(state.n)
    d_tan = np.stack([np.stack([S, zero]), np.stack([zero, S])])
    return Coefficient(S * np.stack([u, w]), d_tangent=d_tan)


def lapse_functional(state: PhasePoint, lapse, m: float, lat: Lattice) -> SmearedFunctional:
    """H[N] = sum dx N n^mu (P + h)_mu."""
    _geometry_checked(state.tau, lat)
    return smear(state, _normal_coefficient(state, lapse, lat), m, lat)


def shift_functional(state: PhasePoint, shift, m: float, lat: Lattice) -> SmearedFunctional:
    """H[N1] = sum dx N1 tau'^mu (P + h)_mu."""
    _geometry_checked(state.tau, lat)
    return smear(state, _tangent_coefficient(state, shift, lat), m, lat)


def spatial_momentum_map(state: PhasePoint, zeta, m: float, lat: Lattice) -> SmearedFunctional:
    """J(zeta) = -sum dx zeta tau'^mu (P + h)_mu for a spatial vector field zeta."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (state.n,):
        raise ValueError(f"zeta must have length {state.n}")
    return shift_functional(state, -zeta, m, lat)


def smeared_matter(lat: Lattice, state: PhasePoint, f=None, g=None) -> SmearedFunctional:
    """F = sum dx (f phi + g Pi), handy for bracket checks."""
    n = state.n
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float)
    g = np.zeros(n) if g is None else np.asarray(g, dtype=float)
    value = float(quadrature(f * state.phi + g * state.pi, lat))
    z = np.zeros((2, n))
    return SmearedFunctional(value, lat.spacing * f, lat.spacing * g, z, z.copy(), state.token)


# --- bracket ----------------------------------------------------------------


def poisson_bracket(F: SmearedFunctional, G: SmearedFunctional, lat: Lattice) -> float:
    if F.token and G.token and F.token != G.token:
        raise ValueError("functionals were evaluated at different phase points")
    if F.grad_phi.shape != (lat.n,) or G.grad_phi.shape != (lat.n,):
        raise ValueError("gradient length does not match the lattice")
    total = (
        F.grad_phi @ G.grad_pi
        - F.grad_pi @ G.grad_phi
        + np.sum(F.grad_tau * G.grad_p)
        - np.sum(F.grad_p * G.grad_tau)
    )
    return float(total / lat.spacing)


def bracket_vectors(a: np.ndarray, b: np.ndarray, lat: Lattice) -> np.ndarray:
    """Brackets between stacks of flat gradients: a (k, 6n), b (l, 6n) -> (k, l)."""
    h = a.shape[-1] // 2
    return (a[..., :h] @ b[..., h:].T - a[..., h:] @ b[..., :h].T) / lat.spacing


# --- Jacobian of the constraints -------------------------------------------


def constraint_jacobian(state: PhasePoint, m: float, lat: Lattice) -> np.ndarray:
    """d(P + h)_{mu,i} / dz_j as a dense (2n, 6n) matrix in the flat layout."""
    n = lat.n
    u, w = _geometry_checked(state.tau, lat)
    mp = matter_partials(state.phi, state.pi, u, w, m, lat)
    D = derivative_matrix(lat)
    eye = np.eye(n)
    rows = []
    for mu in range(2):
        blocks = [
            np.diag(mp.d_phi[mu]) + mp.d_dphi[mu][:, None] * D,
            mp.d_u[mu][:, None] * D,
            mp.d_w[mu][:, None] * D,
            np.diag(mp.d_pi[mu]),
            eye if mu == 0 else np.zeros((n, n)),
            eye if mu == 1 else np.zeros((n, n)),
        ]
        rows.append(np.hstack(blocks))
    return np.vstack(rows)


# --- algebra checks ---------------------------------------------------------


def verify_dirac_algebra(state: PhasePoint, N, M, Nvec, Mvec, m: float, lat: Lattice) -> tuple[float, float, float]:
    """Residuals of the three hypersurface-deformation relations."""
    N, M, Nvec, Mvec = (np.broadcast_to(np.asarray(a, dtype=float), (lat.n,)) for a in (N, M, Nvec, Mvec))
    D = lambda f: central_derivative(f, lat)  # noqa: E731
    u, w = _geometry_checked(state.tau, lat)
    q = w * w - u * u

    HN, HM = lapse_functional(state, N, m, lat), lapse_functional(state, M, m, lat)
    HNv, HMv = shift_functional(state, Nvec, m, lat), shift_functional(state, Mvec, m, lat)

    r1 = poisson_bracket(HNv, HMv, lat) - shift_functional(state, Nvec * D(Mvec) - Mvec * D(Nvec), m, lat).value
    r2 = poisson_bracket(HNv, HM, lat) - lapse_functional(state, Nvec * D(M), m, lat).value
    r3 = poisson_bracket(HN, HM, lat) - shift_functional(state, (N * D(M) - M * D(N)) / q, m, lat).value
    return abs(r1), abs(r2), abs(r3)


def verify_equivariance(state: PhasePoint, xi: SpacetimeVectorField, zeta: SpacetimeVectorField,
                        m: float, lat: Lattice) -> float:
    """|{H(xi), H(zeta)} + H([xi, zeta])|."""
    if xi == zeta:
        return 0.0
    Hx, Hz = comomentum(state, xi, m, lat), comomentum(state, zeta, m, lat)
    return abs(poisson_bracket(Hx, Hz, lat) + comomentum(state, xi.bracket(zeta), m, lat).value)


def fit_order(ns, residuals) -> float:
    """Least-squares slope of -log(residual) against log(n)."""
    slope = np.polyfit(np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(residuals, dtype=float)), 1)[0]
    return float(-slope)


# --- smooth random states ---------------------------------------------------


def _modes(rng: np.random.Generator, kmax: int) -> np.ndarray:
    return rng.normal(size=(2, kmax)) / np.arange(1, kmax + 1) ** 2


def _series(coef: np.ndarray, x: np.ndarray, derivative: bool = False) -> np.ndarray:
    k = np.arange(1, coef.shape[1] + 1)[:, None]
    if derivative:
        return np.sum(k * (-coef[0][:, None] * np.sin(k * x) + coef[1][:, None] * np.cos(k * x)), axis=0)
    return np.sum(coef[0][:, None] * np.cos(k * x) + coef[1][:, None] * np.sin(k * x), axis=0)


def random_state(lat: Lattice, rng: np.random.Generator, kmax: int = 3, tilt: float = 0.4,
                 stretch: float = 0.2, on_shell_p: bool = False, m: float = 1.0) -> PhasePoint:
    """Smooth random phase point built from low Fourier modes.

    The continuum functions depend only on the random draws, not on n, so the
    same generator seed gives the same continuum state on every lattice. The
    embedding amplitudes keep |tau0'| <= tilt and |tau1' - 1| <= stretch.
    """
    x = lat.sites
    grid = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    phi = _series(_modes(rng, kmax), x) + rng.normal() * 0.3
    pi = _series(_modes(rng, kmax), x) + rng.normal() * 0.3
    c0, c1 = _modes(rng, kmax), _modes(rng, kmax)
    a0 = tilt / max(np.max(np.abs(_series(c0, grid, True))), 1e-12) * rng.uniform(0.5, 1.0)
    a1 = stretch / max(np.max(np.abs(_series(c1, grid, True))), 1e-12) * rng.uniform(0.5, 1.0)
    t_shift = rng.normal() * 0.2
    tau = Embedding(t_shift + a0 * _series(c0, x), x + a1 * _series(c1, x))
    p = np.stack([_series(_modes(rng, kmax), x), _series(_modes(rng, kmax), x)])
    state = PhasePoint(phi, pi, tau, p)
    return on_shell(state, m, lat) if on_shell_p else state




def matter_flow(phi, pi, c, u, w, m: float, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """(phidot, Pidot) for H = sum dx c^mu h_mu with c, u, w frozen.

    phi and Pi may carry leading batch axes; c has shape (2, n).
    """
    mp = matter_partials(phi, pi, u, w, m, lat)
    c = np.asarray(c, dtype=float).reshape((2,) + (1,) * (np.ndim(phi) - 1) + (lat.n,))
    phidot = np.sum(c * mp.d_pi, axis=0)
    pidot = -(np.sum(c * mp.d_phi, axis=0) - central_derivative(np.sum(c * mp.d_dphi, axis=0), lat))
    return phidot, pidot


def matter_energy(phi, pi, c, u, w, m: float, lat: Lattice) -> np.ndarray:
    """Per-site dx c^mu h_mu, batched over leading axes of phi and Pi."""
    mp = matter_partials(phi, pi, u, w, m, lat)
    c = np.asarray(c, dtype=float).reshape((2,) + (1,) * (np.ndim(phi) - 1) + (lat.n,))
    return lat.spacing * np.sum(c * mp.h, axis=0)


__all__ = [
    "PhasePoint",
    "SmearedFunctional",
    "Coefficient",
    "NotSpacelikeError",
    "constraint_densities",
    "matter_constraints",
    "full_constraints",
    "on_shell",
    "smear",
    "comomentum",
    "comomentum_pairing",
    "lapse_functional",
    "shift_functional",
    "spatial_momentum_map",
    "smeared_matter",
    "poisson_bracket",
    "bracket_vectors",
    "constraint_jacobian",
    "verify_dirac_algebra",
    "verify_equivariance",
    "fit_order",
    "random_state",
    "matter_flow",
    "matter_energy",
]
