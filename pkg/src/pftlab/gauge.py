"""Gauge fixing chi = tau - F(lam, x), Dirac brackets and reduced dynamics.

Gauge functions depend on (lam, x) only. For such gauges the brackets
{H_mu(x_i), chi^nu(x_j)} reduce to -delta/dx, so the induced bracket on the
matter fields is exactly canonical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .canonical import (
    PhasePoint,
    SmearedFunctional,
    bracket_vectors,
    constraint_jacobian,
    full_constraints,
    matter_energy,
    matter_flow,
    smear,
    Coefficient,
)
from .geometry import Embedding, slice_geometry, tangent
from .grid import Lattice

GAUGE_VARIABLES = ("lam", "x")


class GaugeError(ValueError):
    pass


def _node(e) -> ex.Node:
    if isinstance(e, str):
        return ex.parse_expr(e, GAUGE_VARIABLES)
    if isinstance(e, (int, float)):
        return ex.Num(float(e))
    return e


@dataclass(frozen=True)
class GaugeSpec:
    f0: ex.Node
    f1: ex.Node
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "f0", _node(self.f0))
        object.__setattr__(self, "f1", _node(self.f1))
        for comp in (self.f0, self.f1):
            extra = ex.free_variables(comp) - set(GAUGE_VARIABLES)
            if extra:
                raise GaugeError(f"gauge functions may only use lam and x, found {sorted(extra)}")

    @classmethod
    def timegauge(cls) -> "GaugeSpec":
        return cls(ex.Var("lam"), ex.Var("x"), "timegauge")

    @classmethod
    def parse(cls, f0: str, f1: str) -> "GaugeSpec":
        return cls(f0, f1)

    def embedding(self, lam: float, lat: Lattice) -> Embedding:
        x = lat.sites
        return Embedding(ex.evaluate(self.f0, lam=lam, x=x), ex.evaluate(self.f1, lam=lam, x=x))

    def velocity(self, lam: float, lat: Lattice) -> np.ndarray:
        """dF^mu/dlam at the sites, shape (2, n)."""
        x = lat.sites
        return np.stack([ex.evaluate(ex.diff(f, "lam"), lam=lam, x=x) for f in (self.f0, self.f1)])

    def validate(self, lams, lat: Lattice) -> None:
        """Check winding, periodicity and spacelike slices at the given lam values."""
        x = lat.sites
        L = lat.circumference
        for lam in np.atleast_1d(lams):
            d0 = ex.evaluate(self.f0, lam=lam, x=x + L) - ex.evaluate(self.f0, lam=lam, x=x)
            d1 = ex.evaluate(self.f1, lam=lam, x=x + L) - ex.evaluate(self.f1, lam=lam, x=x)
            if np.max(np.abs(d0)) > 1e-9 or np.max(np.abs(d1 - L)) > 1e-9:
                raise GaugeError(f"gauge slice at lam={lam} must have periodic F0 and F1 winding once")
            try:
                slice_geometry(self.embedding(lam, lat), lat)
            except ValueError as exc:
                raise GaugeError(f"gauge slice at lam={lam}: {exc}") from None

    def describe(self) -> tuple[str, str]:
        return ex.to_source(self.f0), ex.to_source(self.f1)


def gauge_jacobian(lat: Lattice) -> np.ndarray:
    """d chi^nu_j / dz, shape (2n, 6n); independent of the state for these gauges."""
    n = lat.n
    J = np.zeros((2 * n, 6 * n))
    J[:n, n:2 * n] = np.eye(n)
    J[n:, 2 * n:3 * n] = np.eye(n)
    return J


def gauge_conditions(state: PhasePoint, gs: GaugeSpec, lam: float, lat: Lattice) -> np.ndarray:
    F = gs.embedding(lam, lat)
    return np.stack([state.tau.tau0 - F.tau0, state.tau.tau1 - F.tau1])


def constraint_matrix(state: PhasePoint, gs: GaugeSpec, lam: float, m: float, lat: Lattice,
                      cond_limit: float = 1e12) -> tuple[np.ndarray, float]:
    """A[(mu,i), (nu,j)] = {H_mu(x_i), chi^nu(x_j)} and its condition number."""
    A = bracket_vectors(constraint_jacobian(state, m, lat), gauge_jacobian(lat), lat)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > cond_limit:
        raise GaugeError(f"gauge is not complete at this state: condition number {cond:.3g}")
    return A, cond


@dataclass(frozen=True)
class DiracStructure:
    """Constraint gradients and the inverse of C_IJ = {psi_I, psi_J}."""

    psi: np.ndarray  # (4n, 6n) gradients of (H_0, H_1, chi^0, chi^1)
    c_inv: np.ndarray
    lat: Lattice

    def bracket(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Dirac bracket between stacks of flat gradients (k, 6n) and (l, 6n)."""
        a, b = np.atleast_2d(a), np.atleast_2d(b)
        base = bracket_vectors(a, b, self.lat)
        a_psi = bracket_vectors(a, self.psi, self.lat)
        psi_b = bracket_vectors(self.psi, b, self.lat)
        return base - a_psi @ self.c_inv @ psi_b


def dirac_structure(state: PhasePoint, gs: GaugeSpec, lam: float, m: float, lat: Lattice) -> DiracStructure:
    constraint_matrix(state, gs, lam, m, lat)
    psi = np.vstack([constraint_jacobian(state, m, lat), gauge_jacobian(lat)])
    C = bracket_vectors(psi, psi, lat)
    return DiracStructure(psi, np.linalg.inv(C), lat)


def dirac_bracket(F: SmearedFunctional, G: SmearedFunctional, state: PhasePoint, gs: GaugeSpec,
                  lam: float, m: float, lat: Lattice) -> float:
    for f in (F, G):
        if f.token and f.token != state.token:
            raise ValueError("functional was evaluated at a different phase point")
    ds = dirac_structure(state, gs, lam, m, lat)
    return float(ds.bracket(F.flat_grad(), G.flat_grad())[0, 0])


def reduced_hamiltonian(state: PhasePoint, gs: GaugeSpec, lam: float, m: float, lat: Lattice,
                        tol: float = 1e-10) -> SmearedFunctional:
    """Hbar = sum dx dF^mu/dlam h_mu on the gauge slice; matter gradients only."""
    chi = gauge_conditions(state, gs, lam, lat)
    if np.max(np.abs(chi)) > tol:
        raise GaugeError(f"state is off the gauge slice: max |chi| = {np.max(np.abs(chi)):.3g}")
    viol = np.max(np.abs(full_constraints(state, m, lat)))
    if viol > tol:
        raise GaugeError(f"state is off the constraint surface: max |H| = {viol:.3g}")
    fdot = gs.velocity(lam, lat)
    bare = state.replace(p=np.zeros((2, lat.n)))
    F = smear(bare, Coefficient(fdot), m, lat)
    z = np.zeros((2, lat.n))
    return SmearedFunctional(F.value, F.grad_phi, F.grad_pi, z, z.copy(), state.token)


def reduced_energy(phi, pi, gs: GaugeSpec, lam: float, m: float, lat: Lattice) -> np.ndarray:
    """Hbar for batched matter data (leading axes are samples)."""
    F = gs.embedding(lam, lat)
    u, w = tangent(F.tau0, F.tau1, lat)
    return np.sum(matter_energy(phi, pi, gs.velocity(lam, lat), u, w, m, lat), axis=-1)


@dataclass
class ReducedTrace:
    lambdas: np.ndarray
    phi: np.ndarray  # (steps, ..., n)
    pi: np.ndarray


def reduced_evolve(phi, pi, gs: GaugeSpec, m: float, lambda_end: float, h: float, lat: Lattice,
                   lam0: float = 0.0, every: int = 1) -> ReducedTrace:
    """RK4 for phidot = dHbar/dPi, Pidot = -dHbar/dphi with tau = F(lam)."""
    phi = np.array(phi, dtype=float)
    pi = np.array(pi, dtype=float)
    steps = int(round(lambda_end / h))
    if steps < 0 or abs(steps * h - lambda_end) > 1e-9 * max(1.0, abs(lambda_end)):
        raise ValueError("lambda_end must be a non-negative multiple of h")

    cache = {}

    def frame(lam):
        if lam not in cache:
            F = gs.embedding(lam, lat)
            u, w = tangent(F.tau0, F.tau1, lat)
            if np.any(w * w - u * u <= 0):
                raise GaugeError(f"gauge slice at lam={lam} is not spacelike")
            cache[lam] = (gs.velocity(lam, lat), u, w)
        return cache[lam]

    def rhs(lam, a, b):
        c, u, w = frame(lam)
        return matter_flow(a, b, c, u, w, m, lat)

    lams, phis, pis = [lam0], [phi.copy()], [pi.copy()]
    lam = lam0
    for k in range(1, steps + 1):
        a1, b1 = rhs(lam, phi, pi)
        a2, b2 = rhs(lam + h / 2, phi + h / 2 * a1, pi + h / 2 * b1)
        a3, b3 = rhs(lam + h / 2, phi + h / 2 * a2, pi + h / 2 * b2)
        a4, b4 = rhs(lam + h, phi + h * a3, pi + h * b3)
        phi = phi + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        pi = pi + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        lam = lam0 + k * h
        cache.clear()
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(pi))):
            raise FloatingPointError(f"non-finite matter state at lam={lam}")
        if k % every == 0 or k == steps:
            lams.append(lam)
            phis.append(phi.copy())
            pis.append(pi.copy())
    return ReducedTrace(np.array(lams), np.stack(phis), np.stack(pis))


def lift_to_surface(phi, pi, gs: GaugeSpec, lam: float, m: float, lat: Lattice) -> PhasePoint:
    """Phase point on the gauge slice with P on the constraint surface."""
    from .canonical import on_shell

    st = PhasePoint(phi, pi, gs.embedding(lam, lat), np.zeros((2, lat.n)))
    return on_shell(st, m, lat)


__all__ = [
    "GaugeSpec",
    "GaugeError",
    "DiracStructure",
    "constraint_matrix",
    "dirac_structure",
    "dirac_bracket",
    "gauge_conditions",
    "gauge_jacobian",
    "reduced_hamiltonian",
    "reduced_energy",
    "reduced_evolve",
    "ReducedTrace",
    "lift_to_surface",
]
