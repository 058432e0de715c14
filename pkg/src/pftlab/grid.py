"""Periodic lattice, stencils, quadrature and analytic spacetime vector fields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .expr import EvalError, ExprError, ParseError, UnknownIdentifierError, eval_with_grad, parse_expr

__all__ = [
    "Lattice",
    "SpacetimeVectorField",
    "central_derivative",
    "quadrature",
    "derivative_matrix",
    "parse_expr",
    "eval_with_grad",
    "ExprError",
    "EvalError",
    "ParseError",
    "UnknownIdentifierError",
]


@dataclass(frozen=True)
class Lattice:
    n: int
    circumference: float = 2 * math.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise ValueError(f"lattice needs an even site count n >= 4, got {self.n}")
        if not self.circumference > 0:
            raise ValueError("circumference must be positive")

    @property
    def spacing(self) -> float:
        return self.circumference / self.n

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.n) * self.spacing

    @property
    def stencil_factor(self) -> float:
        """sin(dx)/dx, the central-stencil symbol of the k = 1 mode."""
        return math.sin(self.spacing) / self.spacing


def _check_length(f: np.ndarray, lat: Lattice) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[-1:] != (lat.n,):
        raise ValueError(f"expected trailing length {lat.n}, got shape {f.shape}")
    return f


def central_derivative(f, lat: Lattice) -> np.ndarray:
    """(f[i+1] - f[i-1]) / (2 dx) along the last axis, periodic.

    A non-periodic ramp such as f = x produces the large wrap values at the
    two end sites; callers differentiate the periodic part instead.
    """
    f = _check_length(f, lat)
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2 * lat.spacing)


def quadrature(f, lat: Lattice) -> np.ndarray:
    """Rectangle rule, which is the trapezoid rule on a periodic grid."""
    f = _check_length(f, lat)
    return np.sum(f, axis=-1) * lat.spacing


def derivative_matrix(lat: Lattice) -> np.ndarray:
    """Dense matrix form of :func:`central_derivative`."""
    n = lat.n
    d = np.zeros((n, n))
    i = np.arange(n)
    d[i, (i + 1) % n] = 1.0
    d[i, (i - 1) % n] = -1.0
    return d / (2 * lat.spacing)


def _as_node(e) -> ex.Node:
    if isinstance(e, str):
        return parse_expr(e)
    if isinstance(e, (int, float)):
        return ex.Num(float(e))
    return e


@dataclass(frozen=True)
class SpacetimeVectorField:
    """Analytic vector field xi^mu(t, x) with exact first partials."""

    xi0: ex.Node
    xi1: ex.Node
    circumference: float = 2 * math.pi
    _check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "xi0", _as_node(self.xi0))
        object.__setattr__(self, "xi1", _as_node(self.xi1))
        for comp in (self.xi0, self.xi1):
            extra = ex.free_variables(comp) - {"t", "x"}
            if extra:
                raise ExprError(f"vector field components may only use t and x, found {sorted(extra)}")
        if self._check:
            self._check_periodic()

    @classmethod
    def parse(cls, xi0: str, xi1: str, circumference: float = 2 * math.pi) -> "SpacetimeVectorField":
        return cls(parse_expr(xi0), parse_expr(xi1), circumference)

    def _check_periodic(self):
        t = np.array([-1.3, 0.0, 0.7, 2.1])[:, None]
        x = np.linspace(0.0, self.circumference, 13, endpoint=False)[None, :]
        for name, comp in (("xi0", self.xi0), ("xi1", self.xi1)):
            a = ex.evaluate(comp, t=t, x=x)
            b = ex.evaluate(comp, t=t, x=x + self.circumference)
            if not np.allclose(a, b, rtol=1e-9, atol=1e-9):
                raise ExprError(f"{name} = {ex.to_source(comp)} is not periodic in x")

    def __call__(self, t, x) -> np.ndarray:
        """Components stacked on a leading axis of length 2."""
        return np.stack([ex.evaluate(self.xi0, t=t, x=x), ex.evaluate(self.xi1, t=t, x=x)])

    def with_jacobian(self, t, x) -> tuple[np.ndarray, np.ndarray]:
        """Values (2, ...) and jac[mu, nu] = d xi^mu / d x^nu, shape (2, 2, ...)."""
        v0, d00, d01 = eval_with_grad(self.xi0, t, x)
        v1, d10, d11 = eval_with_grad(self.xi1, t, x)
        return np.stack([v0, v1]), np.stack([np.stack([d00, d01]), np.stack([d10, d11])])

    def scaled(self, factor: float) -> "SpacetimeVectorField":
        f = ex.Num(float(factor))
        return SpacetimeVectorField(ex.mul(f, self.xi0), ex.mul(f, self.xi1), self.circumference, False)

    def combine(self, a: float, other: "SpacetimeVectorField", b: float) -> "SpacetimeVectorField":
        """a * self + b * other."""
        comps = [
            ex.add(ex.mul(ex.Num(float(a)), p), ex.mul(ex.Num(float(b)), q))
            for p, q in ((self.xi0, other.xi0), (self.xi1, other.xi1))
        ]
        return SpacetimeVectorField(comps[0], comps[1], self.circumference, False)

    def bracket(self, other: "SpacetimeVectorField") -> "SpacetimeVectorField":
        """[xi, zeta]^mu = xi^nu d_nu zeta^mu - zeta^nu d_nu xi^mu, built symbolically."""
        xs, zs = (self.xi0, self.xi1), (other.xi0, other.xi1)
        coords = ("t", "x")
        comps = []
        for mu in range(2):
            total = ex.ZERO
            for nu in range(2):
                total = ex.add(total, ex.mul(xs[nu], ex.diff(zs[mu], coords[nu])))
                total = ex.sub(total, ex.mul(zs[nu], ex.diff(xs[mu], coords[nu])))
            comps.append(total)
        return SpacetimeVectorField(comps[0], comps[1], self.circumference, False)

    def describe(self) -> tuple[str, str]:
        return ex.to_source(self.xi0), ex.to_source(self.xi1)
