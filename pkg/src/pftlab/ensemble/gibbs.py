"""Gibbs specifications and log-weights.

log rho = -b H(xi) + const. In matter-sector mode the embedding and its
momenta are frozen, so H(xi) is a quadratic form in (phi, Pi). In regulated
mode every sector is sampled and a Gaussian reference density on P and on
tau - tau_ref keeps the weight normalizable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..canonical import PhasePoint, comomentum, matter_energy, matter_partials
from ..geometry import Embedding, slice_geometry, tangent
from ..grid import Lattice, SpacetimeVectorField

MATTER = "matter-sector"
REGULATED = "regulated"
MODES = (MATTER, REGULATED)


class NotNormalizableError(ValueError):
    pass


@dataclass(frozen=True)
class GibbsSpec:
    """xi may be an analytic field or frozen per-site components (2, n)."""

    xi: Union[SpacetimeVectorField, np.ndarray]
    b: float = 1.0
    mode: str = MATTER
    mass: float = 1.0
    sigma_p: float = 1.0
    sigma_tau: float = 0.1
    frozen_tau: Optional[Embedding] = None
    frozen_p: Optional[np.ndarray] = None
    pin_zero_mode: bool = False
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.mode == "matter":
            object.__setattr__(self, "mode", MATTER)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.b > 0:
            raise NotNormalizableError("inverse temperature b must be positive")
        if self.mass < 0:
            raise ValueError("mass must be non-negative")
        if self.mode == REGULATED and not (self.sigma_p > 0 and self.sigma_tau > 0):
            raise ValueError("regulated mode needs positive regulator widths")

    def tau(self, lat: Lattice) -> Embedding:
        return self.frozen_tau if self.frozen_tau is not None else Embedding.identity(lat)

    def p(self, lat: Lattice) -> np.ndarray:
        return np.zeros((2, lat.n)) if self.frozen_p is None else np.asarray(self.frozen_p, dtype=float)

    def coefficient(self, lat: Lattice, tau: Optional[Embedding] = None) -> np.ndarray:
        """xi^mu evaluated on the (frozen) slice, shape (2, n)."""
        tau = self.tau(lat) if tau is None else tau
        if isinstance(self.xi, SpacetimeVectorField):
            return self.xi(tau.tau0, tau.tau1)
        c = np.asarray(self.xi, dtype=float)
        if c.shape != (2, lat.n):
            raise ValueError(f"per-site xi must have shape (2, {lat.n})")
        return c

    def with_b(self, b: float) -> "GibbsSpec":
        return _replace(self, b=b)

    def with_xi(self, xi) -> "GibbsSpec":
        return _replace(self, xi=xi)


def _replace(spec: GibbsSpec, **kw) -> GibbsSpec:
    d = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    d.update(kw)
    return GibbsSpec(**d)


def kernel_basis(lat: Lattice) -> np.ndarray:
    """Orthonormal basis of the kernel of the central stencil: constant and alternating."""
    n = lat.n
    return np.stack([np.ones(n), (-1.0) ** np.arange(n)]) / np.sqrt(n)


def check_normalizable(spec: GibbsSpec, lat: Lattice) -> None:
    """Refuse specs whose matter-sector weight is not a proper Gaussian."""
    tau = spec.tau(lat)
    geo = slice_geometry(tau, lat)
    c = spec.coefficient(lat)
    u, w = geo.tangent
    lapse = (c[0] * w - c[1] * u) / geo.sqrt_q
    shift = (c[1] * w - c[0] * u) / geo.q11
    if np.any(lapse <= 0):
        raise NotNormalizableError("the flow must be future-directed (positive lapse) at every site")
    if np.any(lapse / geo.sqrt_q <= np.abs(shift)):
        raise NotNormalizableError("the flow must be timelike relative to the slice at every site")
    if spec.mode == MATTER and spec.mass == 0 and not spec.pin_zero_mode:
        raise NotNormalizableError(
            "massless matter-sector state has flat directions; use m > 0 or pin_zero_mode"
        )


def log_weight(state: PhasePoint, spec: GibbsSpec, lat: Lattice) -> float:
    if spec.mode == MATTER:
        st = state.replace(tau=spec.tau(lat), p=spec.p(lat))
        xi = spec.xi
        value = comomentum(st, xi, spec.mass, lat).value
        out = -spec.b * value
    else:
        value = comomentum(state, spec.xi, spec.mass, lat).value
        ref = spec.tau(lat)
        dtau = state.tau.stacked - ref.stacked
        reg = np.sum(state.p**2) / (2 * spec.sigma_p**2) + np.sum(dtau**2) / (2 * spec.sigma_tau**2)
        out = -spec.b * value - lat.spacing * reg
    if not np.isfinite(out):
        raise FloatingPointError("non-finite log-weight")
    return float(out)


def matter_log_weight(spec: GibbsSpec, phi, pi, lat: Lattice) -> np.ndarray:
    """Batched matter-sector log-weight over leading axes of phi and Pi."""
    tau = spec.tau(lat)
    u, w = tangent(tau.tau0, tau.tau1, lat)
    c = spec.coefficient(lat)
    const = lat.spacing * np.sum(c * spec.p(lat))
    return -spec.b * (np.sum(matter_energy(phi, pi, c, u, w, spec.mass, lat), axis=-1) + const)


def matter_hamiltonian(spec: GibbsSpec, phi, pi, lat: Lattice) -> np.ndarray:
    """H(xi) at the frozen slice for batched matter data (no factor b)."""
    return -matter_log_weight(spec.with_b(1.0), phi, pi, lat)


def regulated_log_weight(spec: GibbsSpec, phi, pi, tau0, tau1, p, lat: Lattice) -> np.ndarray:
    """Batched regulated-mode log-weight; non-spacelike samples get -inf."""
    u, w = tangent(tau0, tau1, lat)
    q = w * w - u * u
    bad = np.any(q <= 0, axis=-1)
    safe_w = np.where(q > 0, w, 1.0)
    safe_u = np.where(q > 0, u, 0.0)
    if isinstance(spec.xi, SpacetimeVectorField):
        c = spec.xi(tau0, tau1)
    else:
        c = np.broadcast_to(np.asarray(spec.xi, dtype=float)[:, None, :], (2,) + np.shape(phi))
    mp = matter_partials(phi, pi, safe_u, safe_w, spec.mass, lat)
    h_total = lat.spacing * np.sum(c * (np.moveaxis(p, -2, 0) + mp.h), axis=(0, -1))
    ref = spec.tau(lat)
    reg = (np.sum(p**2, axis=(-2, -1)) / (2 * spec.sigma_p**2)
           + (np.sum((tau0 - ref.tau0) ** 2, axis=-1) + np.sum((tau1 - ref.tau1) ** 2, axis=-1))
           / (2 * spec.sigma_tau**2))
    out = -spec.b * h_total - lat.spacing * reg
    return np.where(bad, -np.inf, out)


def spatial_log_weight(state: PhasePoint, zeta, b: float, m: float, lat: Lattice) -> float:
    """Weight exp(+b J(zeta)) of the spatial-diffeomorphism state."""
    from ..canonical import spatial_momentum_map

    return float(b * spatial_momentum_map(state, zeta, m, lat).value)


__all__ = [
    "GibbsSpec",
    "NotNormalizableError",
    "MATTER",
    "REGULATED",
    "check_normalizable",
    "log_weight",
    "matter_log_weight",
    "matter_hamiltonian",
    "regulated_log_weight",
    "spatial_log_weight",
    "kernel_basis",
]
