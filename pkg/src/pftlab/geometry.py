"""Slice geometry of an embedding of the circle into 1+1 Minkowski space.

The background metric is eta = diag(-1, +1). The space coordinate of an
embedding winds once: tau1(x + L) = tau1(x) + L, so only tau1 - x is
periodic and is what gets differentiated.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .grid import Lattice, SpacetimeVectorField, central_derivative

ETA = np.diag([-1.0, 1.0])


class NotSpacelikeError(ValueError):
    def __init__(self, sites):
        self.sites = np.asarray(sites)
        shown = ", ".join(str(int(s)) for s in self.sites[:10])
        more = "" if self.sites.size <= 10 else f" (+{self.sites.size - 10} more)"
        super().__init__(f"embedding is not spacelike at site(s) {shown}{more}")


@dataclass(frozen=True)
class Embedding:
    tau0: np.ndarray
    tau1: np.ndarray

    def __post_init__(self):
        t0 = np.asarray(self.tau0, dtype=float)
        t1 = np.asarray(self.tau1, dtype=float)
        if t0.shape != t1.shape or t0.ndim != 1:
            raise ValueError("tau0 and tau1 must be 1-d arrays of equal length")
        object.__setattr__(self, "tau0", t0)
        object.__setattr__(self, "tau1", t1)

    @classmethod
    def identity(cls, lat: Lattice, t: float = 0.0) -> "Embedding":
        return cls(np.full(lat.n, float(t)), lat.sites.copy())

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([self.tau0, self.tau1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("tau0,tau1\n")
        for a, b in zip(self.tau0, self.tau1):
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Embedding":
        rows = [line for line in text.splitlines() if line and not line.startswith("#")]
        if rows[0].replace(" ", "") != "tau0,tau1":
            raise ValueError("embedding CSV must start with the header tau0,tau1")
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1])


def tangent(tau0, tau1, lat: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """(u, w) = (tau0', tau1') by the central stencil; works on batched arrays."""
    u = central_derivative(tau0, lat)
    w = central_derivative(np.asarray(tau1) - lat.sites, lat) + 1.0
    return u, w


@dataclass(frozen=True)
class SliceGeometry:
    q11: np.ndarray
    sqrt_q: np.ndarray
    normal_up: np.ndarray
    normal_down: np.ndarray
    tangent: np.ndarray


def slice_geometry(tau: Embedding, lat: Lattice) -> SliceGeometry:
    if tau.tau0.shape != (lat.n,):
        raise ValueError(f"embedding length {tau.tau0.size} does not match n = {lat.n}")
    u, w = tangent(tau.tau0, tau.tau1, lat)
    q = w * w - u * u
    bad = np.flatnonzero(~(q > 0))
    if bad.size:
        raise NotSpacelikeError(bad)
    s = np.sqrt(q)
    n_up = np.stack([w, u]) / s
    n_down = np.stack([-w, u]) / s
    return SliceGeometry(q, s, n_up, n_down, np.stack([u, w]))


def decompose_lapse_shift(xi: SpacetimeVectorField, tau: Embedding, lat: Lattice):
    """Lapse N and shift N1 with xi(tau(x)) = N n + N1 tau'."""
    geo = slice_geometry(tau, lat)
    a, b = xi(tau.tau0, tau.tau1)
    return lapse_shift_of(np.stack([a, b]), geo)


def lapse_shift_of(vec: np.ndarray, geo: SliceGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Same decomposition for per-site component arrays of shape (2, n)."""
    a, b = vec
    u, w = geo.tangent
    lapse = (a * w - b * u) / geo.sqrt_q
    shift = (b * w - a * u) / geo.q11
    return lapse, shift


def pushforward_spatial(zeta, tau: Embedding, lat: Lattice) -> np.ndarray:
    """tau_* zeta: per-site components tau'^mu zeta, shape (2, n)."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (lat.n,):
        raise ValueError(f"zeta must have length {lat.n}")
    u, w = tangent(tau.tau0, tau.tau1, lat)
    return np.stack([u * zeta, w * zeta])


def local_temperature(xi: SpacetimeVectorField, tau: Embedding, lat: Lattice) -> np.ndarray:
    """T = 1 / |xi(tau(x))| with the Euclidean norm of the components."""
    a, b = xi(tau.tau0, tau.tau1)
    norm = np.hypot(a, b)
    zero = np.flatnonzero(norm == 0)
    if zero.size:
        raise ValueError(f"vector field vanishes at site(s) {zero.tolist()}")
    return 1.0 / norm
