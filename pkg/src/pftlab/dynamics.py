"""Fixed-step RK4 integration of the flow generated by H(xi)."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .canonical import PhasePoint, comomentum, full_constraints
from .geometry import NotSpacelikeError, slice_geometry
from .grid import Lattice, SpacetimeVectorField


class FlowError(RuntimeError):
    """Numerical failure during integration; ``trace`` holds the samples so far."""

    def __init__(self, message: str, trace: "FlowTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass
class FlowTrace:
    lambdas: list = field(default_factory=list)
    states: list = field(default_factory=list)
    drift: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    @property
    def samples(self) -> list[tuple[float, PhasePoint]]:
        return list(zip(self.lambdas, self.states))

    def to_csv(self, sites: bool = False, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(header)
        cols = ["lambda", "drift", "energy"]
        n = self.states[0].n if self.states else 0
        if sites:
            for name in ("phi", "pi", "tau0", "tau1", "p0", "p1"):
                cols += [f"{name}_{i}" for i in range(n)]
        buf.write(",".join(cols) + "\n")
        for lam, st, d, e in zip(self.lambdas, self.states, self.drift, self.energy):
            row = [repr(float(lam)), repr(float(d)), repr(float(e))]
            if sites:
                row += [repr(float(v)) for v in np.concatenate(
                    [st.phi, st.pi, st.tau.tau0, st.tau.tau1, st.p[0], st.p[1]])]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def hamiltonian_vector_field(state: PhasePoint, xi, m: float, lat: Lattice) -> np.ndarray:
    """Flat time derivative (phi, tau0, tau1, Pi, P0, P1) of the H(xi) flow."""
    H = comomentum(state, xi, m, lat)
    g = H.flat_grad() / lat.spacing
    half = g.size // 2
    return np.concatenate([g[half:], -g[:half]])


def flow_step(state: PhasePoint, xi, m: float, h: float, lat: Lattice) -> PhasePoint:
    """One classical RK4 step of the Hamiltonian flow."""
    if not h > 0:
        raise ValueError("step size must be positive")
    z = state.flat()
    f = lambda y: hamiltonian_vector_field(PhasePoint.from_flat(y), xi, m, lat)  # noqa: E731
    k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    out = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FlowError("non-finite state after step")
    new = PhasePoint.from_flat(out)
    slice_geometry(new.tau, lat)
    return new


def constraint_drift(state: PhasePoint, reference: np.ndarray, m: float, lat: Lattice) -> float:
    return float(np.max(np.abs(full_constraints(state, m, lat) - reference)))


def evolve(state: PhasePoint, xi, m: float, lambda_end: float, h: float, lat: Lattice,
           every: int = 1) -> FlowTrace:
    """Integrate to lambda_end with fixed step h, recording every ``every`` steps."""
    if not lambda_end > 0:
        raise ValueError("lambda_end must be positive")
    steps = int(round(lambda_end / h))
    if steps < 1 or abs(steps * h - lambda_end) > 1e-9 * max(1.0, lambda_end):
        raise ValueError("lambda_end must be a positive multiple of h")
    ref = full_constraints(state, m, lat)
    trace = FlowTrace()

    def record(lam, st):
        trace.lambdas.append(lam)
        trace.states.append(st)
        trace.drift.append(constraint_drift(st, ref, m, lat))
        trace.energy.append(comomentum(st, xi, m, lat).value)

    record(0.0, state)
    current = state
    for k in range(1, steps + 1):
        try:
            current = flow_step(current, xi, m, h, lat)
        except NotSpacelikeError as exc:
            raise FlowError(f"embedding left the spacelike region at step {k}: {exc}", trace) from None
        except FlowError as exc:
            exc.trace = trace
            raise
        if k % every == 0 or k == steps:
            record(k * h, current)
    return trace


def wave_preset(lat: Lattice, m: float = 1.0) -> PhasePoint:
    """phi = sin x, Pi = 0 on the identity slice with P on the constraint surface."""
    from .canonical import on_shell
    from .geometry import Embedding

    st = PhasePoint(np.sin(lat.sites), np.zeros(lat.n), Embedding.identity(lat), np.zeros((2, lat.n)))
    return on_shell(st, m, lat)


def normal_mode_frequency(lat: Lattice, m: float = 1.0, k: int = 1) -> float:
    """Frequency of mode k for the central-stencil wave equation."""
    return float(np.sqrt(m * m + (np.sin(k * lat.spacing) / lat.spacing) ** 2))


__all__ = [
    "FlowTrace",
    "FlowError",
    "flow_step",
    "evolve",
    "hamiltonian_vector_field",
    "constraint_drift",
    "wave_preset",
    "normal_mode_frequency",
    "SpacetimeVectorField",
]
