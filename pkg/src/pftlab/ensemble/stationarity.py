"""Invariance of the gauge-fixed Gibbs ensemble under its own reduced flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gauge import GaugeSpec, reduced_evolve
from ..geometry import Embedding
from ..grid import Lattice, central_derivative
from .estimate import estimate_values
from .gibbs import MATTER, GibbsSpec
from .sampler import SamplerConfig, sample


def _mode_power(f: np.ndarray, k: int) -> np.ndarray:
    n = f.shape[-1]
    x = np.arange(n) * 2 * np.pi / n
    return np.abs(f @ np.exp(-1j * k * x) / n) ** 2


def observable_battery(lat: Lattice) -> dict:
    """Six observables: quadratic forms, two mode occupations and a time-odd product."""
    dx = lat.spacing
    return {
        "sum_phi2": lambda phi, pi: dx * np.sum(phi**2, axis=-1),
        "sum_pi2": lambda phi, pi: dx * np.sum(pi**2, axis=-1),
        "sum_dphi2": lambda phi, pi: dx * np.sum(central_derivative(phi, lat) ** 2, axis=-1),
        "phi_mode1": lambda phi, pi: _mode_power(phi, 1),
        "pi_mode2": lambda phi, pi: _mode_power(pi, 2),
        "phi_pi": lambda phi, pi: dx * np.sum(phi * pi, axis=-1),
    }


@dataclass
class StationarityReport:
    flow_time: float
    deviations: dict  # observable -> standardized deviation of the paired difference
    before: dict
    after: dict

    @property
    def max_deviation(self) -> float:
        return max(abs(v) for v in self.deviations.values())

    def to_dict(self) -> dict:
        return {
            "flow_time": self.flow_time,
            "max_deviation": self.max_deviation,
            "deviations": dict(self.deviations),
            "before": {k: v.to_dict() for k, v in self.before.items()},
            "after": {k: v.to_dict() for k, v in self.after.items()},
        }


def stationarity_test(spec: GibbsSpec, cfg: SamplerConfig, flow_time: float, lat: Lattice,
                      gauge: GaugeSpec | None = None, h: float = 0.01, samples=None) -> StationarityReport:
    """Push samples through the reduced flow and compare the battery before and after.

    The spec must be a matter-sector state on the identity slice whose weight
    is exp(-b Hbar) for the chosen gauge; by default the time gauge with
    xi = (1, 0).
    """
    if spec.mode != MATTER:
        raise ValueError("stationarity is tested for matter-sector states")
    gauge = GaugeSpec.timegauge() if gauge is None else gauge
    tau = spec.tau(lat)
    ident = Embedding.identity(lat)
    if not np.allclose(tau.stacked, ident.stacked, atol=1e-12):
        raise ValueError("stationarity test needs the identity slice")
    s = sample(spec, cfg, lat) if samples is None else samples
    phi0, pi0 = s.phi, s.pi
    if flow_time == 0:
        phi1, pi1 = phi0, pi0
    else:
        steps = max(1, int(np.ceil(flow_time / h)))
        tr = reduced_evolve(phi0, pi0, gauge, spec.mass, flow_time, flow_time / steps, lat, every=steps)
        phi1, pi1 = tr.phi[-1], tr.pi[-1]
    dev, before, after = {}, {}, {}
    for name, obs in observable_battery(lat).items():
        a, b = obs(phi0, pi0), obs(phi1, pi1)
        diff = estimate_values(b - a)
        before[name] = estimate_values(a)
        after[name] = estimate_values(b)
        dev[name] = 0.0 if diff.error == 0 and diff.mean == 0 else float(diff.mean / diff.error)
    return StationarityReport(flow_time, dev, before, after)


__all__ = ["StationarityReport", "stationarity_test", "observable_battery"]
