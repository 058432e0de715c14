"""Thermodynamic potentials and inequalities between two matter-sector states.

With rho = exp(-b H(xi)) / Z:

    Q = E[H(xi)],  S = log Z + b Q,  F = -log Z  (differences only),
    KL(rho_i | rho_f) = E_i[lw_i - lw_f] + log Z_f - log Z_i,
    W = H(xi_f) - H(xi_i).

log Z differences come from reweighting (free-energy perturbation) and are
cross-checked by thermodynamic integration along lw_s = (1-s) lw_i + s lw_f.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import Lattice
from .estimate import Estimate, combine, effective_sample_size, log_mean_exp
from .gibbs import MATTER, GibbsSpec, matter_hamiltonian, matter_log_weight
from .sampler import SamplerConfig, sample


class OverlapError(RuntimeError):
    def __init__(self, ess: float):
        self.ess = ess
        super().__init__(f"reweighting effective sample size {ess:.1f} is below 10; states do not overlap")


@dataclass
class ThermoReport:
    logZ_diff: Estimate  # reweighting
    logZ_diff_ti: Estimate  # thermodynamic integration
    F_diff: Estimate
    Q_i: Estimate
    Q_f: Estimate
    S_diff: Estimate
    KL: Estimate
    work: Estimate
    isothermal: Estimate | None
    clausius: Estimate | None
    q_fd: Estimate  # -d log Z / db at b_i by finite differences
    ess: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, Estimate):
                out[k] = v.to_dict()
            elif v is None:
                out[k] = None
            else:
                out[k] = v
        return out


def _path_spec(spec_i: GibbsSpec, spec_f: GibbsSpec, s: float, lat: Lattice) -> GibbsSpec:
    """Gibbs spec with log-weight (1-s) lw_i + s lw_f, expressed at b = 1."""
    c = (1 - s) * spec_i.b * spec_i.coefficient(lat) + s * spec_f.b * spec_f.coefficient(lat)
    return GibbsSpec(c, b=1.0, mode=MATTER, mass=spec_i.mass, frozen_tau=spec_i.frozen_tau,
                     frozen_p=spec_i.frozen_p, pin_zero_mode=spec_i.pin_zero_mode)


def _check_pair(spec_i: GibbsSpec, spec_f: GibbsSpec, lat: Lattice):
    if spec_i.mode != MATTER or spec_f.mode != MATTER:
        raise ValueError("thermodynamic comparisons are implemented for matter-sector states")
    if spec_i.mass != spec_f.mass or spec_i.pin_zero_mode != spec_f.pin_zero_mode:
        raise ValueError("both states must share the mass and zero-mode treatment")
    if not (np.array_equal(spec_i.tau(lat).stacked, spec_f.tau(lat).stacked)
            and np.array_equal(spec_i.p(lat), spec_f.p(lat))):
        raise ValueError("both states must share the frozen embedding and momenta")


def simpson_weights(k: int) -> np.ndarray:
    if k < 3 or k % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of points >= 3")
    w = np.ones(k)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w / (3 * (k - 1))


def thermo(spec_i: GibbsSpec, spec_f: GibbsSpec, cfg: SamplerConfig, lat: Lattice,
           ti_points: int = 9, fd_step: float = 0.02) -> ThermoReport:
    _check_pair(spec_i, spec_f, lat)
    lw_i = lambda s: matter_log_weight(spec_i, s.phi, s.pi, lat)  # noqa: E731
    lw_f = lambda s: matter_log_weight(spec_f, s.phi, s.pi, lat)  # noqa: E731
    H_i = lambda s: matter_hamiltonian(spec_i, s.phi, s.pi, lat)  # noqa: E731
    H_f = lambda s: matter_hamiltonian(spec_f, s.phi, s.pi, lat)  # noqa: E731

    grid = np.linspace(0.0, 1.0, ti_points)
    sets = []
    for k, s in enumerate(grid):
        spec = spec_i if k == 0 else spec_f if k == ti_points - 1 else _path_spec(spec_i, spec_f, s, lat)
        sets.append(sample(spec, cfg.with_stream(cfg.stream * 64 + k), lat))
    si, sf = sets[0], sets[-1]

    # reweighting
    r = lw_f(si) - lw_i(si)
    ess = effective_sample_size(r)
    if ess < 10:
        raise OverlapError(ess)
    fep_value, influence = log_mean_exp(r)
    logz_fep = combine([("i", 1.0, influence)], offset=fep_value - 1.0)

    # thermodynamic integration, endpoints share samples with the i and f ensembles
    w = simpson_weights(ti_points)
    ti_terms = [(k, w[k], lw_f(st) - lw_i(st)) for k, st in enumerate(sets)]
    logz_ti = combine(ti_terms)

    Q_i = combine([(0, 1.0, H_i(si))])
    Q_f = combine([(ti_points - 1, 1.0, H_f(sf))])
    S_diff = combine(ti_terms + [(ti_points - 1, spec_f.b, H_f(sf)), (0, -spec_i.b, H_i(si))])
    KL = combine(ti_terms + [(0, 1.0, lw_i(si) - lw_f(si))])
    work = combine([(0, 1.0, H_f(si) - H_i(si))])

    isothermal = None
    if spec_i.b == spec_f.b:
        isothermal = combine(ti_terms + [(0, spec_i.b, H_f(si) - H_i(si))])
    clausius = None
    if np.array_equal(spec_i.coefficient(lat), spec_f.coefficient(lat)):
        # Delta S + b_f Delta E[J], with J = -H: equals Delta log Z + (b_f - b_i) Q_i
        clausius = combine(ti_terms + [(0, spec_f.b - spec_i.b, H_i(si))])

    # -d log Z / db at b_i from an independent ensemble reweighted to b_i +- delta
    delta = fd_step * spec_i.b
    extra = sample(spec_i, cfg.with_stream(cfg.stream * 64 + 63), lat)
    h = H_i(extra)
    up, inf_up = log_mean_exp(-delta * h)
    down, inf_down = log_mean_exp(delta * h)
    q_fd = combine([("x", -1.0 / (2 * delta), inf_up), ("x", 1.0 / (2 * delta), inf_down)],
                   offset=-(up - down) / (2 * delta))

    F_diff = Estimate(-logz_ti.mean, logz_ti.error)
    meta = dict(ti_points=ti_points, samples_per_ensemble=si.size, fd_step=delta,
                acceptance=[float(st.acceptance.mean()) for st in sets],
                warnings=sum((st.meta.get("warnings", []) for st in sets), []))
    return ThermoReport(logz_fep, logz_ti, F_diff, Q_i, Q_f, S_diff, KL, work, isothermal, clausius,
                        q_fd, ess, meta)


__all__ = ["ThermoReport", "OverlapError", "thermo", "simpson_weights"]
