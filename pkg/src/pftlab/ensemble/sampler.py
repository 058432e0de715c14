"""Metropolis sampling of Gibbs specs with deterministic, per-chain RNG streams.

Every chain owns a Philox stream keyed by (seed, stream id). Chains are
advanced in groups whose size is fixed by the config, and groups may run on
any number of worker threads; the merged output depends only on the config
and the seed.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..canonical import PhasePoint
from ..geometry import Embedding
from ..grid import Lattice
from .gibbs import (
    MATTER,
    GibbsSpec,
    check_normalizable,
    kernel_basis,
    matter_log_weight,
    regulated_log_weight,
)


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    chains: int = 16
    samples: int = 640  # retained per chain
    burn_in: int = 300  # sweeps, scales are tuned during this phase
    thin: int = 2
    group_size: int = 16
    workers: int = 1
    target_accept: float = 0.3
    proposal: str = "rwm"  # or "mala"
    tune_every: int = 25
    block: int = 128  # sweeps of random numbers drawn at once
    stream: int = 0

    def __post_init__(self):
        if self.seed is None or int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.chains < 1 or self.samples < 1 or self.thin < 1 or self.group_size < 1:
            raise ValueError("chains, samples, thin and group_size must be positive")
        if self.proposal not in ("rwm", "mala"):
            raise ValueError("proposal must be 'rwm' or 'mala'")

    def with_stream(self, stream: int) -> "SamplerConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["stream"] = stream
        return SamplerConfig(**d)


@dataclass
class SampleSet:
    spec: GibbsSpec
    lat: Lattice
    phi: np.ndarray  # (chains, samples, n)
    pi: np.ndarray
    log_weights: np.ndarray  # (chains, samples)
    acceptance: np.ndarray  # (chains, sectors)
    scales: np.ndarray
    tau0: np.ndarray | None = None
    tau1: np.ndarray | None = None
    p: np.ndarray | None = None  # (chains, samples, 2, n)
    meta: dict = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return self.phi.shape[0]

    @property
    def size(self) -> int:
        return self.phi.shape[0] * self.phi.shape[1]

    def state(self, c: int, k: int) -> PhasePoint:
        if self.tau0 is None:
            tau, p = self.spec.tau(self.lat), self.spec.p(self.lat)
        else:
            tau, p = Embedding(self.tau0[c, k], self.tau1[c, k]), self.p[c, k]
        return PhasePoint(self.phi[c, k], self.pi[c, k], tau, p)

    @property
    def states(self) -> list[PhasePoint]:
        return [self.state(c, k) for c in range(self.chains) for k in range(self.phi.shape[1])]


class _Stream:
    """Per-chain random numbers, drawn ahead in fixed-size blocks."""

    def __init__(self, seed: int, stream: int, chain: int, shape: tuple, block: int):
        key = np.array([seed, (stream << 32) | chain], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))
        self.shape = shape
        self.block = block
        self.i = block

    def next(self):
        if self.i == self.block:
            self.normals = self.gen.standard_normal((self.block,) + self.shape)
            self.uniforms = self.gen.random((self.block,) + self.shape)
            self.i = 0
        out = self.normals[self.i], self.uniforms[self.i]
        self.i += 1
        return out


def _adapt(group, target: float, round_: int):
    """Scale steps toward the target acceptance with a gain that decays over rounds."""
    rate = group.accepted / np.maximum(group.tried, 1)
    gain = 2.0 / np.sqrt(round_)
    group.scale *= np.exp(gain * np.clip(rate - target, -0.5, 0.5))
    group.accepted[:] = 0
    group.tried[:] = 0


class _MatterGroup:
    """A batch of matter-sector chains advanced together."""

    def __init__(self, spec: GibbsSpec, lat: Lattice, cfg: SamplerConfig, chain_ids):
        self.spec, self.lat, self.cfg = spec, lat, cfg
        n = lat.n
        self.g = len(chain_ids)
        self.streams = [_Stream(cfg.seed, cfg.stream, c, (2, n), cfg.block) for c in chain_ids]
        init = [_Stream(cfg.seed, cfg.stream + (1 << 31), c, (2, n), 1) for c in chain_ids]
        start = np.stack([s.next()[0] for s in init]) * 0.1
        self.phi, self.pi = start[:, 0].copy(), start[:, 1].copy()
        self.pin = kernel_basis(lat) if spec.pin_zero_mode else None
        if self.pin is not None:
            self.phi = self._project(self.phi)
        self.checkerboard = n % 4 == 0 and self.pin is None
        self.mala = cfg.proposal == "mala"
        c = spec.coefficient(lat)
        self.const = -spec.b * lat.spacing * np.sum(c * spec.p(lat))
        self.coef = self._weights()
        # the start scale depends on b and xi only through b * lapse, so
        # (c xi, b) and (xi, c b) draw identical chains
        stiffness = 2 * np.mean(self.coef[0]) / lat.spacing
        base = 0.2 if self.mala else 0.5 * np.sqrt(lat.spacing / stiffness)
        self.scale = np.full((self.g, 2), base)
        self.accepted = np.zeros((self.g, 2))
        self.tried = np.zeros((self.g, 2))

    def _project(self, phi):
        return phi - (phi @ self.pin.T) @ self.pin

    def _weights(self):
        """Per-site coefficients of the quadratic energy b dx (N H_perp + N1 H_par)."""
        from ..geometry import slice_geometry

        geo = slice_geometry(self.spec.tau(self.lat), self.lat)
        c = self.spec.coefficient(self.lat)
        u, w = geo.tangent
        s = geo.sqrt_q
        lapse = (c[0] * w - c[1] * u) / s
        shift = (c[1] * w - c[0] * u) / geo.q11
        k = self.spec.b * self.lat.spacing
        m = self.spec.mass
        self._frame = (c, u, w)
        return k * lapse / (2 * s), k * lapse * s * m * m / 2, k * shift

    def site_energy(self, phi, pi):
        kin, pot, par = self.coef
        dphi = (np.roll(phi, -1, axis=-1) - np.roll(phi, 1, axis=-1)) / (2 * self.lat.spacing)
        return kin * (pi * pi + dphi * dphi) + pot * phi * phi + par * pi * dphi

    def draws(self):
        pairs = [s.next() for s in self.streams]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def sweep(self):
        normals, uniforms = self.draws()
        if self.mala:
            self._mala(normals, uniforms)
        elif self.checkerboard:
            self._checkerboard(normals, uniforms)
        else:
            self._global(normals, uniforms)

    def _checkerboard(self, normals, uniforms):
        n = self.lat.n
        energy = self.site_energy(self.phi, self.pi)
        for sector in range(2):
            target = self.phi if sector == 0 else self.pi
            for cls in range(4):
                sites = np.arange(cls, n, 4)
                trial = target.copy()
                trial[:, sites] += self.scale[:, sector, None] * normals[:, sector, sites]
                args = (trial, self.pi) if sector == 0 else (self.phi, trial)
                delta = self.site_energy(*args) - energy
                # updates in one class are 4 sites apart, so the windows are disjoint
                window = delta + np.roll(delta, 1, axis=-1) + np.roll(delta, -1, axis=-1)
                accept = np.log(uniforms[:, sector, sites]) < -window[:, sites]
                target[:, sites] = np.where(accept, trial[:, sites], target[:, sites])
                hit = np.zeros(target.shape, dtype=bool)
                hit[:, sites] = accept
                hit = hit | np.roll(hit, 1, axis=-1) | np.roll(hit, -1, axis=-1)
                energy = np.where(hit, energy + delta, energy)
                self.accepted[:, sector] += accept.mean(axis=1)
                self.tried[:, sector] += 1.0

    def _global(self, normals, uniforms):
        for sector in range(2):
            old = np.sum(self.site_energy(self.phi, self.pi), axis=-1)
            step = self.scale[:, sector, None] * normals[:, sector]
            if sector == 0:
                if self.pin is not None:
                    step = self._project(step)
                trial = (self.phi + step, self.pi)
            else:
                trial = (self.phi, self.pi + step)
            new = np.sum(self.site_energy(*trial), axis=-1)
            accept = np.log(uniforms[:, sector, 0]) < -(new - old)
            if sector == 0:
                self.phi = np.where(accept[:, None], trial[0], self.phi)
            else:
                self.pi = np.where(accept[:, None], trial[1], self.pi)
            self.accepted[:, sector] += accept
            self.tried[:, sector] += 1.0

    def _grad(self, phi, pi):
        from ..canonical import matter_flow

        c, u, w = self._frame
        phidot, pidot = matter_flow(phi, pi, c, u, w, self.spec.mass, self.lat)
        scale = self.spec.b * self.lat.spacing
        g_phi, g_pi = -scale * pidot, scale * phidot
        if self.pin is not None:
            g_phi = self._project(g_phi)
        return g_phi, g_pi

    def _mala(self, normals, uniforms):
        eps = self.scale[:, 0, None]
        x = (self.phi, self.pi)
        e_old = np.sum(self.site_energy(*x), axis=-1)
        g_old = self._grad(*x)
        noise = [normals[:, 0], normals[:, 1]]
        if self.pin is not None:
            noise[0] = self._project(noise[0])
        y = tuple(xi - 0.5 * eps**2 * gi + eps * zi for xi, gi, zi in zip(x, g_old, noise))
        e_new = np.sum(self.site_energy(*y), axis=-1)
        g_new = self._grad(*y)
        fwd = sum(np.sum((yi - xi + 0.5 * eps**2 * gi) ** 2, axis=-1) for xi, yi, gi in zip(x, y, g_old))
        bwd = sum(np.sum((xi - yi + 0.5 * eps**2 * gi) ** 2, axis=-1) for xi, yi, gi in zip(x, y, g_new))
        log_a = -(e_new - e_old) - (bwd - fwd) / (2 * eps[:, 0] ** 2)
        accept = np.log(uniforms[:, 0, 0]) < log_a
        self.phi = np.where(accept[:, None], y[0], self.phi)
        self.pi = np.where(accept[:, None], y[1], self.pi)
        # tune on the acceptance probability, which is far less noisy than the outcome
        self.accepted[:, :] += np.exp(np.minimum(log_a, 0.0))[:, None]
        self.tried[:, :] += 1.0

    def tune(self, target: float, round_: int):
        _adapt(self, target, round_)

    def log_weight(self):
        return -np.sum(self.site_energy(self.phi, self.pi), axis=-1) + self.const

    def run(self):
        cfg = self.cfg
        target = 0.574 if self.mala else cfg.target_accept
        for k in range(1, cfg.burn_in + 1):
            self.sweep()
            if k % cfg.tune_every == 0:
                self.tune(target, k // cfg.tune_every)
        self.accepted[:] = 0
        self.tried[:] = 0
        n = self.lat.n
        phis = np.empty((self.g, cfg.samples, n))
        pis = np.empty((self.g, cfg.samples, n))
        lws = np.empty((self.g, cfg.samples))
        for k in range(cfg.samples):
            for _ in range(cfg.thin):
                self.sweep()
            phis[:, k], pis[:, k], lws[:, k] = self.phi, self.pi, self.log_weight()
        rate = self.accepted / np.maximum(self.tried, 1)
        return dict(phi=phis, pi=pis, lw=lws, acceptance=rate, scales=self.scale.copy())


class _RegulatedGroup:
    """All sectors sampled with global random-walk proposals per sector."""

    SECTORS = ("phi", "pi", "tau", "p")

    def __init__(self, spec: GibbsSpec, lat: Lattice, cfg: SamplerConfig, chain_ids):
        self.spec, self.lat, self.cfg = spec, lat, cfg
        n = lat.n
        self.g = len(chain_ids)
        self.streams = [_Stream(cfg.seed, cfg.stream, c, (6, n), cfg.block) for c in chain_ids]
        ref = spec.tau(lat)
        self.x = {
            "phi": np.zeros((self.g, n)),
            "pi": np.zeros((self.g, n)),
            "tau0": np.tile(ref.tau0, (self.g, 1)),
            "tau1": np.tile(ref.tau1, (self.g, 1)),
            "p": np.zeros((self.g, 2, n)),
        }
        self.scale = np.tile(
            np.array([0.3 * np.sqrt(lat.spacing), 0.3 * np.sqrt(lat.spacing),
                      0.2 * spec.sigma_tau, 0.2 * spec.sigma_p]), (self.g, 1))
        self.accepted = np.zeros((self.g, 4))
        self.tried = np.zeros((self.g, 4))

    def lw(self, x):
        return regulated_log_weight(self.spec, x["phi"], x["pi"], x["tau0"], x["tau1"], x["p"], self.lat)

    def sweep(self):
        pairs = [s.next() for s in self.streams]
        normals = np.stack([p[0] for p in pairs])
        uniforms = np.stack([p[1] for p in pairs])
        cur = self.lw(self.x)
        for k, sector in enumerate(self.SECTORS):
            trial = dict(self.x)
            s = self.scale[:, k, None]
            if sector == "phi":
                trial["phi"] = self.x["phi"] + s * normals[:, 0]
            elif sector == "pi":
                trial["pi"] = self.x["pi"] + s * normals[:, 1]
            elif sector == "tau":
                trial["tau0"] = self.x["tau0"] + s * normals[:, 2]
                trial["tau1"] = self.x["tau1"] + s * normals[:, 3]
            else:
                trial["p"] = self.x["p"] + s[:, :, None] * normals[:, 4:6]
            new = self.lw(trial)
            accept = np.log(uniforms[:, k, 0]) < new - cur
            for key in self.x:
                mask = accept.reshape((-1,) + (1,) * (self.x[key].ndim - 1))
                self.x[key] = np.where(mask, trial[key], self.x[key])
            cur = np.where(accept, new, cur)
            self.accepted[:, k] += accept
            self.tried[:, k] += 1

    def tune(self, target: float, round_: int):
        _adapt(self, target, round_)

    def run(self):
        cfg = self.cfg
        for k in range(1, cfg.burn_in + 1):
            self.sweep()
            if k % cfg.tune_every == 0:
                self.tune(cfg.target_accept, k // cfg.tune_every)
        self.accepted[:] = 0
        self.tried[:] = 0
        out = {key: np.empty((self.g, cfg.samples) + v.shape[1:]) for key, v in self.x.items()}
        lws = np.empty((self.g, cfg.samples))
        for k in range(cfg.samples):
            for _ in range(cfg.thin):
                self.sweep()
            for key in self.x:
                out[key][:, k] = self.x[key]
            lws[:, k] = self.lw(self.x)
        rate = self.accepted / np.maximum(self.tried, 1)
        return dict(out, lw=lws, acceptance=rate, scales=self.scale.copy())


def sample(spec: GibbsSpec, cfg: SamplerConfig, lat: Lattice) -> SampleSet:
    """Draw cfg.chains * cfg.samples states from the Gibbs spec."""
    check_normalizable(spec, lat)
    ids = list(range(cfg.chains))
    groups = [ids[i:i + cfg.group_size] for i in range(0, len(ids), cfg.group_size)]
    cls = _MatterGroup if spec.mode == MATTER else _RegulatedGroup

    def work(chain_ids):
        return cls(spec, lat, cfg, chain_ids).run()

    if cfg.workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    def merge(key):
        return np.concatenate([r[key] for r in results], axis=0)

    acceptance = merge("acceptance")
    meta = dict(seed=int(cfg.seed), stream=cfg.stream, burn_in=cfg.burn_in, thin=cfg.thin,
                chains=cfg.chains, samples=cfg.samples, proposal=cfg.proposal,
                sampler="checkerboard" if (spec.mode == MATTER and lat.n % 4 == 0
                                           and not spec.pin_zero_mode and cfg.proposal == "rwm")
                else "global", warnings=[])
    if np.any(acceptance < 0.1) or np.any(acceptance > 0.7):
        msg = (f"acceptance rate outside [0.1, 0.7] after tuning: "
               f"min {acceptance.min():.3f}, max {acceptance.max():.3f}")
        meta["warnings"].append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if spec.mode == MATTER:
        return SampleSet(spec, lat, merge("phi"), merge("pi"), merge("lw"), acceptance, merge("scales"), meta=meta)
    return SampleSet(spec, lat, merge("phi"), merge("pi"), merge("lw"), acceptance, merge("scales"),
                     tau0=merge("tau0"), tau1=merge("tau1"), p=merge("p"), meta=meta)


def matter_samples_log_weight(spec: GibbsSpec, s: SampleSet) -> np.ndarray:
    """Re-evaluate a matter-sector log-weight on stored samples."""
    return matter_log_weight(spec, s.phi, s.pi, s.lat)


__all__ = ["SamplerConfig", "SampleSet", "sample", "matter_samples_log_weight"]
