"""Command-line driver: config resolution, deterministic runs and hashed outputs.

Every run resolves defaults, an optional TOML file and command-line flags into
one config, writes it as resolved_config.json next to its outputs, stamps each
output with the config hash and lists output digests in manifest.json.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import canonical as cn
from .dynamics import FlowError, evolve, normal_mode_frequency, wave_preset
from .ensemble import (
    GibbsSpec,
    OverlapError,
    SamplerConfig,
    estimate_values,
    matter_hamiltonian,
    observable_battery,
    sample,
    stationarity_test,
    thermo,
)
from .expr import EvalError, evaluate, parse_expr
from .gauge import GaugeSpec, reduced_energy, reduced_evolve
from .geometry import pushforward_spatial, tangent
from .grid import Lattice, SpacetimeVectorField
from .multisym import lift_consistency, slice_pullback_check

DEFAULTS = {
    "lattice": {"n": 64, "L": 2 * math.pi},
    "model": {"mass": 1.0},
    "output": {"directory": "out"},
    "seed": None,
}

# experiment defaults per command; "runtime" and "output" never enter the hash
EXPERIMENTS = {
    "check.algebra": {"ns": [32, 64, 128, 256], "state_seed": 0,
                      "N": "1", "M": "cos(x)", "Nvec": "sin(x)", "Mvec": "cos(2*x)"},
    "check.equivariance": {"ns": [32, 64, 128, 256], "state_seed": 0,
                           "xi": ["1+0.2*cos(x)", "0"], "zeta": ["0.1*t", "0.3*sin(x)"]},
    "check.appendix": {"states": 100, "state_seed": 0},
    "evolve": {"preset": "wave", "xi": ["1", "0"], "lambda_end": 1.0, "h": 1e-3, "every": 10,
               "sites": False},
    "gauge-reduce": {"preset": "timegauge", "gauge": ["lam", "x"], "phi0": "sin(x)", "pi0": "0",
                     "lambda_end": None, "h": 1e-3, "every": 10},
    "sample": {"mode": "matter", "b": 1.0, "xi": ["1", "0"], "chains": 16, "samples": 640,
               "burn_in": 300, "thin": 2, "proposal": "rwm", "bins": 40, "stationarity": None},
    "thermo": {"mode": "matter", "b": 1.0, "b_final": None, "xi": ["1", "0"], "xi_final": None,
               "chains": 16, "samples": 640, "burn_in": 300, "thin": 2, "ti_points": 9},
    "verify.multisym": {"states": 100, "state_seed": 0, "transversal": "normal"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --- config -----------------------------------------------------------------


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k not in ("runtime", "output")}
    text = json.dumps(hashed, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _parse_ns(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def resolve_config(args) -> dict:
    key = args.command + (f".{args.target}" if getattr(args, "target", None) else "")
    cfg = copy.deepcopy(DEFAULTS)
    cfg["command"] = key
    cfg["experiment"] = copy.deepcopy(EXPERIMENTS.get(key, {}))
    if args.config:
        with open(args.config, "rb") as fh:
            file_cfg = tomllib.load(fh)
        unknown = set(file_cfg) - {"lattice", "model", "output", "experiment", "seed"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, file_cfg)
    flags = {k: v for k, v in vars(args).items() if v is not None}
    exp = cfg["experiment"]
    if "n" in flags:
        ns = _parse_ns(flags.pop("n"))
        if "ns" in exp:
            exp["ns"] = ns
        elif len(ns) != 1:
            raise ValueError("--n takes a single lattice size for this command")
        cfg["lattice"]["n"] = ns[-1]
    if "L" in flags:
        cfg["lattice"]["L"] = flags.pop("L")
    if "mass" in flags:
        cfg["model"]["mass"] = flags.pop("mass")
    if "out" in flags:
        cfg["output"]["directory"] = flags.pop("out")
    if "seed" in flags:
        cfg["seed"] = flags.pop("seed")
    for k, v in flags.items():
        if k in exp:
            exp[k] = v
    if "ns" in exp:
        exp["ns"] = _parse_ns(exp["ns"])
    cfg["lattice"]["n"] = int(cfg["lattice"]["n"])
    cfg["lattice"]["L"] = float(cfg["lattice"]["L"])
    cfg["model"]["mass"] = float(cfg["model"]["mass"])
    if cfg["seed"] is not None:
        seed = int(cfg["seed"])
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        cfg["seed"] = seed
    cfg["runtime"] = {"workers": int(getattr(args, "workers", None) or 1),
                      "group_size": int(getattr(args, "group_size", None) or 16)}
    return cfg


# --- output -----------------------------------------------------------------


class Outputs:
    def __init__(self, cfg: dict):
        self.dir = Path(cfg["output"]["directory"])
        self.hash = config_hash(cfg)
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def _write(self, name: str, text: str):
        self.dir.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        (self.dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def csv(self, name: str, header: list[str], rows):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.hash}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        self._write(name, buf.getvalue())

    def csv_text(self, name: str, body: str):
        self._write(name, f"# config_hash={self.hash}\n" + body)

    def json(self, name: str, obj: dict):
        self._write(name, canonical_json(dict(obj, config_hash=self.hash)))

    def finish(self):
        self._write("resolved_config.json", canonical_json(self.cfg))
        manifest = {"config_hash": self.hash, "files": dict(sorted(self.files.items()))}
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "manifest.json").write_text(canonical_json(manifest), encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- helpers ----------------------------------------------------------------


def _lattice(cfg: dict, n: int | None = None) -> Lattice:
    return Lattice(cfg["lattice"]["n"] if n is None else n, cfg["lattice"]["L"])


def _field(pair, L: float) -> SpacetimeVectorField:
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        raise ValueError("a vector field needs two component expressions")
    return SpacetimeVectorField.parse(str(pair[0]), str(pair[1]), circumference=L)


def _site_expr(text, lat: Lattice) -> np.ndarray:
    node = parse_expr(str(text), variables=("x",))
    return np.broadcast_to(evaluate(node, x=lat.sites), (lat.n,)).astype(float)


def _sampler_config(cfg: dict) -> SamplerConfig:
    exp = cfg["experiment"]
    if cfg["seed"] is None:
        raise ValueError("--seed is required for sampling commands")
    return SamplerConfig(seed=cfg["seed"], chains=int(exp["chains"]), samples=int(exp["samples"]),
                         burn_in=int(exp["burn_in"]), thin=int(exp["thin"]), proposal=exp.get("proposal", "rwm"),
                         workers=cfg["runtime"]["workers"], group_size=cfg["runtime"]["group_size"])


def _residual_study(out: Outputs, cfg: dict, names: list[str], fn, csv_name: str):
    exp = cfg["experiment"]
    ns = exp["ns"]
    rows = []
    for n in ns:
        lat = _lattice(cfg, n)
        state = cn.random_state(lat, np.random.default_rng(exp["state_seed"]))
        rows.append([n] + [float(r) for r in fn(state, lat)])
    res = np.array([r[1:] for r in rows])
    orders = {}
    for j, name in enumerate(names):
        col = res[:, j]
        orders[name] = cn.fit_order(ns, col) if len(ns) > 1 and np.all(col > 0) else None
    out.csv(csv_name, ["n"] + names, rows)
    out.json("report.json", {"fitted_orders": orders, "residuals": dict(zip(map(str, ns), res.tolist()))})
    return orders


# --- commands ---------------------------------------------------------------


def cmd_check(cfg: dict, out: Outputs) -> int:
    exp, m = cfg["experiment"], cfg["model"]["mass"]
    target = cfg["command"].split(".", 1)[1]
    if target == "algebra":
        exprs = [parse_expr(str(exp[k]), variables=("x",)) for k in ("N", "M", "Nvec", "Mvec")]

        def fn(state, lat):
            vals = [np.broadcast_to(evaluate(e, x=lat.sites), (lat.n,)) for e in exprs]
            return cn.verify_dirac_algebra(state, *vals, m, lat)

        _residual_study(out, cfg, ["shift_shift", "shift_normal", "normal_normal"], fn, "algebra.csv")
    elif target == "equivariance":
        L = cfg["lattice"]["L"]
        xi, zeta = _field(exp["xi"], L), _field(exp["zeta"], L)
        _residual_study(out, cfg, ["residual"], lambda st, lat: [cn.verify_equivariance(st, xi, zeta, m, lat)],
                        "equivariance.csv")
    else:  # appendix
        lat = _lattice(cfg)
        rng = np.random.default_rng(exp["state_seed"])
        rows = []
        for k in range(int(exp["states"])):
            st = cn.random_state(lat, rng)
            zeta = rng.normal(size=lat.n)
            J = cn.spatial_momentum_map(st, zeta, m, lat).value
            P = cn.comomentum_pairing(st, pushforward_spatial(zeta, st.tau, lat), m, lat).value
            rows.append([k, J, P, abs(J - P)])
        out.csv("appendix.csv", ["state", "J_zeta", "pairing_pushforward", "abs_diff"], rows)
        out.json("report.json", {"max_abs_diff": max(r[3] for r in rows), "states": len(rows)})
    return 0


def cmd_evolve(cfg: dict, out: Outputs) -> int:
    exp, m = cfg["experiment"], cfg["model"]["mass"]
    lat = _lattice(cfg)
    if exp["preset"] != "wave":
        raise ValueError(f"unknown evolve preset {exp['preset']!r}")
    xi = _field(exp["xi"], lat.circumference)
    state = wave_preset(lat, m)
    report = {"preset": "wave", "xi": list(xi.describe())}
    try:
        trace = evolve(state, xi, m, float(exp["lambda_end"]), float(exp["h"]), lat, every=int(exp["every"]))
    except FlowError as exc:
        if exc.trace is not None and exc.trace.states:
            out.csv_text("trace_partial.csv", exc.trace.to_csv(sites=bool(exp["sites"])))
        out.json("report.json", dict(report, error=str(exc)))
        raise
    out.csv_text("trace.csv", trace.to_csv(sites=bool(exp["sites"])))
    energy = np.array(trace.energy)
    report.update(max_drift=float(max(trace.drift)), energy_change=float(np.max(np.abs(energy - energy[0]))))
    c = xi(lat.sites * 0, lat.sites)
    if np.allclose(c, np.array([[1.0], [0.0]])):
        # normal-mode oracle on the identity foliation
        w = normal_mode_frequency(lat, m, 1)
        err = max(float(np.max(np.abs(st.phi - np.sin(lat.sites) * np.cos(w * lam))))
                  for lam, st in trace.samples)
        report["normal_mode_error"] = err
    out.json("report.json", report)
    return 0


def cmd_gauge_reduce(cfg: dict, out: Outputs) -> int:
    exp, m = cfg["experiment"], cfg["model"]["mass"]
    lat = _lattice(cfg)
    gs = GaugeSpec.timegauge() if exp["preset"] == "timegauge" else GaugeSpec.parse(*map(str, exp["gauge"]))
    if exp["preset"] not in ("timegauge", "custom"):
        raise ValueError(f"unknown gauge preset {exp['preset']!r}")
    phi0, pi0 = _site_expr(exp["phi0"], lat), _site_expr(exp["pi0"], lat)
    w = normal_mode_frequency(lat, m, 1)
    lam_end = exp["lambda_end"]
    h = float(exp["h"])
    if lam_end is None:
        # one period of the first normal mode, rounded to a whole number of steps
        steps = int(math.ceil(2 * math.pi / w / h))
        h = 2 * math.pi / w / steps
        lam_end = steps * h
    lam_end = float(lam_end)
    steps = int(round(lam_end / h))
    gs.validate(np.linspace(0, lam_end, min(steps, 50) + 1), lat)
    tr = reduced_evolve(phi0, pi0, gs, m, lam_end, h, lat, every=int(exp["every"]))
    energies = [float(reduced_energy(p, q, gs, lam, m, lat)) for lam, p, q in zip(tr.lambdas, tr.phi, tr.pi)]
    header = ["lambda", "energy"] + [f"phi_{i}" for i in range(lat.n)] + [f"pi_{i}" for i in range(lat.n)]
    rows = [[lam, e] + list(p) + list(q) for lam, e, p, q in zip(tr.lambdas, energies, tr.phi, tr.pi)]
    out.csv("reduced_trace.csv", header, rows)
    report = {"gauge": list(gs.describe()), "lambda_end": lam_end, "h": h, "steps": steps}
    if gs == GaugeSpec.timegauge() and exp["phi0"] == "sin(x)" and str(exp["pi0"]) == "0":
        err = max(float(np.max(np.abs(p - np.sin(lat.sites) * np.cos(w * lam))))
                  for lam, p in zip(tr.lambdas, tr.phi))
        report.update(normal_mode_error=err, omega=w)
    out.json("report.json", report)
    return 0


def _gibbs(exp: dict, cfg: dict, lat: Lattice, b_key="b", xi_key="xi") -> GibbsSpec:
    xi = _field(exp[xi_key] if exp.get(xi_key) is not None else exp["xi"], lat.circumference)
    b = exp[b_key] if exp.get(b_key) is not None else exp["b"]
    return GibbsSpec(xi, b=float(b), mode=exp["mode"], mass=cfg["model"]["mass"])


def cmd_sample(cfg: dict, out: Outputs) -> int:
    exp = cfg["experiment"]
    lat = _lattice(cfg)
    scfg = _sampler_config(cfg)
    spec = _gibbs(exp, cfg, lat)
    s = sample(spec, scfg, lat)
    report = {"acceptance": float(s.acceptance.mean()), "retained": int(s.size), "warnings": s.meta["warnings"]}
    if spec.mode == "matter-sector":
        H = matter_hamiltonian(spec, s.phi, s.pi, lat)
        report["H"] = estimate_values(H).to_dict()
        report["H_equipartition"] = lat.n / spec.b
        report["observables"] = {k: estimate_values(f(s.phi, s.pi)).to_dict()
                                 for k, f in observable_battery(lat).items()}
        counts, edges = np.histogram(H.ravel(), bins=int(exp["bins"]))
        out.csv("histogram_H.csv", ["bin_lo", "bin_hi", "count"],
                [[edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)])
        if exp.get("stationarity") is not None:
            rep = stationarity_test(spec, scfg, float(exp["stationarity"]), lat, samples=s)
            report["stationarity"] = rep.to_dict()
    else:
        report["log_weight"] = estimate_values(s.log_weights).to_dict()
    out.json("report.json", report)
    return 0


def cmd_thermo(cfg: dict, out: Outputs) -> int:
    exp = cfg["experiment"]
    lat = _lattice(cfg)
    scfg = _sampler_config(cfg)
    si = _gibbs(exp, cfg, lat)
    sf = _gibbs(exp, cfg, lat, b_key="b_final", xi_key="xi_final")
    rep = thermo(si, sf, scfg, lat, ti_points=int(exp["ti_points"]))
    d = rep.to_dict()
    if si.coefficient(lat).tolist() == sf.coefficient(lat).tolist():
        d["gaussian_logZ_oracle"] = -lat.n * math.log(sf.b / si.b)
    out.json("thermo.json", d)
    return 0


def cmd_verify(cfg: dict, out: Outputs, args) -> int:
    target = cfg["command"].split(".", 1)[1]
    if target == "hashes":
        return verify_hashes(Path(args.directory))
    exp, m = cfg["experiment"], cfg["model"]["mass"]
    lat = _lattice(cfg)
    rng = np.random.default_rng(exp["state_seed"])
    xi = SpacetimeVectorField.parse("1+0.2*cos(x)", "0.3*sin(x)", circumference=lat.circumference)
    rows = []
    for k in range(int(exp["states"])):
        st = cn.on_shell(cn.random_state(lat, rng), m, lat)
        T = None
        if exp["transversal"] == "oblique":
            T = 1.3 * np.stack([np.ones(lat.n), np.zeros(lat.n)]) + 0.4 * np.stack(tangent(st.tau.tau0, st.tau.tau1, lat))
        rows.append([k, slice_pullback_check(st, xi, m, lat, T), lift_consistency(st, m, lat)])
    out.csv("multisym.csv", ["state", "pullback_residual", "lift_residual"], rows)
    out.json("report.json", {"max_pullback_residual": max(r[1] for r in rows),
                             "max_lift_residual": max(r[2] for r in rows)})
    return 0


def verify_hashes(directory: Path) -> int:
    """Re-check manifest digests and the config hash embedded in every output."""
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    expected = manifest["config_hash"]
    problems = []
    cfg = json.loads((directory / "resolved_config.json").read_text(encoding="utf-8"))
    if config_hash(cfg) != expected:
        problems.append("resolved_config.json does not hash to the manifest config hash")
    for name, digest in manifest["files"].items():
        path = directory / name
        if not path.exists():
            problems.append(f"{name}: missing")
            continue
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != digest:
            problems.append(f"{name}: content digest mismatch")
        if name.endswith(".csv"):
            first = data.split(b"\n", 1)[0].decode()
            if first != f"# config_hash={expected}":
                problems.append(f"{name}: embedded config hash mismatch")
        elif name.endswith(".json") and name != "resolved_config.json":
            if json.loads(data).get("config_hash") != expected:
                problems.append(f"{name}: embedded config hash mismatch")
    for p in problems:
        print(p, file=sys.stderr)
    if not problems:
        print(f"ok: {len(manifest['files'])} files match config hash {expected}")
    return 1 if problems else 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file; flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--n", help="lattice size (comma-separated list for convergence studies)")
    common.add_argument("--L", type=float, help="circumference")
    common.add_argument("--mass", type=float)
    common.add_argument("--workers", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--group-size", dest="group_size", type=int,
                        help="chains per vectorized work unit; results do not depend on it")

    p = _Parser(prog="pftlab", description="Covariant Gibbs states of a parametrized scalar field on a lattice.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", parents=[common], help="constraint algebra and momentum-map checks")
    c.add_argument("target", choices=["algebra", "equivariance", "appendix"])
    c.add_argument("--states", type=int)
    c.add_argument("--state-seed", dest="state_seed", type=int)
    c.add_argument("--xi", nargs=2)
    c.add_argument("--zeta", nargs=2)

    e = sub.add_parser("evolve", parents=[common], help="integrate the flow of H(xi)")
    e.add_argument("--xi", nargs=2, metavar=("XI0", "XI1"))
    e.add_argument("--preset", choices=["wave"])
    e.add_argument("--lambda-end", dest="lambda_end", type=float)
    e.add_argument("--h", type=float)
    e.add_argument("--every", type=int)
    e.add_argument("--sites", action="store_const", const=True)

    g = sub.add_parser("gauge-reduce", parents=[common], help="gauge-fixed reduced evolution")
    g.add_argument("--preset", choices=["timegauge", "custom"])
    g.add_argument("--gauge", nargs=2, metavar=("F0", "F1"))
    g.add_argument("--phi0")
    g.add_argument("--pi0")
    g.add_argument("--lambda-end", dest="lambda_end", type=float)
    g.add_argument("--h", type=float)
    g.add_argument("--every", type=int)

    for name, helptext in (("sample", "draw from a Gibbs state"), ("thermo", "thermodynamic comparison")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--seed", type=int)
        s.add_argument("--mode", choices=["matter", "matter-sector", "regulated"])
        s.add_argument("--b", type=float)
        s.add_argument("--xi", nargs=2, metavar=("XI0", "XI1"))
        s.add_argument("--chains", type=int)
        s.add_argument("--samples", type=int)
        s.add_argument("--burn-in", dest="burn_in", type=int)
        s.add_argument("--thin", type=int)
        if name == "sample":
            s.add_argument("--proposal", choices=["rwm", "mala"])
            s.add_argument("--bins", type=int)
            s.add_argument("--stationarity", type=float, metavar="S",
                           help="also push the samples through the reduced flow for time S")
        else:
            s.add_argument("--b-final", dest="b_final", type=float)
            s.add_argument("--xi-final", dest="xi_final", nargs=2)
            s.add_argument("--ti-points", dest="ti_points", type=int)

    v = sub.add_parser("verify", parents=[common], help="multisymplectic consistency or output hashes")
    v.add_argument("target", choices=["multisym", "hashes"])
    v.add_argument("directory", nargs="?", default=None, help="output directory for 'hashes'")
    v.add_argument("--states", type=int)
    v.add_argument("--state-seed", dest="state_seed", type=int)
    v.add_argument("--transversal", choices=["normal", "oblique"])
    return p


COMMANDS = {"check": cmd_check, "evolve": cmd_evolve, "gauge-reduce": cmd_gauge_reduce,
            "sample": cmd_sample, "thermo": cmd_thermo}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "verify" and args.target == "hashes":
            if args.directory is None:
                raise UsageError(parser.format_usage() + "verify hashes needs an output directory")
            return verify_hashes(Path(args.directory))
        cfg = resolve_config(args)
        out = Outputs(cfg)
        if args.command == "verify":
            code = cmd_verify(cfg, out, args)
        else:
            code = COMMANDS[args.command](cfg, out)
        out.finish()
        return code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FlowError, OverlapError, FloatingPointError, np.linalg.LinAlgError, EvalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
