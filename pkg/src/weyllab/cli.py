"""Scenario runner: ``weyllab run --config cfg.txt`` and ``weyllab list-scenarios``.

A config is a text file of ``key = value`` lines with ``#`` comments.  Each
run writes ``metrics.csv`` and ``summary.json`` into the output directory.
Exit codes: 0 all metrics pass, 1 a tolerance (or computation) failure,
2 a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import dynamics as dyn
from . import moyal, quantize, sapt
from .phasespace import gaussian_symbol, make_grid, polynomial_symbol, constant_symbol

__all__ = ["ConfigError", "ScenarioConfig", "RunReport", "SCENARIOS", "parse_config", "run_scenario", "main"]


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

# scenario -> (defaults, default tolerances by metric)
SCENARIOS: Dict[str, dict] = {
    "quantize-check": dict(
        defaults=dict(n_x=128, box_length=16.0, eps=[1.0, 0.5]),
        tol=dict(identity=1e-10, potential_offdiag=1e-10, adjoint=1e-10)),
    "wigner-gallery": dict(
        defaults=dict(n_x=128, box_length=24.0, eps=[1.0]),
        tol=dict(reference=1e-6, marginal_x=1e-8, marginal_xi=1e-8, norm_identity=1e-6)),
    "moyal-convergence": dict(
        defaults=dict(n_x=512, box_length=13.0, eps=[0.2, 0.1, 0.05], order=1),
        tol=dict()),
    "egorov": dict(
        defaults=dict(n_x=256, box_length=5.6, eps=[0.1, 0.05, 0.025], model="quartic", t=1.0, dt=1e-3),
        tol=dict(egorov_error=1e-5)),
    "ehrenfest": dict(
        defaults=dict(n_x=256, box_length=16.0, eps=[0.1, 0.05], model="harmonic", t=2.0, dt=1e-3),
        tol=dict(trajectory_error=1e-6)),
    "dirac": dict(
        defaults=dict(eps=[0.2, 0.1, 0.05], mass=1.0),
        tol=dict(unitarity=1e-12, diagonalization=1e-12)),
    "sapt-firstorder": dict(
        defaults=dict(eps=[0.1], model="bo", seed=12345),
        tol=dict(projection=1e-8, commutation=1e-8, unitarity=1e-8, intertwining=1e-8,
                 g1_invariance=1e-9, heff_invariance=1e-9)),
    "bo-dynamics": dict(
        defaults=dict(n_x=128, box_per_eps=256.0, eps=[0.1, 0.05, 0.025], model="bump", t=1.0),
        tol=dict()),
}

_INT_KEYS = {"n_x", "order", "seed"}
_FLOAT_KEYS = {"box_length", "box_per_eps", "t", "dt", "mass", "slope_band"}
_MODELS = {
    "egorov": ("quadratic", "quartic"),
    "ehrenfest": ("harmonic", "quartic", "free"),
    "sapt-firstorder": ("bo", "mixed", "mixed-twisted", "bump", "monopole"),
    "bo-dynamics": ("bump", "constant"),
}


@dataclass
class ScenarioConfig:
    scenario: str
    params: Dict[str, object]
    tolerances: Dict[str, float]
    slope_band: float = 0.3
    out: Optional[str] = None

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)


def _valid_list():
    return ", ".join(sorted(SCENARIOS))


def parse_config(path) -> ScenarioConfig:
    """Read and validate a ``key = value`` config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw: Dict[str, tuple] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', line {lineno}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value, line {lineno}")
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}, line {lineno}")
        raw[key] = (value, lineno)
    if "scenario" not in raw:
        raise ConfigError(f"missing 'scenario' key; valid scenarios: {_valid_list()}")
    scenario, lineno = raw.pop("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}, line {lineno}; valid scenarios: {_valid_list()}")
    spec = SCENARIOS[scenario]
    params = dict(spec["defaults"])
    params["eps"] = list(params["eps"])
    tol = dict(spec["tol"])
    slope_band, out = 0.3, None
    for key, (value, lineno) in raw.items():
        if key.startswith("tol_"):
            name = key[4:]
            if name not in tol:
                raise ConfigError(f"unknown tolerance {key!r} for {scenario}, line {lineno}")
            tol[name] = _number(key, value, lineno, float)
        elif key == "eps":
            try:
                eps = [float(v) for v in value.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"eps must be a comma-separated list of numbers, line {lineno}") from None
            if not eps or any(not e > 0 for e in eps):
                raise ConfigError(f"eps must be positive, line {lineno}")
            if any(a <= b for a, b in zip(eps, eps[1:])):
                raise ConfigError(f"eps list must be sorted descending, line {lineno}")
            params["eps"] = eps
        elif key in _INT_KEYS:
            params[key] = _number(key, value, lineno, int, allow_zero=(key == "order" or key == "seed"))
        elif key in _FLOAT_KEYS:
            v = _number(key, value, lineno, float)
            if key == "slope_band":
                slope_band = v
            else:
                params[key] = v
        elif key == "model":
            allowed = _MODELS.get(scenario, ())
            if value not in allowed:
                raise ConfigError(f"model {value!r} not available for {scenario} "
                                  f"(choose from {', '.join(allowed) or 'none'}), line {lineno}")
            params["model"] = value
        elif key == "out":
            out = value
        else:
            raise ConfigError(f"unknown key {key!r}, line {lineno}")
    if scenario == "moyal-convergence" and params["order"] > moyal.MAX_ORDER - 1:
        raise ConfigError(f"order must be at most {moyal.MAX_ORDER - 1}")
    if "n_x" in params and params["n_x"] % 2:
        raise ConfigError("n_x must be even")
    return ScenarioConfig(scenario, params, tol, slope_band, out)


def _number(key, value, lineno, kind, allow_zero=False):
    try:
        v = kind(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, line {lineno}") from None
    if not np.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(f"{key} must be positive, line {lineno}")
    return v


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    scenario: str
    params: Dict[str, object]
    rows: List[tuple] = field(default_factory=list)       # (metric, eps, t, value)
    metrics: List[dict] = field(default_factory=list)
    slopes: List[dict] = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, name, value, eps=None, t=None, tolerance=None):
        value = float(value)
        self.rows.append((name, eps, t, value))
        ok = True if tolerance is None else bool(np.isfinite(value) and value < tolerance)
        label = name if eps is None else f"{name}[eps={eps:g}]"
        self.metrics.append(dict(name=label, value=value, tolerance=tolerance, **{"pass": ok}))

    def add_slope(self, name, eps, values, expected, band):
        s = dyn.loglog_slope(eps, values)
        ok = bool(np.isfinite(s) and abs(s - expected) <= band)
        self.slopes.append(dict(name=name, slope=s, expected=expected, band=band, **{"pass": ok}))
        self.rows.append((f"slope:{name}", None, None, s))

    def add_check(self, name, ok: bool):
        self.metrics.append(dict(name=name, value=float(ok), tolerance=None, **{"pass": bool(ok)}))

    @property
    def passed(self) -> bool:
        return all(m["pass"] for m in self.metrics) and all(s["pass"] for s in self.slopes)

    def write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "metric", "eps", "t", "value"])
            fmt = lambda v: "" if v is None else format(v, ".17g")
            for name, eps, t, value in self.rows:
                w.writerow([self.scenario, name, fmt(eps), fmt(t), fmt(value)])
        summary = dict(scenario=self.scenario, params=self.params,
                       metrics=[{k: m[k] for k in ("name", "value", "tolerance", "pass")} for m in self.metrics],
                       slopes=[{k: s[k] for k in ("name", "slope", "expected")} for s in self.slopes],
                       passed=self.passed, wall_time=self.wall_time)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _workers() -> int:
    try:
        n = int(os.environ.get("WEYLLAB_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def _per_eps(fn: Callable[[float], object], eps: Sequence[float]) -> list:
    """Map over eps values, in parallel when WEYLLAB_THREADS > 1 (order preserved)."""
    n = min(_workers(), len(eps))
    if n == 1:
        return [fn(e) for e in eps]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, eps))


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

def _grid(cfg, eps=None):
    if cfg.get("box_per_eps") is not None and eps is not None:
        return make_grid(cfg["n_x"], cfg["box_per_eps"] * eps)
    return make_grid(cfg["n_x"], cfg["box_length"])


def _quantize_check(cfg, rep):
    f = gaussian_symbol(0.4, -0.3, 1.2, 0.9, amp=1.0 + 0.5j)
    V = sapt.x_function(lambda n, y: np.cos(y) if n == 0 else 0 * y, name="cos")

    def run(eps):
        g = _grid(cfg)
        one = quantize.weyl_quantize(constant_symbol(1.0), g, eps)
        Vop = quantize.weyl_quantize(V, g, eps).matrix
        A = quantize.weyl_quantize(f, g, eps).matrix
        Ac = quantize.weyl_quantize(f.conj(), g, eps).matrix
        return (np.max(np.abs(one.matrix - np.eye(g.n_x))),
                np.max(np.abs(Vop - np.diag(np.diag(Vop)))),
                np.max(np.abs(Ac - A.conj().T)))
    for eps, (a, b, c) in zip(cfg["eps"], _per_eps(run, cfg["eps"])):
        rep.add("identity", a, eps, tolerance=cfg.tolerances["identity"])
        rep.add("potential_offdiag", b, eps, tolerance=cfg.tolerances["potential_offdiag"])
        rep.add("adjoint", c, eps, tolerance=cfg.tolerances["adjoint"])


def _wigner_gallery(cfg, rep):
    g = _grid(cfg)
    x = g.x
    phi = quantize.WaveFunction((x * np.exp(-x ** 2 / 4)).astype(complex), g)
    norm2 = np.sqrt(2 * np.pi)
    for eps in cfg["eps"]:
        W = quantize.wigner_transform(phi, phi, eps)
        X, XI = np.meshgrid(W.x, W.xi, indexing="ij")
        dxi = W.xi[1] - W.xi[0]
        dx = W.x[1] - W.x[0]
        mx = np.sum(W.values, axis=1).real * dxi / np.sqrt(2 * np.pi)
        mxi = np.sum(W.values, axis=0).real * dx / np.sqrt(2 * np.pi)
        k = W.xi / eps
        rep.add("marginal_x", np.max(np.abs(mx - np.abs(phi.values) ** 2)), eps,
                tolerance=cfg.tolerances["marginal_x"])
        rep.add("marginal_xi", np.max(np.abs(mxi - 8 * k ** 2 * np.exp(-2 * k ** 2) / eps)), eps,
                tolerance=cfg.tolerances["marginal_xi"])
        l2 = np.sqrt(np.sum(np.abs(W.values) ** 2) * dx * dxi)
        rep.add("norm_identity", abs(l2 - eps ** -0.5 * norm2) / (eps ** -0.5 * norm2), eps,
                tolerance=cfg.tolerances["norm_identity"])
        if eps == 1.0:
            ref = 2 * (X ** 2 + 4 * XI ** 2 - 1) * np.exp(-X ** 2 / 2 - 2 * XI ** 2)
            rep.add("reference", np.max(np.abs(W.values - ref)), eps, tolerance=cfg.tolerances["reference"])


def _moyal_pair():
    return gaussian_symbol(0.3, 0.2, 1.0, 0.8), gaussian_symbol(-0.2, -0.1, 0.8, 0.7)


def _moyal_convergence(cfg, rep):
    f, g = _moyal_pair()
    N = cfg["order"]

    def run(eps):
        grid = _grid(cfg)
        lat = grid.lattice(eps)
        exact = moyal.moyal_exact(f, g, eps, grid)
        trunc = moyal.moyal_truncated(f, g, N, eps, at=lat)
        comm = moyal.moyal_commutator(f, g, eps, grid=grid)
        from .phasespace import poisson_bracket
        pb = poisson_bracket(f, g, at=lat)
        return (exact - trunc).max_abs(), (comm + pb * (1j * eps)).max_abs()
    out = _per_eps(run, cfg["eps"])
    for eps, (r, c) in zip(cfg["eps"], out):
        rep.add(f"remainder_N{N}", r, eps)
        rep.add("commutator_remainder", c, eps)
    rep.add_slope(f"remainder_N{N}", cfg["eps"], [o[0] for o in out], N + 1, cfg.slope_band)
    rep.add_slope("commutator_remainder", cfg["eps"], [o[1] for o in out], 3, cfg.slope_band)


def _egorov_models(model):
    if model == "quadratic":
        return polynomial_symbol({(0, 2): 0.5, (2, 0): 0.5})
    return polynomial_symbol({(0, 2): 0.5, (2, 0): 0.5, (4, 0): 0.1})


def _egorov(cfg, rep):
    h = _egorov_models(cfg["model"])
    f = gaussian_symbol(0.0, 0.0, 0.35, 0.35)
    t, dt = cfg["t"], cfg["dt"]

    def run(eps):
        return dyn.egorov_error(h, f, t, eps, _grid(cfg), dt=dt)
    errs = _per_eps(run, cfg["eps"])
    quad = cfg["model"] == "quadratic"
    for eps, e in zip(cfg["eps"], errs):
        rep.add("egorov_error", e, eps, t, tolerance=cfg.tolerances["egorov_error"] if quad else None)
    if not quad:
        rep.add_slope("egorov_error", cfg["eps"], errs, 2, cfg.slope_band)


def _ehrenfest(cfg, rep):
    model = cfg["model"]
    V = {"harmonic": {(2, 0): 0.5}, "quartic": {(2, 0): 0.5, (4, 0): 0.1}, "free": {}}[model]
    h = polynomial_symbol({(0, 2): 0.5, **V})
    dV = {"harmonic": lambda y: y, "quartic": lambda y: y + 0.4 * y ** 3, "free": lambda y: 0 * y}[model]
    times = np.linspace(0.0, cfg["t"], 5)

    def run(eps):
        g = _grid(cfg)
        H = quantize.weyl_quantize(h, g, eps, check=False)
        psi = dyn.make_wavepacket("coherent", dict(x0=1.0, xi0=0.5), g, eps)
        return dyn.ehrenfest_track(psi, H, h, times, cfg["dt"], dV=dV, integrator="rk4")
    for eps, tab in zip(cfg["eps"], _per_eps(run, cfg["eps"])):
        dev = max(np.max(np.abs(tab.q - tab.q_cl)), np.max(np.abs(tab.p - tab.p_cl)))
        if model == "quartic":
            rep.add("trajectory_error", dev, eps, cfg["t"])
            rep.add("force_gap", np.max(tab.force_gap), eps, cfg["t"])
        else:
            rep.add("trajectory_error", dev, eps, cfg["t"], tolerance=cfg.tolerances["trajectory_error"])


def _dirac(cfg, rep):
    m = cfg["mass"]
    k = np.linspace(-3.0, 3.0, 32)
    K = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1)
    unit, diag = sapt.dirac_diagonalize_check(K, m)
    rep.add("unitarity", unit, tolerance=cfg.tolerances["unitarity"])
    rep.add("diagonalization", diag, tolerance=cfg.tolerances["diagonalization"])
    errs = _per_eps(lambda e: sapt.dirac_electric_offdiagonal(e, m), cfg["eps"])
    for eps, e in zip(cfg["eps"], errs):
        rep.add("electric_offdiag", e, eps)
    rep.add_slope("electric_offdiag", cfg["eps"], errs, 3, cfg.slope_band)


def _sapt_model(name):
    return {"bo": sapt.bo_tanh_model, "mixed": sapt.mixed_model, "bump": sapt.bo_bump_model,
            "mixed-twisted": lambda: sapt.mixed_model(twist=0.5), "monopole": sapt.monopole_model}[name]()


def _sapt_firstorder(cfg, rep):
    model = _sapt_model(cfg["model"])
    x, xi = np.meshgrid(np.linspace(-2, 2, 9), np.linspace(-1.5, 1.5, 7), indexing="ij")
    b = sapt.sapt_first_order(model, (x, xi))
    for name, v in sapt.defect_residuals(b).items():
        rep.add(name, v, tolerance=cfg.tolerances[name])
    # block-offdiagonal perturbation of pi1 (pinned seed): the projection defect must not move
    X = sapt.offdiagonal_perturbation(b.pi0.v, seed=cfg["seed"])
    shift = sapt.projection_defect(b.pi0, b.pi1_D + X) - sapt.projection_defect(b.pi0, b.pi1_D)
    rep.add("g1_invariance", np.max(np.abs(shift)), tolerance=cfg.tolerances["g1_invariance"])
    b2 = sapt.sapt_first_order(model, (x, xi), pi1_extra=X)
    rep.add("heff_invariance", np.max(np.abs(b2.heff1 - b.heff1)), tolerance=cfg.tolerances["heff_invariance"])
    rep.add("g1_norm", np.max(np.abs(b.G1)))


def _bo_dynamics(cfg, rep):
    model = sapt.bo_bump_model(0.25, 1.0) if cfg["model"] == "bump" else sapt.constant_model()
    t = cfg["t"]
    out = _per_eps(lambda e: sapt.bo_effective_dynamics_error(model, _grid(cfg, e), e, t), cfg["eps"])
    for eps, r in zip(cfg["eps"], out):
        rep.add("unitary_error", r.unitary_error, eps, t)
        rep.add("leakage", r.leakage, eps, t)
    leak = [r.leakage for r in out]
    rep.add_check("leakage_decreasing", all(a > b for a, b in zip(leak, leak[1:])))
    if cfg["model"] == "bump":
        rep.add_slope("unitary_error", cfg["eps"], [r.unitary_error for r in out], 1, cfg.slope_band)


_RUNNERS = {
    "quantize-check": _quantize_check,
    "wigner-gallery": _wigner_gallery,
    "moyal-convergence": _moyal_convergence,
    "egorov": _egorov,
    "ehrenfest": _ehrenfest,
    "dirac": _dirac,
    "sapt-firstorder": _sapt_firstorder,
    "bo-dynamics": _bo_dynamics,
}


def run_scenario(cfg: ScenarioConfig, out: Optional[Path] = None) -> RunReport:
    """Run one scenario; outputs are written even if a computation raises."""
    rep = RunReport(cfg.scenario, dict(cfg.params, slope_band=cfg.slope_band, tolerances=cfg.tolerances))
    t0 = time.perf_counter()
    try:
        _RUNNERS[cfg.scenario](cfg, rep)
    finally:
        rep.wall_time = time.perf_counter() - t0
        if out is not None:
            rep.write(Path(out))
    return rep


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="weyllab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default: config 'out' or ./weyllab-out)")
    p_run.add_argument("--quiet", action="store_true")
    sub.add_parser("list-scenarios", help="print the available scenarios")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0

    if args.command == "list-scenarios":
        for name in sorted(SCENARIOS):
            print(name)
        return 0
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.out or "weyllab-out")
    try:
        rep = run_scenario(cfg, out)
    except Exception as exc:  # computation failure: partial report already written
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        for m in rep.metrics:
            tol = "" if m["tolerance"] is None else f" (tol {m['tolerance']:g})"
            print(f"{'PASS' if m['pass'] else 'FAIL'} {m['name']} = {m['value']:.3e}{tol}")
        for s in rep.slopes:
            print(f"{'PASS' if s['pass'] else 'FAIL'} slope {s['name']} = {s['slope']:.3f} "
                  f"(expected {s['expected']} +- {s['band']})")
        print(f"wrote {out / 'metrics.csv'} and {out / 'summary.json'} in {rep.wall_time:.1f} s")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
