"""Batch front end: ``lpsv <subcommand> --config <path> [--out] [--seed] [--scenarios] [--threads]``.

Every run writes CSV tables plus ``manifest.json``.  Exit codes: 0 success,
2 validation failure, 3 numerical fault, 4 I/O or configuration error.  On
failure only the manifest is written, with ``status = "failed"`` and an
error record that is also printed to stderr as JSON.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .cirlab import conditional_vol_density, malpha_report, ratio_moment, sample_cir_paths
from .grid import GridSpec
from .noise import make_noise
from .params import XSTAR, InfeasibleExponents, ModelParams, feasible_exponents, validate_params
from .pool import DEFAULT_X0_LAW, empirical_density_2d, loss_curve, simulate_pool
from .spde2d import initial_from_laws, solve_spde
from .verify import DeltaAccumulator, MollifierSpec, combine_delta, compare_particle_grid, weighted_norms

SUBCOMMANDS = ("validate", "simulate-pool", "solve-spde", "density-bounds", "verify-delta", "report")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class ValidationFailure(ValueError):
    pass


# -- configuration ----------------------------------------------------------------

@dataclass
class GridBlock:
    x_max: float = 4.0
    n_x: int = 200
    y_max: float = 4.5
    n_y: int = 100
    dt: float = 1e-4
    T: float = 0.5
    record_every: int = 500

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def spec(self) -> GridSpec:
        return GridSpec(self.x_max, self.n_x, self.y_max, self.n_y, self.dt)


@dataclass
class MonteCarloBlock:
    n_particles: int = 20000
    n_scenarios: int = 8
    base_seed: int = 0
    n_paths: int = 4000


@dataclass
class ExponentBlock:
    alpha: list = field(default_factory=lambda: [0.0, 1.0, 2.0])
    q: list = field(default_factory=lambda: [1.05])
    delta: float = 2.0
    epsilon: float = 0.2


@dataclass
class InitialLawBlock:
    sigma0: str = "uniform"


@dataclass
class OutputBlock:
    dir: str = "out"


BLOCKS = {"model": ModelParams, "grid": GridBlock, "monte_carlo": MonteCarloBlock,
          "exponents": ExponentBlock, "output": OutputBlock, "initial_law": InitialLawBlock}
REQUIRED = ("model", "grid", "monte_carlo", "exponents", "output")


@dataclass
class RunConfig:
    model: ModelParams
    grid: GridBlock
    monte_carlo: MonteCarloBlock
    exponents: ExponentBlock
    output: OutputBlock
    initial_law: InitialLawBlock = field(default_factory=InitialLawBlock)
    rho: float | None = None

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in BLOCKS}
        if self.rho is not None:
            out["model"]["rho"] = self.rho
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        for key in data:
            if key not in BLOCKS:
                raise ConfigError(f"unknown config block {key!r}")
        for key in REQUIRED:
            if key not in data:
                raise ConfigError(f"missing config block {key!r}")
        built = {}
        rho = None
        for name, kind in BLOCKS.items():
            block = data.get(name, {})
            if not isinstance(block, dict):
                raise ConfigError(f"block {name!r} must be an object")
            block = dict(block)
            if name == "model" and "rho" in block:
                rho = _number(block.pop("rho"), "model.rho")
            allowed = {f.name: f for f in fields(kind)}
            for key in block:
                if key not in allowed:
                    raise ConfigError(f"unknown key {name}.{key}")
            try:
                built[name] = kind(**{k: _coerce(v, allowed[k], f"{name}.{k}") for k, v in block.items()})
            except TypeError as exc:
                raise ConfigError(f"block {name!r}: {exc}") from None
        cfg = cls(rho=rho, **built)
        cfg.check()
        return cfg

    def check(self) -> None:
        mc, g = self.monte_carlo, self.grid
        for key in ("n_particles", "n_scenarios", "n_paths"):
            if getattr(mc, key) <= 0:
                raise ConfigError(f"monte_carlo.{key} must be positive")
        if mc.base_seed < 0 or mc.base_seed >= 2**64:
            raise ConfigError("monte_carlo.base_seed must be an unsigned 64-bit integer")
        for key in ("x_max", "y_max", "dt", "T"):
            if not getattr(g, key) > 0:
                raise ConfigError(f"grid.{key} must be positive")
        if not math.isclose(g.n_steps * g.dt, g.T, rel_tol=1e-9):
            raise ConfigError("grid.T must be a multiple of grid.dt")
        if g.record_every <= 0:
            raise ConfigError("grid.record_every must be positive")
        if self.initial_law.sigma0 not in SIGMA0_LAWS:
            raise ConfigError(f"initial_law.sigma0 must be one of {sorted(SIGMA0_LAWS)}")
        if not self.exponents.alpha or not self.exponents.q:
            raise ConfigError("exponents.alpha and exponents.q must be nonempty")
        try:
            g.spec()
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(v)


def _coerce(v, f, where):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where} must be an integer")
        return v
    if kind == "float":
        return _number(v, where)
    if kind == "list":
        if not isinstance(v, list):
            raise ConfigError(f"{where} must be a list")
        return [_number(x, where) for x in v]
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{where} must be a string")
        return v
    return v


SIGMA0_LAWS = {
    "uniform": lambda p: stats.uniform(loc=p.sigma0_lo, scale=p.sigma0_hi - p.sigma0_lo),
    "beta": lambda p: stats.beta(4, 4, loc=p.sigma0_lo, scale=p.sigma0_hi - p.sigma0_lo),
}


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(data)


# -- tables -----------------------------------------------------------------------

@dataclass
class Table:
    name: str
    columns: list
    rows: list

    def render(self) -> bytes:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return ("\n".join(lines) + "\n").encode()


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


# -- subcommands ------------------------------------------------------------------

def _map(fn, items, threads):
    items = list(items)
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _exponent_sets(cfg: RunConfig):
    out = []
    for a in cfg.exponents.alpha:
        for q in cfg.exponents.q:
            try:
                out.append(feasible_exponents(cfg.model.ratio, a, q))
            except InfeasibleExponents as exc:
                raise ValidationFailure(f"exponents alpha={a:g}, q={q:g}: {exc} [{exc.constraint}]") from None
    return out


def _laws(cfg: RunConfig):
    return DEFAULT_X0_LAW, SIGMA0_LAWS[cfg.initial_law.sigma0](cfg.model)


def cmd_validate(cfg, threads):
    return []


def cmd_simulate_pool(cfg, threads):
    p, g, mc = cfg.model, cfg.grid, cfg.monte_carlo
    grid = g.spec()
    x_law, s_law = _laws(cfg)

    def one(s):
        noise = make_noise(mc.base_seed, s, g.dt, g.n_steps, p.rho3)
        traj = simulate_pool(p, noise, mc.n_particles, x_law, s_law)
        return loss_curve(traj), empirical_density_2d(traj.final, grid)

    tables = []
    for s, (lc, emp) in enumerate(_map(one, range(mc.n_scenarios), threads)):
        tables.append(Table(f"loss_curve_s{s:03d}.csv", ["t[yr]", "loss[fraction]"], list(zip(lc.times, lc.L))))
        tables.append(_density_table(f"density_s{s:03d}.csv", grid, emp.values))
    return tables


def _density_table(name, grid, values, t=None):
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    cols = ["x[log-distance]", "y[variance]", "density[1/(log-distance*variance)]"]
    data = [X.ravel(), Y.ravel(), values.ravel()]
    if t is not None:
        cols.insert(0, "t[yr]")
        data.insert(0, np.full(X.size, t))
    return Table(name, cols, list(zip(*data)))


def _solve(cfg, s, record_every=None, callback=None):
    p, g, mc = cfg.model, cfg.grid, cfg.monte_carlo
    grid = g.spec()
    noise = make_noise(mc.base_seed, s, g.dt, g.n_steps, p.rho3)
    U0 = initial_from_laws(grid, *_laws(cfg))
    field_ = solve_spde(p, noise, grid, U0, rho=cfg.rho, record_every=record_every or g.record_every,
                        callback=callback)
    return noise, field_


def cmd_solve_spde(cfg, threads):
    grid = cfg.grid.spec()
    results = _map(lambda s: _solve(cfg, s)[1], range(cfg.monte_carlo.n_scenarios), threads)
    tables = []
    for s, f in enumerate(results):
        rows = []
        for t, u in zip(f.times, f.u):
            rows.extend(_density_table("", grid, u, t).rows)
        tables.append(Table(f"field_s{s:03d}.csv", ["t[yr]", "x[log-distance]", "y[variance]",
                                                    "u[1/(log-distance*variance)]"], rows))
        times = grid.dt * np.arange(len(f.mass_curve))
        flux = np.concatenate([f.y0_flux, [np.nan]])
        tables.append(Table(f"mass_s{s:03d}.csv", ["t[yr]", "mass[fraction]", "y0_flux[1/yr]"],
                            list(zip(times, f.mass_curve, flux))))
    return tables


def cmd_density_bounds(cfg, threads):
    p, g, mc = cfg.model, cfg.grid, cfg.monte_carlo
    sets = _exponent_sets(cfg)
    _, s_law = _laws(cfg)
    from .noise import particle_uniforms

    def one(s):
        noise = make_noise(mc.base_seed, s, g.dt, g.n_steps, p.rho3)
        sigma0 = s_law.ppf(particle_uniforms(mc.base_seed, s, "sigma0", mc.n_paths))
        return sample_cir_paths(p, noise, mc.n_paths, sigma0=sigma0, record_every=g.record_every)

    paths = _map(one, range(mc.n_scenarios), threads)
    times = paths[0].times[1:]
    estimates = [[conditional_vol_density(ps.sigma[i + 1]) for ps in paths] for i in range(len(times))]
    m_rows, r_rows = [], []
    for a in cfg.exponents.alpha:
        rep = malpha_report(estimates, times, a, cfg.exponents.q[0])
        for i, t in enumerate(times):
            for s in range(mc.n_scenarios):
                m_rows.append((s, t, a, rep.values[i, s]))
    for e in sets:
        for s, ps in enumerate(paths):
            for t in times:
                mean, se = ratio_moment(ps, p, e, t)
                r_rows.append((s, t, e.alpha, e.q, e.r_tilde, mean, se))
    return [Table("malpha.csv", ["scenario", "t[yr]", "alpha[1]", "M_alpha[variance^(alpha-1)]"], m_rows),
            Table("ratio_moment.csv", ["scenario", "t[yr]", "alpha[1]", "q[1]", "r_tilde[1]",
                                       "ratio_moment[1]", "stderr[1]"], r_rows)]


def cmd_verify_delta(cfg, threads):
    grid = cfg.grid.spec()
    spec = MollifierSpec(cfg.exponents.epsilon, "sqrt")
    delta = cfg.exponents.delta

    def one(s):
        acc = DeltaAccumulator(cfg.model, grid, spec, delta, cfg.rho)
        _, f = _solve(cfg, s, record_every=cfg.grid.n_steps, callback=acc)
        return acc.result(f.u[-1])

    res = combine_delta(_map(one, range(cfg.monte_carlo.n_scenarios), threads), delta, spec.epsilon)
    names = ["initial", "lhs", *res.terms(), "stoch_w0", "stoch_b0", "residual_pathwise"]
    per = [Table("delta_scenarios.csv", ["scenario", *(f"{n}[1]" for n in names)],
                 [(s, *(res.per_scenario[n][s] for n in names)) for s in range(res.n_scenarios)])]
    summary = [(k, v) for k, v in res.to_row().items()]
    summary += [("relative_residual_pathwise", res.relative_pathwise_residual()),
                ("relative_residual_expectation", res.relative_expectation_residual())]
    return [Table("delta_terms.csv", ["quantity", "value[1]"], summary), *per]


def cmd_report(cfg, threads):
    p, mc = cfg.model, cfg.monte_carlo
    grid = cfg.grid.spec()
    x_law, s_law = _laws(cfg)

    def one(s):
        noise, f = _solve(cfg, s)
        traj = simulate_pool(p, noise, mc.n_particles, x_law, s_law)
        emp = empirical_density_2d(traj.final, grid)
        norms = [weighted_norms(f, a) for a in cfg.exponents.alpha]
        return norms, compare_particle_grid(emp, f), f.mass_curve[-1], traj.final.alive_fraction

    rows, cmp_rows = [], []
    for s, (norms, dist, mass, alive) in enumerate(_map(one, range(mc.n_scenarios), threads)):
        for n in norms:
            rows.append((s, n.alpha, n.L_alpha, n.H_alpha, n.uy_norm_alpha, n.boundary_ratio()))
        cmp_rows.append((s, dist, mass, alive))
    return [Table("norms.csv", ["scenario", "alpha[1]", "L_alpha[1]", "H_alpha[1]", "uy_norm_alpha[1]",
                                "boundary_ratio[1]"], rows),
            Table("comparison.csv", ["scenario", "sup_cdf_distance[1]", "grid_mass[fraction]",
                                     "alive_fraction[fraction]"], cmp_rows)]


COMMANDS = {"validate": cmd_validate, "simulate-pool": cmd_simulate_pool, "solve-spde": cmd_solve_spde,
            "density-bounds": cmd_density_bounds, "verify-delta": cmd_verify_delta, "report": cmd_report}


# -- driver -----------------------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _manifest(sub, cfg, report, exps, status, outputs, started, error=None) -> dict:
    return {
        "subcommand": sub,
        "status": status,
        "config": cfg.to_dict() if cfg is not None else None,
        "xstar": XSTAR,
        "validation": None if report is None else {
            "passed": report.passed,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in report.checks]},
        "exponents": [asdict(e) for e in exps],
        "version": {"lpsv": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                    "python": sys.version.split()[0]},
        "choices": {
            "initial_law": {"x0": "lognorm(s=0.25, loc=0.2, scale=0.8)",
                            "sigma0": None if cfg is None else cfg.initial_law.sigma0},
            "y0_boundary": "no condition imposed; zero flux through y=0 face, flux monitored",
        },
        "wall_clock_s": time.perf_counter() - started,
        "outputs": outputs,
        "error": error,
    }


def run(sub: str, config_path, out=None, seed=None, scenarios=None, threads=1, stdout=None) -> int:
    """Run one subcommand; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    started = time.perf_counter()
    cfg = report = None
    exps = []
    out_dir = Path(out) if out is not None else None

    def fail(code, kind, message):
        record = {"status": "failed", "exit_code": code, "error": kind, "message": message}
        print(json.dumps(record), file=sys.stderr)
        if out_dir is not None:
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                man = _manifest(sub, cfg, report, exps, "failed", {}, started, record)
                (out_dir / "manifest.json").write_text(json.dumps(man, indent=2, default=str) + "\n")
            except OSError:
                pass
        return code

    try:
        if sub not in COMMANDS:
            raise ConfigError(f"unknown subcommand {sub!r}")
        cfg = load_config(config_path)
        if seed is not None:
            cfg.monte_carlo.base_seed = int(seed)
        if scenarios is not None:
            cfg.monte_carlo.n_scenarios = int(scenarios)
        cfg.check()
        if threads is None or threads < 1:
            raise ConfigError("--threads must be positive")
    except ConfigError as exc:
        return fail(EXIT_CONFIG, "config", str(exc))
    out_dir = Path(out) if out is not None else Path(cfg.output.dir)

    report = validate_params(cfg.model)
    if sub == "validate":
        print(str(report), file=stdout)
        print(f"x* = {XSTAR:.15g}; k*theta/xi^2 = {report.ratio:.15g}", file=stdout)
    if not report.passed:
        return fail(EXIT_VALIDATION, "validation", "; ".join(report.failures))
    try:
        exps = _exponent_sets(cfg)
        tables = COMMANDS[sub](cfg, threads)
    except ValidationFailure as exc:
        return fail(EXIT_VALIDATION, "validation", str(exc))
    except ArithmeticError as exc:
        return fail(EXIT_NUMERICAL, type(exc).__name__, str(exc))
    except ValueError as exc:
        return fail(EXIT_NUMERICAL, type(exc).__name__, str(exc))

    written, outputs = [], {}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for tab in tables:
            data = tab.render()
            path = out_dir / tab.name
            path.write_bytes(data)
            written.append(path)
            outputs[tab.name] = _sha256(data)
        man = _manifest(sub, cfg, report, exps, "ok", outputs, started)
        (out_dir / "manifest.json").write_text(json.dumps(man, indent=2, default=str) + "\n")
    except OSError as exc:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        return fail(EXIT_CONFIG, "io", str(exc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpsv", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="base seed (overrides monte_carlo.base_seed)")
    ap.add_argument("--scenarios", type=int, help="number of common-noise scenarios")
    ap.add_argument("--threads", type=int, default=1, help="worker threads over scenarios")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return run(args.subcommand, args.config, out=args.out, seed=args.seed, scenarios=args.scenarios,
               threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
