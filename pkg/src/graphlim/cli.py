"""``graphlim`` command-line front end.

Every command reads a JSON config and writes CSV/JSON artifacts into ``--out``.
Diagnostics go to standard error as JSON lines.  Exit codes: 0 success,
1 invalid config, 2 solver failure (abort, divergence or failed validation).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .continuum_solver import PicardConfig, PicardDivergence, picard_solve
from .convergence_harness import StudyConfig, run_study
from .discrete_system import (DiscreteState, SolverAbort, discrete_assumption_check, integrate,
                              write_series_csv)
from .expressions import ExpressionError, compile_expression
from .grid import DEFAULT_ORDER, Graphon, UnitGrid, cell_average_1d, cell_average_2d
from .model_defs import ModelSpec, check_assumptions, hnp_model, kuramoto_adaptive, opinion_model

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("graphlim")


class ConfigError(ValueError):
    """Invalid config; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# -- diagnostics -------------------------------------------------------------------

class _JsonLines(logging.Formatter):
    def format(self, record):
        doc = {"level": record.levelname.lower(), "message": record.getMessage()}
        doc.update(getattr(record, "fields", {}))
        return json.dumps(doc, sort_keys=True, default=str)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("graphlim")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False
    logging.captureWarnings(True)
    pyw = logging.getLogger("py.warnings")
    pyw.handlers[:] = [handler]
    pyw.propagate = False


def _emit(level: int, message: str, **fields) -> None:
    log.log(level, message, extra={"fields": fields})


# -- config parsing ----------------------------------------------------------------

def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _key_before(text: str, pos: int) -> str | None:
    keys = re.findall(r'"([^"\\]+)"\s*:', text[:pos])
    return keys[-1] if keys else None


def load_config(path) -> tuple[dict, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        key = _key_before(text, exc.pos)
        where = f" near key '{key}'" if key else ""
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}{where}: "
                          f"{exc.msg}", key) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc, config_hash(doc)


def _reject_constant(name):
    raise ConfigError(f"non-finite literal {name} is not allowed")


class _Section:
    """Typed reads from one JSON object; every key must be consumed."""

    def __init__(self, doc, path: str):
        if not isinstance(doc, dict):
            raise ConfigError(f"'{path}' must be an object", path)
        self.doc = doc
        self.path = path
        self.used: set[str] = set()

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, default=..., kind=float):
        self.used.add(key)
        if key not in self.doc:
            if default is ...:
                raise ConfigError(f"missing required key '{self._name(key)}'", self._name(key))
            return default
        value = self.doc[key]
        if value is None and default is None:
            return None
        return _coerce(value, kind, self._name(key))

    def sub(self, key, required=True):
        self.used.add(key)
        if key not in self.doc:
            if required:
                raise ConfigError(f"missing required key '{self._name(key)}'", self._name(key))
            return None
        return _Section(self.doc[key], self._name(key))

    def finish(self):
        extra = sorted(set(self.doc) - self.used)
        if extra:
            name = self._name(extra[0])
            raise ConfigError(f"unknown key '{name}'", name)


def _coerce(value, kind, name):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"'{name}' must be a finite number", name)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{name}' must be an integer", name)
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{name}' must be a string", name)
        return value
    if kind == "int_list":
        if not isinstance(value, list) or not value or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"'{name}' must be a nonempty list of integers", name)
        return list(value)
    if kind == "float_list":
        if not isinstance(value, list) or not value:
            raise ConfigError(f"'{name}' must be a nonempty list of numbers", name)
        return [_coerce(v, float, f"{name}[{i}]") for i, v in enumerate(value)]
    raise TypeError(kind)


def _expr(section: _Section, variables, *, constants=()):
    src = section.get("expr", kind=str)
    try:
        func = compile_expression(src, variables)
    except ExpressionError as exc:
        raise ConfigError(f"'{section.path}.expr': {exc}", f"{section.path}.expr") from exc
    values = {c: section.get(c) for c in constants}
    section.finish()
    return func, values


def _positive_int(section: _Section, key, default=...):
    v = section.get(key, default, kind=int)
    if v is not None and v < 1:
        raise ConfigError(f"'{section._name(key)}' must be a positive integer", section._name(key))
    return v


def build_model(sec: _Section) -> ModelSpec:
    name = sec.get("model", kind=str)
    try:
        if name == "kuramoto_adaptive":
            m = kuramoto_adaptive(sec.get("omega"), sec.get("alpha"), sec.get("beta"),
                                  sec.get("epsilon"))
        elif name == "hnp":
            Gamma, gc = _expr(sec.sub("Gamma"), ["s"], constants=("bound", "lipschitz"))
            coupling_sec = sec.sub("coupling", required=False)
            if coupling_sec is None:
                coupling, cc = (lambda t, s: np.sin(s)), {"bound": 1.0, "lipschitz": 1.0}
            else:
                coupling, cc = _expr(coupling_sec, ["t", "s"], constants=("bound", "lipschitz"))
            m = hnp_model(Gamma, sec.get("gamma"), sec.get("omega", kind="float_list"),
                          coupling, Gamma_bound=gc["bound"], Gamma_lipschitz=gc["lipschitz"],
                          coupling_bound=cc["bound"], coupling_lipschitz=cc["lipschitz"])
        elif name == "opinion":
            psi, pc = _expr(sec.sub("psi"), ["s"], constants=("bound", "lipschitz"))
            Psi_expr, Pc = _expr(sec.sub("Psi"), ["t", "y", "u", "m"],
                                 constants=("bound", "lipschitz"))

            def Psi(t, y, u, mfield):
                return Psi_expr(t, y, u(y)[..., 0], mfield(y)[..., 0])

            m = opinion_model(lambda s: psi(s), Psi, d=1,
                              psi_bound=pc["bound"], psi_lipschitz=pc["lipschitz"],
                              Psi_bound=Pc["bound"], Psi_lipschitz=Pc["lipschitz"])
        else:
            raise ConfigError(f"unknown model '{name}'", f"{sec.path}.model")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"'{sec.path}': {exc}", sec.path) from exc
    sec.finish()
    return m


def _initial_data(doc: _Section):
    u0_func, _ = _expr(doc.sub("u0"), ["x"])
    W_func, wc = _expr(doc.sub("W"), ["x", "y"], constants=("bound",))
    try:
        W = Graphon(W_func, bound=wc["bound"])
    except ValueError as exc:
        raise ConfigError(f"'W': {exc}", "W") from exc
    return u0_func, W


def _check_version(doc: _Section):
    v = doc.get("schema_version", kind=int)
    if v != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                          "schema_version")


def _project(u0, W, N: int, q: int):
    try:
        return cell_average_1d(u0, N, q), cell_average_2d(W, N, q)
    except ValueError as exc:
        raise ConfigError(f"initial data: {exc}", "W" if "raphon" in str(exc) else "u0") from exc


@dataclass(frozen=True)
class RunContext:
    config: dict
    config_hash: str
    out: Path
    threads: int


def _manifest(ctx: RunContext, command: str, m: ModelSpec, **extra) -> dict:
    from . import __version__
    doc = {"command": command, "schema_version": SCHEMA_VERSION, "config_hash": ctx.config_hash,
           "graphlim_version": __version__, "model": m.name, "model_params": m.params,
           "constants": m.constants, "config": ctx.config}
    doc.update(extra)
    return doc


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True, default=_jsonable)
                    + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- commands ----------------------------------------------------------------------

def cmd_simulate(ctx: RunContext) -> int:
    doc = _Section(ctx.config, "")
    _check_version(doc)
    m = build_model(doc.sub("model"))
    u0, W = _initial_data(doc)
    N = _positive_int(doc, "N")
    T, dt = doc.get("T"), doc.get("dt")
    store_every = _positive_int(doc, "store_every", 1)
    q = _positive_int(doc, "q", DEFAULT_ORDER)
    doc.finish()
    if not (T > 0 and dt > 0):
        raise ConfigError("'T' and 'dt' must be positive", "T" if not T > 0 else "dt")
    s0 = DiscreteState(0.0, *_project(u0, W, N, q))
    try:
        traj = integrate(m, s0, T, dt, store_every=store_every, q=q)
    except SolverAbort as exc:
        traj = exc.trajectory
        traj.write_csv(ctx.out)
        _write_json(ctx.out / "manifest.json",
                    _manifest(ctx, "simulate", m, **traj.manifest(), status="aborted",
                              diagnostic=exc.diagnostic,
                              last_finite_time=exc.diagnostic.get("last_finite_time")))
        _emit(logging.ERROR, str(exc), event="solver_abort", **exc.diagnostic)
        return EXIT_SOLVER
    traj.write_csv(ctx.out)
    _write_json(ctx.out / "manifest.json",
                _manifest(ctx, "simulate", m, **traj.manifest(), status="ok",
                          monitors_ok=traj.monitors_ok))
    _emit(logging.INFO, "simulation finished", event="done", N=N, n_stored=len(traj))
    return EXIT_OK


def cmd_picard(ctx: RunContext) -> int:
    doc = _Section(ctx.config, "")
    _check_version(doc)
    m = build_model(doc.sub("model"))
    u0, W = _initial_data(doc)
    M = _positive_int(doc, "M")
    T = doc.get("T")
    q = _positive_int(doc, "q", DEFAULT_ORDER)
    kw = {"max_iters": doc.get("max_iters", 50, kind=int),
          "tol_L2": doc.get("tol_L2", 1e-10),
          "T_star": doc.get("T_star", None),
          "time_quadrature": doc.get("time_quadrature", 9, kind=int)}
    doc.finish()
    try:
        cfg = PicardConfig(t0=0.0, T=T, **kw)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in kw if k in msg), None)
        raise ConfigError(msg, key) from exc
    u0_N, K0_N = _project(u0, W, M, q)
    try:
        sol = picard_solve(m, u0_N, K0_N, T, cfg, q=q)
    except PicardDivergence as exc:
        _write_json(ctx.out / "manifest.json",
                    _manifest(ctx, "picard", m, M=M, status="diverged",
                              diagnostic=exc.diagnostics))
        _emit(logging.ERROR, str(exc), event="picard_divergence", t0=exc.diagnostics.get("t0"))
        return EXIT_SOLVER
    write_series_csv(ctx.out, sol.times, sol.u, sol.K)
    _write_json(ctx.out / "picard_windows.json", [w.to_dict() for w in sol.windows])
    for w in sol.windows:
        if not w.converged:
            _emit(logging.WARNING, "Picard window reached max_iters", event="not_converged",
                  t0=w.t0, last_increment=w.increments[-1])
    _write_json(ctx.out / "manifest.json",
                _manifest(ctx, "picard", m, M=M, T=T, T_star_formula=sol.T_star_formula,
                          n_windows=len(sol.windows), converged=sol.converged,
                          status="ok"))
    return EXIT_OK


def cmd_converge(ctx: RunContext) -> int:
    doc = _Section(ctx.config, "")
    _check_version(doc)
    m = build_model(doc.sub("model"))
    u0, W = _initial_data(doc)
    kw = {"N_list": doc.get("N_list", kind="int_list"),
          "M_ref": _positive_int(doc, "M_ref"),
          "T": doc.get("T"), "dt": doc.get("dt"),
          "q": _positive_int(doc, "q", DEFAULT_ORDER),
          "store_every": _positive_int(doc, "store_every", 50),
          "seed": doc.get("seed", 0, kind=int)}
    doc.finish()
    try:
        cfg = StudyConfig(model=m, W=W, u0=u0, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc), next((k for k in kw if k in str(exc)), None)) from exc
    report = run_study(cfg, threads=ctx.threads)
    report.to_csv(ctx.out / "report.csv")
    summary = report.summary(ctx.config_hash)
    _write_json(ctx.out / "summary.json", summary)
    _write_json(ctx.out / "manifest.json",
                _manifest(ctx, "converge", m, N_list=list(cfg.N_list), M_ref=cfg.M_ref,
                          status="ok"))
    for row in report.rows:
        if not row.converged:
            _emit(logging.WARNING, f"run N={row.N} failed", event="run_failed", N=row.N,
                  detail=row.message)
    return EXIT_OK


def cmd_validate(ctx: RunContext) -> int:
    doc = _Section(ctx.config, "")
    _check_version(doc)
    m = build_model(doc.sub("model"))
    n_samples = _positive_int(doc, "n_samples", 10_000)
    seed = doc.get("seed", 0, kind=int)
    N = _positive_int(doc, "N", 8)
    discrete_samples = _positive_int(doc, "discrete_samples", 100)
    q = _positive_int(doc, "q", DEFAULT_ORDER)
    doc.finish()
    cont = check_assumptions(m, n_samples=n_samples, seed=seed, q=q)
    disc = discrete_assumption_check(m, UnitGrid(N), n_samples=discrete_samples, seed=seed, q=q)
    passed = cont.passed and disc.passed
    _write_json(ctx.out / "validate.json",
                {"passed": passed, "continuum": cont.to_dict(), "discrete": disc.to_dict()})
    _write_json(ctx.out / "manifest.json", _manifest(ctx, "validate", m, passed=passed,
                                                     status="ok" if passed else "failed"))
    if not passed:
        _emit(logging.ERROR, "assumption checks failed", event="validation_failed",
              continuum=cont.failures, discrete=disc.failures)
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "picard": cmd_picard,
            "converge": cmd_converge, "validate": cmd_validate}


def _threads(arg: int | None) -> int:
    if arg is not None:
        value, source = arg, "--threads"
    else:
        env = os.environ.get("GRAPHLIM_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"GRAPHLIM_THREADS must be an integer, got {env!r}",
                              "GRAPHLIM_THREADS") from None
        source = "GRAPHLIM_THREADS"
    if value < 1:
        raise ConfigError(f"{source} must be at least 1", source)
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphlim",
                                description="Simulate adaptive network particle systems and "
                                            "their graphon limits.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: $GRAPHLIM_THREADS or 1)")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        threads = _threads(args.threads)
        config, digest = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(config=config, config_hash=digest, out=out, threads=threads)
        return COMMANDS[args.command](ctx)
    except ConfigError as exc:
        _emit(logging.ERROR, str(exc), event="config_error", key=exc.key)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
