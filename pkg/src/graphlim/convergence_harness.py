"""Finite-N versus continuum error studies.

For each ``N`` the particle system is started from cell averages of the
analytic initial data and compared with a fine method-of-lines reference at
``M_ref`` cells (``N | M_ref``, compared exactly on the fine grid).  Alongside
the measured error ``e(N) = sup_t |u^N - u|^2 + |K^N - K|^2`` the study
computes the discretisation residuals of ``f`` and ``Lambda`` and the
Gronwall-type bound they feed.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .continuum_solver import mol_solve
from .discrete_system import DiscreteState, SolverAbort, Trajectory, integrate
from .grid import (DEFAULT_ORDER, Graphon, StepFunction1D, StepFunction2D,
                   _fmt, cell_average_1d, cell_average_2d, l2_distance_1d, l2_distance_2d)
from .model_defs import ModelSpec

log = logging.getLogger(__name__)

ENVELOPE_SLACK = 1.05


@dataclass(frozen=True)
class StudyConfig:
    model: ModelSpec
    W: Graphon
    u0: Callable
    N_list: Sequence[int] = (4, 8, 16, 32, 64, 128)
    M_ref: int = 512
    T: float = 1.0
    dt: float = 1e-3
    q: int = DEFAULT_ORDER
    store_every: int = 50
    seed: int = 0

    def __post_init__(self):
        Ns = tuple(int(n) for n in self.N_list)
        if not Ns or any(n < 1 for n in Ns):
            raise ValueError("N_list must contain positive integers")
        object.__setattr__(self, "N_list", Ns)
        bad = [n for n in Ns if self.M_ref % n]
        if bad:
            raise ValueError(f"M_ref={self.M_ref} is not divisible by N in {bad}")
        if self.M_ref < 4 * max(Ns):
            raise ValueError(f"M_ref={self.M_ref} must be at least 4 * max(N) = {4 * max(Ns)}")
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class StudyRow:
    N: int
    e_sup: float
    err_u0: float
    err_K0: float
    residual_integral: float
    envelope: float
    converged: bool
    error_series: Optional[np.ndarray] = field(default=None, repr=False)
    message: str = ""
    monitors_ok: bool = True


CSV_COLUMNS = ("N", "e_sup", "err_u0", "err_K0", "residual_integral", "envelope", "converged")


@dataclass
class ConvergenceReport:
    rows: list
    times: np.ndarray
    fit: Optional[RateFit]
    K_sup_integral: float
    reference_monitors_ok: bool = True

    def _ok_rows(self):
        return [r for r in self.rows if r.converged]

    @property
    def strictly_decreasing(self) -> bool:
        e = [r.e_sup for r in self._ok_rows()]
        return all(b < a for a, b in zip(e, e[1:]))

    @property
    def reduction(self) -> float:
        """``e(N_max) / e(N_min)`` over the converged runs."""
        ok = self._ok_rows()
        return ok[-1].e_sup / ok[0].e_sup if ok and ok[0].e_sup > 0 else math.nan

    @property
    def envelope_dominates(self) -> bool:
        return all(r.e_sup <= r.envelope * ENVELOPE_SLACK for r in self._ok_rows())

    def to_csv(self, path) -> None:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([str(r.N), _fmt(r.e_sup), _fmt(r.err_u0), _fmt(r.err_K0),
                                   _fmt(r.residual_integral), _fmt(r.envelope),
                                   "true" if r.converged else "false"]))
        Path(path).write_text("\n".join(lines) + "\n")

    def summary(self, config_hash: str | None = None) -> dict:
        fit = self.fit
        return {
            "slope": fit.slope if fit else None,
            "intercept": fit.intercept if fit else None,
            "r2": fit.r2 if fit else None,
            "config_hash": config_hash,
            "strictly_decreasing": self.strictly_decreasing,
            "reduction": self.reduction,
            "envelope_dominates": self.envelope_dominates,
            "reference_monitors_ok": self.reference_monitors_ok,
            "particle_monitors_ok": all(r.monitors_ok for r in self.rows),
            "failed_N": [r.N for r in self.rows if not r.converged],
        }


def gronwall_envelope(constants: dict, initial_error: float, residual_integral: float,
                      T: float, K_sup_integral: float) -> float:
    """Uniform-in-time bound on ``|u^N - u|^2 + |K^N - K|^2`` over ``[0, T]``.

    ``(initial_error + residual_integral) * exp(4 L_g int_0^T |K|_inf ds
    + (2 L_f + 3 L_Lambda + B_g + 1) T)``, where ``initial_error`` is the sum of
    the squared initial L2 errors of ``u`` and ``K``.
    """
    for name, v in (("initial_error", initial_error), ("residual_integral", residual_integral),
                    ("T", T), ("K_sup_integral", K_sup_integral)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    c = constants
    exponent = (4.0 * c["L_g"] * K_sup_integral
                + (2.0 * c["L_f"] + 3.0 * c["L_Lambda"] + c["B_g"] + 1.0) * T)
    return (initial_error + residual_integral) * math.exp(exponent)


def fit_rate(errors) -> Optional[RateFit]:
    """Least-squares line through ``(log N, log sqrt(e))``; ``None`` with fewer than 3 usable points."""
    pts = [(float(n), float(e)) for n, e in errors]
    usable = [(n, e) for n, e in pts if e > 0 and math.isfinite(e)]
    if len(usable) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(usable)} nonpositive error values from the fit")
    if len(usable) < 3:
        warnings.warn("fewer than 3 usable points; no rate fitted")
        return None
    x = np.log([n for n, _ in usable])
    y = 0.5 * np.log([e for _, e in usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)


# -- residuals -----------------------------------------------------------------
#
# The residual of an N-cell average against the pointwise field splits into a
# within-reference-cell part and a between-cell part (the two are orthogonal),
# so each stored time keeps only the reference-cell means and one scalar.

@dataclass(frozen=True)
class _FieldSample:
    forcing_means: np.ndarray   # (M, d)
    forcing_within: float       # int |f - reference-cell mean|^2
    weight_means: np.ndarray    # (M, M)
    weight_within: float


def _sample_forcing(m: ModelSpec, t, u: StepFunction1D, q: int):
    grid = u.grid
    if not m.f.explicit_position:
        vals = np.asarray(m.f.eval(t, grid.centers, u), dtype=float)
        return np.broadcast_to(vals, (grid.N, m.d)), 0.0
    pts, w = grid.quadrature_points(q)
    vals = np.broadcast_to(np.asarray(m.f.eval(t, pts, u), dtype=float), pts.shape + (m.d,))
    means = np.einsum("mpd,p->md", vals, w)
    within = float(np.einsum("mpd,p->", (vals - means[:, None, :]) ** 2, w)) / grid.N
    return means, within


def _sample_weight_law(m: ModelSpec, t, K: StepFunction2D, u: StepFunction1D, q: int):
    grid = K.grid
    M = grid.N
    if not m.lam.explicit_position:
        c = grid.centers
        vals = np.asarray(m.lam.eval(t, c[:, None], c[None, :], K, u), dtype=float)
        return np.broadcast_to(vals, (M, M)), 0.0
    pts, w = grid.quadrature_points(q)
    vals = m.lam.eval(t, pts[:, :, None, None], pts[None, None, :, :], K, u)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (M, q, M, q))
    means = np.einsum("aibj,i,j->ab", vals, w, w)
    within = float(np.einsum("aibj,i,j->", (vals - means[:, None, :, None]) ** 2, w, w)) / M**2
    return means, within


def _between_sq_1d(means: np.ndarray, N: int) -> float:
    M, d = means.shape
    r = M // N
    coarse = means.reshape(N, r, d).mean(axis=1)
    return float(np.sum((means - np.repeat(coarse, r, axis=0)) ** 2)) / M


def _between_sq_2d(means: np.ndarray, N: int) -> float:
    M = means.shape[0]
    r = M // N
    coarse = means.reshape(N, r, N, r).mean(axis=(1, 3))
    up = np.repeat(np.repeat(coarse, r, axis=0), r, axis=1)
    return float(np.sum((means - up) ** 2)) / M**2


def _reference_samples(m: ModelSpec, reference: Trajectory, q: int) -> list:
    out = []
    grid = reference.grid
    for i, t in enumerate(reference.times):
        u = StepFunction1D.wrap(grid, reference.u[i])
        K = StepFunction2D.wrap(grid, reference.K[i])
        fm, fw = _sample_forcing(m, t, u, q)
        lm, lw = _sample_weight_law(m, t, K, u, q)
        out.append(_FieldSample(fm, fw, lm, lw))
    return out


def residuals(m: ModelSpec, reference: Trajectory, N: int, q: int = DEFAULT_ORDER,
              _samples: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(|r_N(t)|_L2, |R_N(t)|_L2)`` at the reference's stored times.

    ``r_N`` is the deviation of the ``N``-cell average of ``f(t, ., u)`` from
    ``f(t, x, u)`` itself, ``R_N`` the same for ``Lambda``, both taken along
    the reference solution and integrated by Gauss quadrature of order ``q``
    on each reference cell.
    """
    M = reference.N
    if M % N:
        raise ValueError(f"N={N} does not divide the reference resolution {M}")
    samples = _samples if _samples is not None else _reference_samples(m, reference, q)
    r = np.array([math.sqrt(s.forcing_within + _between_sq_1d(s.forcing_means, N))
                  for s in samples])
    R = np.array([math.sqrt(s.weight_within + _between_sq_2d(s.weight_means, N))
                  for s in samples])
    return r, R


# -- study -----------------------------------------------------------------------

def _error_series(traj: Trajectory, ref: Trajectory) -> np.ndarray:
    r = ref.N // traj.N
    out = np.empty(len(ref.times))
    for i in range(len(ref.times)):
        du = np.repeat(traj.u[i], r, axis=0) - ref.u[i]
        dK = np.repeat(np.repeat(traj.K[i], r, axis=0), r, axis=1) - ref.K[i]
        out[i] = float(np.sum(du**2)) / ref.N + float(np.sum(dK**2)) / ref.N**2
    return out


def _run_one(cfg: StudyConfig, N: int, ref: Trajectory, samples, K_sup_integral: float) -> StudyRow:
    m = cfg.model
    u_N = cell_average_1d(cfg.u0, N, cfg.q)
    K_N = cell_average_2d(cfg.W, N, cfg.q)
    err_u0 = l2_distance_1d(u_N, cfg.u0, cfg.q)
    err_K0 = l2_distance_2d(K_N, cfg.W, cfg.q)
    r, R = residuals(m, ref, N, cfg.q, _samples=samples)
    res_int = float(trapezoid(r**2 + R**2, ref.times))
    env = gronwall_envelope(m.constants, err_u0**2 + err_K0**2, res_int, cfg.T, K_sup_integral)
    try:
        traj = integrate(m, DiscreteState(0.0, u_N, K_N), cfg.T, cfg.dt,
                         store_every=cfg.store_every, q=cfg.q)
    except SolverAbort as exc:
        log.warning("run N=%d aborted: %s", N, exc)
        return StudyRow(N, math.nan, err_u0, err_K0, res_int, env, False, message=str(exc))
    series = _error_series(traj, ref)
    return StudyRow(N, float(np.max(series)), err_u0, err_K0, res_int, env, True,
                    error_series=series, monitors_ok=traj.monitors_ok)


def run_study(cfg: StudyConfig, threads: int = 1) -> ConvergenceReport:
    """Run every ``N`` of ``cfg`` against the ``M_ref`` reference.

    Independent ``N`` runs are spread over ``threads`` workers; results are
    assembled in ``N_list`` order and do not depend on the worker count.
    """
    m = cfg.model
    u_ref0 = cell_average_1d(cfg.u0, cfg.M_ref, cfg.q)
    K_ref0 = cell_average_2d(cfg.W, cfg.M_ref, cfg.q)
    log.info("reference solve at M=%d", cfg.M_ref)
    ref = mol_solve(m, u_ref0, K_ref0, cfg.T, cfg.dt, store_every=cfg.store_every, q=cfg.q)
    K_sup = np.max(np.abs(ref.K), axis=(1, 2))
    K_sup_integral = float(trapezoid(K_sup, ref.times))
    samples = _reference_samples(m, ref, cfg.q)

    def job(N):
        log.info("particle run N=%d", N)
        return _run_one(cfg, N, ref, samples, K_sup_integral)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, cfg.N_list))
    else:
        rows = [job(N) for N in cfg.N_list]
    fit = fit_rate([(r.N, r.e_sup) for r in rows if r.converged])
    return ConvergenceReport(rows=rows, times=ref.times, fit=fit,
                             K_sup_integral=K_sup_integral,
                             reference_monitors_ok=ref.monitors_ok)
