"""Continuum limit solvers: windowed Picard iteration and a method-of-lines reference.

Both solvers work on step-function data over ``M`` spatial cells.  Picard
iterates the integral operator

    A1[u, K](t) = u_t0 + int_t0^t ( int_I K g dy + f ) ds
    A2[u, K](t) = K_t0 + int_t0^t Lambda ds

on windows short enough for the operator to contract in ``C(window, L2)``;
the method of lines integrates the same semi-discrete system with RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson as _scipy_cumulative_simpson

from .discrete_system import DiscreteState, Trajectory, _rhs_arrays, integrate
from .envelopes import AprioriEnvelope, apriori_envelope, iterate_partial_sum
from .grid import DEFAULT_ORDER, StepFunction1D, StepFunction2D, UnitGrid
from .model_defs import ModelSpec

__all__ = [
    "AprioriEnvelope", "ContinuumSolution", "PicardConfig", "PicardDivergence",
    "PicardWindow", "apply_A", "apriori_envelope", "contraction_window",
    "cumulative_simpson", "mol_solve", "picard_solve",
]

BOUND_TOL = 1e-6


class PicardDivergence(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def cumulative_simpson(values: np.ndarray, h: float) -> np.ndarray:
    """Running integrals ``int_{t_0}^{t_j}`` of samples on uniform nodes (axis 0).

    Needs an odd number (>= 3) of nodes so that every window is a whole
    number of Simpson panels and chained windows reproduce one long window.
    """
    n = values.shape[0]
    if n < 3 or n % 2 == 0:
        raise ValueError(f"need an odd number >= 3 of time nodes, got {n}")
    return _scipy_cumulative_simpson(values, dx=h, axis=0, initial=0.0)


def contraction_window(m: ModelSpec, K0_sup: float, T: float) -> float:
    """Window length on which the integral operator contracts with factor 1/2.

    ``1 / (2 (2^{5/2} L_g (1 + |K_0|) e^{B_Lambda T} + L_f + sqrt(2) B_g + L_Lambda))``;
    returns ``T`` when every constant vanishes.
    """
    c = m.constants
    denom = 2.0 * (2.0**2.5 * c["L_g"] * (1.0 + K0_sup) * math.exp(c["B_Lambda"] * T)
                   + c["L_f"] + math.sqrt(2.0) * c["B_g"] + c["L_Lambda"])
    if not math.isfinite(denom):
        raise ValueError("contraction window constants must be finite")
    if denom == 0.0:
        return float(T)
    return 1.0 / denom


@dataclass(frozen=True)
class PicardConfig:
    t0: float = 0.0
    T: float = 1.0
    T_star: Optional[float] = None
    max_iters: int = 50
    tol_L2: float = 1e-10
    time_quadrature: int = 9

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol_L2 > 0:
            raise ValueError(f"tol_L2 must be positive, got {self.tol_L2}")
        n = self.time_quadrature
        if int(n) != n or n < 3 or n % 2 == 0:
            raise ValueError(f"time_quadrature must be an odd integer >= 3, got {n}")
        if not 0 <= self.t0 < self.T:
            raise ValueError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if self.T_star is not None and not 0 < self.T_star:
            raise ValueError(f"T_star must be positive, got {self.T_star}")


def _l2_1d(a: np.ndarray) -> np.ndarray:
    """Per-node L2(I) norms of ``(n_t, M, d)`` samples."""
    return np.sqrt(np.sum(a**2, axis=(1, 2)) / a.shape[1])


def _l2_2d(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(a**2, axis=(1, 2))) / a.shape[1]


def apply_A(m: ModelSpec, times: np.ndarray, u: np.ndarray, K: np.ndarray,
            u_t0: np.ndarray, K_t0: np.ndarray, q: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """One application of the integral operator on window samples.

    ``u``/``K`` hold the fields at the uniform ``times`` (shapes ``(n_t, M, d)``
    and ``(n_t, M, M)``); ``u_t0``/``K_t0`` are the window's initial data.  The
    inner ``y`` integral is the exact cell sum on step functions, time
    integrals use :func:`cumulative_simpson`.
    """
    times = np.asarray(times, dtype=float)
    n_t, M = u.shape[0], u.shape[1]
    if K.shape != (n_t, M, M) or u_t0.shape != u.shape[1:] or K_t0.shape != K.shape[1:]:
        raise ValueError("window data must share the spatial grid and time nodes")
    h = float(times[1] - times[0])
    if not np.allclose(np.diff(times), h, rtol=1e-9, atol=1e-15):
        raise ValueError("time nodes must be uniform")
    grid = UnitGrid(M)
    du = np.empty_like(u)
    dK = np.empty_like(K)
    for j, t in enumerate(times):
        du[j], dK[j] = _rhs_arrays(m, float(t), grid, u[j], K[j], q)
    new_u = u_t0[None] + cumulative_simpson(du, h)
    new_K = K_t0[None] + cumulative_simpson(dK, h)
    if not (np.all(np.isfinite(new_u)) and np.all(np.isfinite(new_K))):
        raise ValueError("operator produced non-finite values")
    return new_u, new_K


@dataclass
class PicardWindow:
    """Diagnostics and final iterate of one Picard window."""

    t0: float
    T_star: float
    times: np.ndarray
    u: np.ndarray
    K: np.ndarray
    iterations: int
    increments: list
    contraction_factors: list
    converged: bool
    admissible_start: bool
    iterates_admissible: bool
    iterate_bound_ratio: float
    J_sup: np.ndarray = field(repr=False)
    v_sup: np.ndarray = field(repr=False)
    iterates: Optional[list] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "t0": self.t0,
            "T_star": self.T_star,
            "iterations": self.iterations,
            "increments": list(self.increments),
            "contraction_factors": list(self.contraction_factors),
            "converged": self.converged,
            "admissible_start": self.admissible_start,
            "iterates_admissible": self.iterates_admissible,
            "iterate_bound_ratio": self.iterate_bound_ratio,
        }


@dataclass
class ContinuumSolution:
    model: ModelSpec
    times: np.ndarray
    u: np.ndarray
    K: np.ndarray
    windows: list
    T_star_formula: float

    @property
    def M(self) -> int:
        return self.u.shape[1]

    @property
    def converged(self) -> bool:
        return all(w.converged for w in self.windows)

    def state(self, i: int) -> DiscreteState:
        g = UnitGrid(self.M)
        return DiscreteState(float(self.times[i]), StepFunction1D(g, self.u[i]),
                             StepFunction2D(g, self.K[i]))


def _run_window(m, t0, length, n_nodes, u_t0, K_t0, K0_sup, T, cfg, q, keep_iterates):
    times = t0 + length * np.linspace(0.0, 1.0, n_nodes)
    tau = times - t0
    v = np.broadcast_to(u_t0, (n_nodes,) + u_t0.shape).copy()
    J = np.broadcast_to(K_t0, (n_nodes,) + K_t0.shape).copy()
    B_L = m.lam.B_Lambda
    K_t0_sup = float(np.max(np.abs(K_t0)))
    admissible_cap = (1.0 + K0_sup) * math.exp(B_L * T)
    admissible_start = 1.0 + K_t0_sup <= (1.0 + K0_sup) * math.exp(B_L * t0) * (1 + BOUND_TOL)
    noise = 1e-12 * (1.0 + float(np.max(np.abs(u_t0))) + K_t0_sup)

    J_sups = [np.max(np.abs(J), axis=(1, 2))]
    v_sups = [np.max(np.linalg.norm(v, axis=2), axis=1)]
    iterates = [(v, J)] if keep_iterates else None
    increments, factors = [], []
    above_one = 0
    converged = False
    n = 0
    while n < cfg.max_iters:
        v_new, J_new = apply_A(m, times, v, J, u_t0, K_t0, q)
        n += 1
        inc = float(np.max(_l2_1d(v_new - v)) + np.max(_l2_2d(J_new - J)))
        if increments and increments[-1] > noise:
            ratio = inc / increments[-1]
            factors.append(ratio)
            above_one = above_one + 1 if ratio > 1.0 else 0
        increments.append(inc)
        v, J = v_new, J_new
        J_sups.append(np.max(np.abs(J), axis=(1, 2)))
        v_sups.append(np.max(np.linalg.norm(v, axis=2), axis=1))
        if keep_iterates:
            iterates.append((v, J))
        if above_one >= 3:
            raise PicardDivergence(
                f"Picard iteration not contracting on window starting at t0={t0}",
                {"t0": t0, "T_star": length, "increments": increments,
                 "contraction_factors": factors},
            )
        if inc <= cfg.tol_L2:
            converged = True
            break

    J_sup = np.array(J_sups)
    bound_ratio = 0.0
    for k, row in enumerate(J_sup):
        bound = iterate_partial_sum(B_L, tau, k) * (1.0 + K_t0_sup)
        bound_ratio = max(bound_ratio, float(np.max((1.0 + row) / bound)))
    iterates_admissible = bool(np.all(1.0 + J_sup <= admissible_cap * (1 + BOUND_TOL)))
    return PicardWindow(
        t0=float(t0), T_star=float(length), times=times, u=v, K=J, iterations=n,
        increments=increments, contraction_factors=factors, converged=converged,
        admissible_start=bool(admissible_start), iterates_admissible=iterates_admissible,
        iterate_bound_ratio=bound_ratio, J_sup=J_sup, v_sup=np.array(v_sups),
        iterates=iterates,
    )


def picard_solve(m: ModelSpec, u0: StepFunction1D, K0: StepFunction2D, T: float,
                 cfg: PicardConfig | None = None, q: int = DEFAULT_ORDER,
                 keep_iterates: bool = False) -> ContinuumSolution:
    """Solve on ``[0, T]`` by chaining Picard windows of length at most ``T_star``.

    ``T_star`` defaults to :func:`contraction_window`; ``cfg.T_star`` overrides
    it.  Windows are equal-length, each sampled at ``cfg.time_quadrature``
    uniform nodes.  An unconverged window (``max_iters`` reached) is flagged
    and the last iterate is kept; three consecutive increment ratios above
    one raise :class:`PicardDivergence`.
    """
    if u0.N != K0.N:
        raise ValueError(f"grid mismatch: u0 has {u0.N} cells, K0 has {K0.N}")
    if u0.d != m.d:
        raise ValueError(f"state dimension {u0.d} does not match model dimension {m.d}")
    if cfg is None:
        cfg = PicardConfig(T=T)
    K0_sup = K0.sup_norm()
    if not math.isfinite(K0_sup):
        raise ValueError("K0 must be bounded")
    formula = contraction_window(m, K0_sup, T)
    T_star = formula if cfg.T_star is None else cfg.T_star
    n_windows = max(1, math.ceil(T / T_star - 1e-12))
    length = T / n_windows

    u_t0 = np.array(u0.values, dtype=float)
    K_t0 = np.array(K0.values, dtype=float)
    windows = []
    times, us, Ks = [], [], []
    for w in range(n_windows):
        win = _run_window(m, w * length, length, cfg.time_quadrature, u_t0, K_t0,
                          K0_sup, T, cfg, q, keep_iterates)
        windows.append(win)
        skip = 0 if w == 0 else 1
        times.append(win.times[skip:])
        us.append(win.u[skip:])
        Ks.append(win.K[skip:])
        u_t0, K_t0 = win.u[-1].copy(), win.K[-1].copy()
    return ContinuumSolution(model=m, times=np.concatenate(times), u=np.concatenate(us),
                             K=np.concatenate(Ks), windows=windows, T_star_formula=formula)


def mol_solve(m: ModelSpec, u0: StepFunction1D, K0: StepFunction2D, T: float, dt: float,
              store_every: int = 1, q: int = DEFAULT_ORDER, monitor: bool = True) -> Trajectory:
    """Method-of-lines reference: the ``M``-cell semi-discrete system integrated by RK4.

    This is :func:`graphlim.discrete_system.integrate` at ``N = M``; on
    step-function data the continuum equation and the particle system coincide.
    """
    return integrate(m, DiscreteState(0.0, u0, K0), T, dt, store_every=store_every,
                     q=q, monitor=monitor)


def fixed_point_residual(m: ModelSpec, window: PicardWindow, q: int = DEFAULT_ORDER) -> float:
    """``|A[u, K] - (u, K)|`` in ``C(window, L2)`` for a window's final iterate."""
    u_new, K_new = apply_A(m, window.times, window.u, window.K, window.u[0], window.K[0], q)
    return float(np.max(_l2_1d(u_new - window.u)) + np.max(_l2_2d(K_new - window.K)))


def sup_l2_gap(times_a, u_a, K_a, times_b, u_b, K_b, atol: float = 1e-9) -> float:
    """Max over shared times of ``|u_a - u_b|_L2 + |K_a - K_b|_L2`` (same spatial grid)."""
    times_a, times_b = np.asarray(times_a), np.asarray(times_b)
    idx_b = np.searchsorted(times_b, times_a)
    gap = 0.0
    shared = 0
    for i, j in enumerate(idx_b):
        for jj in (j - 1, j):
            if 0 <= jj < len(times_b) and abs(times_b[jj] - times_a[i]) <= atol:
                du = _l2_1d((u_a[i] - u_b[jj])[None])[0]
                dK = _l2_2d((K_a[i] - K_b[jj])[None])[0]
                gap = max(gap, float(du + dK))
                shared += 1
                break
    if shared == 0:
        raise ValueError("the two solutions share no time points")
    return gap
