"""The N-particle system on step-function data: right-hand side and fixed-step RK4.

With ``u^N``/``K^N`` the step-function embedding of the particle states and
edge weights, the system reads

    du_k/dt  = (1/N) sum_l K_kl g(t, u_k, u_l) + N int_{I_k} f(t, x, u^N) dx
    dK_kl/dt = N^2 int_{I_k x I_l} Lambda(t, x, y, K^N, u^N) dx dy

which is also the continuum equation restricted to step functions on ``N``
cells.  The same code therefore integrates particle systems and the
method-of-lines discretisation of the continuum limit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .envelopes import apriori_envelope
from .grid import DEFAULT_ORDER, StepFunction1D, StepFunction2D, UnitGrid, _fmt
from .model_defs import ModelSpec

MONITOR_TOL = 1e-6


class SolverAbort(RuntimeError):
    """Non-finite values appeared; ``trajectory`` holds the states up to the last finite one."""

    def __init__(self, message: str, diagnostic: dict, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.diagnostic = diagnostic
        self.trajectory = trajectory


class MonitorWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DiscreteState:
    t: float
    u: StepFunction1D
    K: StepFunction2D

    def __post_init__(self):
        if self.u.N != self.K.N:
            raise ValueError(f"grid mismatch: u has {self.u.N} cells, K has {self.K.N}")

    @property
    def N(self) -> int:
        return self.u.N


# -- cell-averaged ingredients -------------------------------------------------

def cell_forcing(m: ModelSpec, t: float, u: StepFunction1D, q: int = DEFAULT_ORDER) -> np.ndarray:
    """``f_k = N int_{I_k} f(t, x, u) dx`` for every cell, shape ``(N, d)``."""
    grid = u.grid
    if m.f.cell_mean is not None:
        out = m.f.cell_mean(t, grid, u)
    elif not m.f.explicit_position:
        out = m.f.eval(t, grid.centers, u)
    else:
        pts, w = grid.quadrature_points(q)
        out = np.einsum("kqd,q->kd", np.asarray(m.f.eval(t, pts, u), float), w)
    return np.broadcast_to(np.asarray(out, dtype=float), (grid.N, m.d))


def cell_weight_rates(m: ModelSpec, t: float, K: StepFunction2D, u: StepFunction1D,
                      q: int = DEFAULT_ORDER) -> np.ndarray:
    """``Lambda_kl = N^2 int_{I_k x I_l} Lambda(t, x, y, K, u)``, shape ``(N, N)``."""
    grid = K.grid
    N = grid.N
    if not m.lam.explicit_position:
        c = grid.centers
        out = m.lam.eval(t, c[:, None], c[None, :], K, u)
        return np.broadcast_to(np.asarray(out, dtype=float), (N, N))
    pts, w = grid.quadrature_points(q)
    vals = m.lam.eval(t, pts[:, :, None, None], pts[None, None, :, :], K, u)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (N, q, N, q))
    return np.einsum("aibj,i,j->ab", vals, w, w)


def _first_bad(arr: np.ndarray):
    idx = np.argwhere(~np.isfinite(arr))
    return tuple(int(i) for i in idx[0]) if idx.size else None


def _rhs_arrays(m: ModelSpec, t: float, grid: UnitGrid, u: np.ndarray, K: np.ndarray, q: int):
    uf = StepFunction1D.wrap(grid, u)
    Kf = StepFunction2D.wrap(grid, K)
    with np.errstate(all="ignore"):
        G = np.asarray(m.g.eval(t, u[:, None, :], u[None, :, :]), dtype=float)
        G = np.broadcast_to(G, (grid.N, grid.N, m.d))
        du = np.sum(K[:, :, None] * G, axis=1) / grid.N + cell_forcing(m, t, uf, q)
        dK = cell_weight_rates(m, t, Kf, uf, q)
    bad = _first_bad(du)
    if bad is not None:
        raise SolverAbort(f"non-finite du at t={t}, k={bad[0]}",
                          {"t": t, "k": bad[0], "l": None, "field": "u"})
    bad = _first_bad(dK)
    if bad is not None:
        raise SolverAbort(f"non-finite dK at t={t}, k={bad[0]}, l={bad[1]}",
                          {"t": t, "k": bad[0], "l": bad[1], "field": "K"})
    return du, dK


def rhs(m: ModelSpec, s: DiscreteState, q: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives ``(du, dK)`` with shapes ``(N, d)`` and ``(N, N)``."""
    if s.u.d != m.d:
        raise ValueError(f"state dimension {s.u.d} does not match model dimension {m.d}")
    if not (np.all(np.isfinite(s.u.values)) and np.all(np.isfinite(s.K.values))):
        raise ValueError("state must be finite")
    return _rhs_arrays(m, s.t, s.u.grid, s.u.values, s.K.values, q)


# -- trajectories --------------------------------------------------------------

@dataclass(frozen=True)
class MonitorRecord:
    t: float
    u_sup: float
    u_bound: float
    K_sup: float
    K_bound: float

    @property
    def ok(self) -> bool:
        return (self.K_sup <= self.K_bound * (1 + MONITOR_TOL) + 1e-12
                and self.u_sup <= self.u_bound * (1 + MONITOR_TOL) + 1e-12)


@dataclass
class Trajectory:
    """Stored states of one run; ``u`` is ``(n_times, N, d)``, ``K`` is ``(n_times, N, N)``."""

    model: ModelSpec
    times: np.ndarray
    u: np.ndarray
    K: np.ndarray
    dt: float
    T: float
    store_every: int
    q: int = DEFAULT_ORDER
    monitors: list = field(default_factory=list)
    aborted: bool = False

    @property
    def N(self) -> int:
        return self.u.shape[1]

    @property
    def grid(self) -> UnitGrid:
        return UnitGrid(self.N)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> DiscreteState:
        g = self.grid
        return DiscreteState(float(self.times[i]), StepFunction1D(g, self.u[i]),
                             StepFunction2D(g, self.K[i]))

    @property
    def states(self) -> list[DiscreteState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def monitors_ok(self) -> bool:
        return all(rec.ok for rec in self.monitors)

    def manifest(self) -> dict:
        return {
            "model": self.model.name,
            "model_params": self.model.params,
            "N": self.N,
            "d": self.model.d,
            "dt": self.dt,
            "T": self.T,
            "store_every": self.store_every,
            "n_stored": len(self),
            "last_time": float(self.times[-1]) if len(self) else None,
            "aborted": self.aborted,
            "monitor_flags": [rec.ok for rec in self.monitors],
        }

    def write_csv(self, out_dir, prefix: str = "") -> tuple[Path, Path]:
        """``u.csv`` and ``K.csv``: one row per stored time, ``t`` then row-major values."""
        return write_series_csv(out_dir, self.times, self.u, self.K, prefix)


def write_series_csv(out_dir, times, u, K, prefix: str = "") -> tuple[Path, Path]:
    """Write stored ``u`` and ``K`` series as ``{prefix}u.csv`` and ``{prefix}K.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, arr in (("u", u), ("K", K)):
        path = out_dir / f"{prefix}{name}.csv"
        flat = np.asarray(arr).reshape(len(times), -1)
        lines = [",".join(["t"] + [f"{name}_{j}" for j in range(flat.shape[1])])]
        for t, row in zip(times, flat):
            lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths[0], paths[1]


def _monitor(env, t, u, K) -> MonitorRecord:
    return MonitorRecord(
        t=float(t),
        u_sup=float(np.max(np.linalg.norm(u, axis=1))),
        u_bound=float(env.u_bound(t)),
        K_sup=float(np.max(np.abs(K))),
        K_bound=float(env.K_bound(t)),
    )


def integrate(m: ModelSpec, s0: DiscreteState, T: float, dt: float, store_every: int = 1,
              q: int = DEFAULT_ORDER, monitor: bool = True) -> Trajectory:
    """Classical fixed-step RK4 on the coupled ``(u, K)`` system over ``[s0.t, s0.t + T]``.

    States are stored every ``store_every`` steps and always at the final
    step.  Envelope monitors warn (``MonitorWarning``) but never abort.
    Non-finite values raise :class:`SolverAbort` carrying the partial
    trajectory up to the last finite state.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not T >= 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    if int(store_every) != store_every or store_every < 1:
        raise ValueError(f"store_every must be a positive integer, got {store_every}")
    if s0.u.d != m.d:
        raise ValueError(f"state dimension {s0.u.d} does not match model dimension {m.d}")
    grid = s0.u.grid
    n_steps = int(round(T / dt))
    t0 = float(s0.t)
    u = np.array(s0.u.values, dtype=float)
    K = np.array(s0.K.values, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(K))):
        raise ValueError("initial state must be finite")

    env = apriori_envelope(m, float(np.max(np.linalg.norm(u, axis=1))),
                           float(np.max(np.abs(K))), t0) if monitor else None
    times, us, Ks, records = [], [], [], []

    def store(t, u, K):
        times.append(t)
        us.append(u.copy())
        Ks.append(K.copy())
        if env is not None:
            rec = _monitor(env, t, u, K)
            records.append(rec)
            if not rec.ok:
                warnings.warn(f"a-priori envelope exceeded at t={t:.6g}", MonitorWarning,
                              stacklevel=3)

    def build(aborted=False):
        return Trajectory(model=m, times=np.array(times), u=np.array(us), K=np.array(Ks),
                          dt=dt, T=T, store_every=int(store_every), q=q,
                          monitors=records, aborted=aborted)

    store(t0, u, K)
    h = dt
    for i in range(n_steps):
        t = t0 + i * h
        try:
            k1u, k1K = _rhs_arrays(m, t, grid, u, K, q)
            k2u, k2K = _rhs_arrays(m, t + 0.5 * h, grid, u + 0.5 * h * k1u, K + 0.5 * h * k1K, q)
            k3u, k3K = _rhs_arrays(m, t + 0.5 * h, grid, u + 0.5 * h * k2u, K + 0.5 * h * k2K, q)
            k4u, k4K = _rhs_arrays(m, t + h, grid, u + h * k3u, K + h * k3K, q)
        except SolverAbort as exc:
            if times[-1] != t:
                store(t, u, K)
            exc.trajectory = build(aborted=True)
            exc.diagnostic["last_finite_time"] = t
            raise
        with np.errstate(all="ignore"):
            u_new = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            K_new = K + (h / 6.0) * (k1K + 2.0 * k2K + 2.0 * k3K + k4K)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(K_new))):
            if times[-1] != t:
                store(t, u, K)
            raise SolverAbort(f"state became non-finite after t={t}",
                              {"t": t + h, "k": None, "l": None, "field": "state",
                               "last_finite_time": t},
                              build(aborted=True))
        u, K = u_new, K_new
        step = i + 1
        if step % store_every == 0 or step == n_steps:
            store(t0 + step * h, u, K)
    return build()


# -- checks ----------------------------------------------------------------------

def duhamel_check(Gamma: Callable, gamma: float, traj: Trajectory) -> float:
    """Max over stored times and edges of |kappa_direct - kappa_Duhamel|.

    The variation-of-constants formula
    ``kappa(t) = kappa(0) e^{-gamma t} + int_0^t Gamma(phi_l - phi_k)(s) e^{-gamma (t - s)} ds``
    is evaluated with the trapezoid rule on the stored phase samples.
    """
    if traj.model.name != "hnp":
        raise ValueError(f"trajectory comes from model {traj.model.name!r}, not an hnp model")
    t = traj.times - traj.times[0]
    phi = traj.u[:, :, 0]
    forcing = np.asarray(Gamma(phi[:, None, :] - phi[:, :, None]), dtype=float)
    weighted = forcing * np.exp(gamma * t)[:, None, None]
    integral = cumulative_trapezoid(weighted, t, axis=0, initial=0.0)
    decay = np.exp(-gamma * t)[:, None, None]
    duhamel = traj.K[0][None] * decay + integral * decay
    return float(np.max(np.abs(traj.K - duhamel)))


@dataclass
class DiscreteAssumptionReport:
    """Worst observed ratios (lhs / rhs) of the cell-averaged bound and Lipschitz inequalities.

    ``stated_lambda_sum`` is informational: it tests the weight-rate sum
    bound with a factor ``N`` instead of ``N^2`` and is not part of ``passed``.
    """

    ratios: dict
    n_samples: int
    N: int
    informational: dict = field(default_factory=dict)
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(r <= 1.0 + self.tol for r in self.ratios.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, r in self.ratios.items() if r > 1.0 + self.tol]

    def to_dict(self) -> dict:
        return {"ratios": dict(self.ratios), "informational": dict(self.informational),
                "n_samples": self.n_samples, "N": self.N, "passed": self.passed}


def discrete_assumption_check(m: ModelSpec, grid, n_samples: int = 100, seed: int = 0,
                              q: int = DEFAULT_ORDER) -> DiscreteAssumptionReport:
    """Sample the bounds inherited by the cell-averaged ``f_k`` and ``Lambda_kl``.

    Checked on random ``(phi, psi, kappa, lambda)``, with Euclidean ``|.|``:

    * ``sum_k |f_k|^2 <= B_f^2 N (1 + |phi|)^2``
    * ``sum_k |f_k(phi) - f_k(psi)|^2 <= L_f^2 |phi - psi|^2``
    * ``|Lambda_kl| <= B_Lambda (1 + |kappa|)`` entrywise
    * ``sum_kl |Lambda_kl|^2 <= B_Lambda^2 N^2 (1 + |kappa|)^2``
    * ``sum_kl |Lambda_kl(kappa, phi) - Lambda_kl(lambda, psi)|^2
      <= L_Lambda^2 (|kappa - lambda| + N |phi - psi|)^2``
    """
    grid = grid if isinstance(grid, UnitGrid) else UnitGrid(grid)
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    N, d = grid.N, m.d
    c = m.constants
    rng = np.random.default_rng(seed)
    keys = ("f_bound", "f_lipschitz", "Lambda_entry_bound", "Lambda_bound", "Lambda_lipschitz")
    worst = dict.fromkeys(keys, 0.0)
    stated = 0.0

    def ratio(lhs, rhs_):
        if lhs == 0.0:
            return 0.0
        return math.inf if rhs_ == 0.0 else lhs / rhs_

    for _ in range(int(n_samples)):
        t = rng.uniform(0.0, 10.0)
        phi = rng.uniform(-2 * np.pi, 2 * np.pi, size=(N, d))
        psi = phi + 10.0 ** rng.uniform(-3, 0.5) * rng.standard_normal((N, d))
        kappa = 3.0 * 10.0 ** rng.uniform(-3, 0.2) * rng.uniform(-1, 1, size=(N, N))
        lam_ = kappa + 10.0 ** rng.uniform(-3, 0.5) * rng.standard_normal((N, N))
        u1, u2 = StepFunction1D(grid, phi), StepFunction1D(grid, psi)
        K1, K2 = StepFunction2D(grid, kappa), StepFunction2D(grid, lam_)

        f1, f2 = cell_forcing(m, t, u1, q), cell_forcing(m, t, u2, q)
        L1, L2 = cell_weight_rates(m, t, K1, u1, q), cell_weight_rates(m, t, K2, u2, q)
        nphi, nk = np.linalg.norm(phi), np.linalg.norm(kappa)
        dphi, dk = np.linalg.norm(phi - psi), np.linalg.norm(kappa - lam_)

        def bump(key, r):
            if r > worst[key]:
                worst[key] = r

        bump("f_bound", ratio(float(np.sum(f1**2)), c["B_f"] ** 2 * N * (1 + nphi) ** 2))
        bump("f_lipschitz", ratio(float(np.sum((f1 - f2) ** 2)), c["L_f"] ** 2 * dphi**2))
        bump("Lambda_entry_bound", ratio(float(np.max(np.abs(L1))), c["B_Lambda"] * (1 + nk)))
        bump("Lambda_bound", ratio(float(np.sum(L1**2)), c["B_Lambda"] ** 2 * N**2 * (1 + nk) ** 2))
        bump("Lambda_lipschitz", ratio(float(np.sum((L1 - L2) ** 2)),
                                       c["L_Lambda"] ** 2 * (dk + N * dphi) ** 2))
        stated = max(stated, ratio(float(np.sum(L1**2)), c["B_Lambda"] ** 2 * N * (1 + nk) ** 2))

    return DiscreteAssumptionReport(ratios=worst, n_samples=int(n_samples), N=N,
                                    informational={"stated_lambda_sum": stated})
