"""Model ingredients ``(g, f, Lambda)``, their assumption constants, and built-in models.

Evaluation conventions (all vectorised with numpy broadcasting):

* ``InteractionKernel.eval(t, xi, eta)``: ``xi``/``eta`` have a trailing state
  axis of length ``d``; returns the broadcast shape with trailing ``d``.
* ``ForcingField.eval(t, x, u)``: ``x`` are points of ``[0, 1)``, ``u`` a
  :class:`~graphlim.grid.StepFunction1D`; returns ``x.shape + (d,)``.
* ``WeightLaw.eval(t, x, y, K, u)``: ``K`` a :class:`~graphlim.grid.StepFunction2D`;
  returns the broadcast shape of ``x`` and ``y``.

A forcing field or weight law with ``explicit_position=False`` depends on the
position only through field values at that position (and global functionals
of the fields).  On step-function data it is then constant on every cell, and
cell averages reduce to a single evaluation at the cell centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .grid import DEFAULT_ORDER, StepFunction1D, StepFunction2D, UnitGrid

RATIO_TOL = 1e-9


def _check_constant(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and nonnegative, got {value}")
    return value


@dataclass(frozen=True)
class InteractionKernel:
    eval: Callable
    B_g: float
    L_g: float

    def __post_init__(self):
        object.__setattr__(self, "B_g", _check_constant("B_g", self.B_g))
        object.__setattr__(self, "L_g", _check_constant("L_g", self.L_g))


@dataclass(frozen=True)
class ForcingField:
    eval: Callable
    B_f: float
    L_f: float
    explicit_position: bool = True
    # optional exact cell means: (t, grid, u) -> (N, d)
    cell_mean: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "B_f", _check_constant("B_f", self.B_f))
        object.__setattr__(self, "L_f", _check_constant("L_f", self.L_f))


@dataclass(frozen=True)
class WeightLaw:
    eval: Callable
    B_Lambda: float
    L_Lambda: float
    explicit_position: bool = True

    def __post_init__(self):
        object.__setattr__(self, "B_Lambda", _check_constant("B_Lambda", self.B_Lambda))
        object.__setattr__(self, "L_Lambda", _check_constant("L_Lambda", self.L_Lambda))


@dataclass(frozen=True)
class ModelSpec:
    """One dynamical system: interaction ``g``, forcing ``f`` and weight law ``lam``."""

    g: InteractionKernel
    f: ForcingField
    lam: WeightLaw
    d: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"state dimension must be a positive integer, got {self.d}")

    @property
    def constants(self) -> dict[str, float]:
        return {
            "B_g": self.g.B_g, "L_g": self.g.L_g,
            "B_f": self.f.B_f, "L_f": self.f.L_f,
            "B_Lambda": self.lam.B_Lambda, "L_Lambda": self.lam.L_Lambda,
        }


def _finite(**kw):
    for name, value in kw.items():
        if not math.isfinite(float(value)):
            raise ValueError(f"parameter {name} must be finite, got {value}")


def _zeros_like_points(x, d):
    return np.zeros(np.shape(x) + (d,))


def kuramoto_adaptive(omega: float, alpha: float, beta: float, epsilon: float) -> ModelSpec:
    """Adaptively coupled Kuramoto oscillators with phase lags ``alpha`` and ``beta``.

    ``dphi_k/dt = omega - mean_l kappa_kl sin(phi_l - phi_k + alpha)`` and
    ``dkappa_kl/dt = -epsilon (sin(phi_k - phi_l + beta) + kappa_kl)``.
    """
    _finite(omega=omega, alpha=alpha, beta=beta, epsilon=epsilon)
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    omega, alpha, beta, epsilon = map(float, (omega, alpha, beta, epsilon))

    def g(t, xi, eta):
        return -np.sin(eta - xi + alpha)

    def f(t, x, u):
        return np.full(np.shape(x) + (1,), omega)

    def lam(t, x, y, K, u):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        if epsilon == 0.0:
            return np.zeros(shape)
        return -epsilon * (np.sin(u(x)[..., 0] - u(y)[..., 0] + beta) + K(x, y))

    return ModelSpec(
        g=InteractionKernel(g, B_g=1.0, L_g=1.0),
        f=ForcingField(f, B_f=abs(omega), L_f=0.0, explicit_position=False),
        lam=WeightLaw(lam, B_Lambda=epsilon, L_Lambda=2.0 * epsilon, explicit_position=False),
        d=1,
        name="kuramoto_adaptive",
        params={"omega": omega, "alpha": alpha, "beta": beta, "epsilon": epsilon},
    )


def _step_cell_means(values: np.ndarray, N: int) -> np.ndarray:
    n = values.shape[0]
    L = n * N // math.gcd(n, N)
    fine = np.repeat(values, L // n, axis=0)
    return fine.reshape(N, L // N, *values.shape[1:]).mean(axis=1)


def hnp_model(Gamma: Callable, gamma: float, omega, coupling: Callable = np.sin, *,
              Gamma_bound: float, Gamma_lipschitz: float,
              coupling_bound: float = 1.0, coupling_lipschitz: float = 1.0) -> ModelSpec:
    """Oscillators with linearly relaxing, phase-driven weights and natural frequencies.

    ``dphi_k/dt = mean_l kappa_kl c(t, phi_l - phi_k) + omega_k`` and
    ``dkappa_kl/dt = Gamma(phi_l - phi_k) - gamma kappa_kl``.

    ``omega`` is a vector of natural frequencies, read as a step function on
    ``[0, 1)`` with ``len(omega)`` cells.  ``coupling(t, s)`` and ``Gamma(s)``
    act on scalar phase differences; their sup bounds and Lipschitz constants
    are supplied by the caller.
    """
    _finite(gamma=gamma)
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    gamma = float(gamma)
    B_Gamma = _check_constant("Gamma_bound", Gamma_bound)
    L_Gamma = _check_constant("Gamma_lipschitz", Gamma_lipschitz)
    freqs = np.array(omega, dtype=float).reshape(-1)
    if freqs.size == 0 or not np.all(np.isfinite(freqs)):
        raise ValueError("natural frequencies must be a nonempty finite vector")
    freq_field = StepFunction1D(freqs.size, freqs)

    def g(t, xi, eta):
        return np.asarray(coupling(t, eta - xi), dtype=float)

    def f(t, x, u):
        return freq_field(x)

    def f_cell_mean(t, grid, u):
        return _step_cell_means(freq_field.values, grid.N)

    def lam(t, x, y, K, u):
        return np.asarray(Gamma(u(y)[..., 0] - u(x)[..., 0]), dtype=float) - gamma * K(x, y)

    return ModelSpec(
        g=InteractionKernel(g, B_g=coupling_bound, L_g=coupling_lipschitz),
        f=ForcingField(f, B_f=float(np.max(np.abs(freqs))), L_f=0.0,
                       explicit_position=True, cell_mean=f_cell_mean),
        lam=WeightLaw(lam, B_Lambda=max(B_Gamma, gamma), L_Lambda=2.0 * L_Gamma + gamma,
                      explicit_position=False),
        d=1,
        name="hnp",
        params={"gamma": gamma, "omega": freqs.tolist()},
    )


def opinion_model(psi: Callable, Psi: Callable, *, d: int = 1,
                  psi_bound: float | None = None, psi_lipschitz: float | None = None,
                  Psi_bound: float | None = None, Psi_lipschitz: float | None = None) -> ModelSpec:
    """Opinion dynamics with time-varying node weights embedded as ``kappa_kl = m_l``.

    ``psi(s)`` maps opinion differences (trailing axis ``d``) to ``R^d``;
    ``Psi(t, y, u, m)`` returns the weight drift at points ``y`` given the
    opinion field ``u`` and the weight field ``m`` (both step functions).
    The weight field is the column mean ``m(y) = int K(x, y) dx`` of the
    kernel.  It equals every row when all rows agree (the embedded case) and
    keeps the weight law L2-Lipschitz in ``K`` for arbitrary kernels.
    """
    missing = [n for n, v in (("psi_bound", psi_bound), ("psi_lipschitz", psi_lipschitz),
                              ("Psi_bound", Psi_bound), ("Psi_lipschitz", Psi_lipschitz))
               if v is None]
    if missing:
        raise ValueError(f"missing constants: {', '.join(missing)}")

    def g(t, xi, eta):
        return np.asarray(psi(eta - xi), dtype=float)

    def f(t, x, u):
        return _zeros_like_points(x, d)

    def lam(t, x, y, K, u):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        return np.broadcast_to(np.asarray(Psi(t, y, u, K.column_mean()), dtype=float), shape)

    return ModelSpec(
        g=InteractionKernel(g, B_g=psi_bound, L_g=psi_lipschitz),
        f=ForcingField(f, B_f=0.0, L_f=0.0, explicit_position=False),
        lam=WeightLaw(lam, B_Lambda=Psi_bound, L_Lambda=Psi_lipschitz, explicit_position=False),
        d=d,
        name="opinion",
        params={"d": d},
    )


# -- sampled assumption checks -------------------------------------------------

@dataclass
class AssumptionReport:
    """Worst observed ratio ``|quantity| / claimed bound`` per assumption constant."""

    ratios: dict[str, float]
    n_samples: int
    seed: int
    tol: float = RATIO_TOL

    @property
    def passed(self) -> bool:
        return all(r <= 1.0 + self.tol for r in self.ratios.values())

    @property
    def failures(self) -> list[str]:
        return [k for k, r in self.ratios.items() if r > 1.0 + self.tol]

    def to_dict(self) -> dict:
        return {"ratios": dict(self.ratios), "n_samples": self.n_samples,
                "seed": self.seed, "passed": self.passed}


def _ratio(observed: float, bound: float) -> float:
    if observed == 0.0:
        return 0.0
    if bound == 0.0:
        return math.inf
    return observed / bound


def _cell_sample_points(n: int, explicit: bool, q: int):
    grid = UnitGrid(n)
    if explicit:
        return grid.quadrature_points(q)
    return grid.centers[:, None], np.ones(1)


def _random_field(rng, n, d, scale):
    return rng.uniform(-scale, scale, size=(n, d))


def _perturb(rng, values):
    size = 10.0 ** rng.uniform(-3.0, 0.5)
    return values + size * rng.standard_normal(values.shape)


def check_assumptions(m: ModelSpec, n_samples: int = 10_000, seed: int = 0,
                      q: int = DEFAULT_ORDER, max_cells: int = 8) -> AssumptionReport:
    """Probe the bound and Lipschitz hypotheses on ``n_samples`` random draws.

    This can falsify claimed constants but never certify them.
    """
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    rng = np.random.default_rng(seed)
    d = m.d
    worst = dict.fromkeys(("B_g", "L_g", "B_f", "L_f", "B_Lambda", "L_Lambda"), 0.0)

    def bump(key, value):
        if value > worst[key] or math.isnan(value):
            worst[key] = value

    for _ in range(int(n_samples)):
        t = rng.uniform(0.0, 10.0)

        xi, eta = rng.uniform(-4 * np.pi, 4 * np.pi, size=(2, d))
        xi2, eta2 = _perturb(rng, xi), _perturb(rng, eta)
        g1 = np.asarray(m.g.eval(t, xi, eta), float)
        g2 = np.asarray(m.g.eval(t, xi2, eta2), float)
        bump("B_g", _ratio(float(np.linalg.norm(g1)), m.g.B_g))
        dist = np.linalg.norm(xi - xi2) + np.linalg.norm(eta - eta2)
        bump("L_g", _ratio(float(np.linalg.norm(g1 - g2)), m.g.L_g * dist))

        n = int(rng.integers(1, max_cells + 1))
        u1 = StepFunction1D(n, _random_field(rng, n, d, 5.0))
        u2 = StepFunction1D(n, _perturb(rng, u1.values)) if rng.random() < 0.75 else u1
        K1v = _random_field(rng, n, n, 3.0)
        K1 = StepFunction2D(n, K1v)
        K2 = StepFunction2D(n, _perturb(rng, K1v)) if (u2 is u1 or rng.random() < 0.5) else K1
        du = math.sqrt(float(np.sum((u1.values - u2.values) ** 2)) / n)
        dK = math.sqrt(float(np.sum((K1.values - K2.values) ** 2))) / n

        x = rng.uniform(0.0, 1.0, 8)
        y = rng.uniform(0.0, 1.0, 8)
        fx = np.asarray(m.f.eval(t, x, u1), float)
        bump("B_f", _ratio(float(np.max(np.linalg.norm(fx, axis=-1))),
                           m.f.B_f * (1.0 + u1.sup_norm())))
        lx = np.asarray(m.lam.eval(t, x, y, K1, u1), float)
        bump("B_Lambda", _ratio(float(np.max(np.abs(lx))),
                                m.lam.B_Lambda * (1.0 + K1.sup_norm())))

        pts, w = _cell_sample_points(n, m.f.explicit_position, q)
        fd = np.asarray(m.f.eval(t, pts, u1), float) - np.asarray(m.f.eval(t, pts, u2), float)
        f_l2 = math.sqrt(float(np.einsum("kq,q->", np.sum(fd**2, axis=-1), w)) / n)
        bump("L_f", _ratio(f_l2, m.f.L_f * du))

        pts, w = _cell_sample_points(n, m.lam.explicit_position, q)
        X, Y = pts[:, :, None, None], pts[None, None, :, :]
        ld = (np.asarray(m.lam.eval(t, X, Y, K1, u1), float)
              - np.asarray(m.lam.eval(t, X, Y, K2, u2), float))
        ld = np.broadcast_to(ld, (n, w.size, n, w.size))
        l_l2 = math.sqrt(float(np.einsum("aibj,i,j->", ld**2, w, w))) / n
        bump("L_Lambda", _ratio(l_l2, m.lam.L_Lambda * (dK + du)))

    return AssumptionReport(ratios=worst, n_samples=int(n_samples), seed=seed)


def with_constants(m: ModelSpec, **constants) -> ModelSpec:
    """Copy of ``m`` with some claimed constants replaced (e.g. to test the checker)."""
    g, f, lam = m.g, m.f, m.lam
    for key, value in constants.items():
        if key in ("B_g", "L_g"):
            g = replace(g, **{key: value})
        elif key in ("B_f", "L_f"):
            f = replace(f, **{key: value})
        elif key in ("B_Lambda", "L_Lambda"):
            lam = replace(lam, **{key: value})
        else:
            raise KeyError(key)
    return replace(m, g=g, f=f, lam=lam)
