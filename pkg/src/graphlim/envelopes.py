"""Closed-form a-priori bounds on solutions and on Picard iterates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RATE_MATCH_TOL = 1e-12


def _exp_difference_quotient(a: float, b: float, tau):
    """``(e^{a tau} - e^{b tau}) / (a - b)``, continuous across ``a == b``."""
    tau = np.asarray(tau, dtype=float)
    if abs(a - b) < RATE_MATCH_TOL:
        return tau * np.exp(b * tau)
    return np.exp(b * tau) * np.expm1((a - b) * tau) / (a - b)


@dataclass(frozen=True)
class AprioriEnvelope:
    """Sup-norm envelopes for a solution started at ``t0`` from ``(u_t0, K_t0)``.

    ``K_bound(t) = (1 + |K_t0|) e^{B_Lambda (t - t0)} - 1`` and
    ``u_bound(t) = (1 + |u_t0|) e^{B_f tau} + B_g (1 + |K_t0|) D(tau) - 1`` with
    ``D(tau) = (e^{B_Lambda tau} - e^{B_f tau}) / (B_Lambda - B_f)``.  When the
    two rates coincide ``D(tau) = tau e^{B_f tau}``, the continuous limit.
    """

    B_f: float
    B_g: float
    B_Lambda: float
    u_t0: float
    K_t0: float
    t0: float = 0.0

    @property
    def equal_rates(self) -> bool:
        return abs(self.B_Lambda - self.B_f) < RATE_MATCH_TOL

    def K_bound(self, t):
        tau = np.asarray(t, dtype=float) - self.t0
        return (1.0 + self.K_t0) * np.exp(self.B_Lambda * tau) - 1.0

    def u_bound(self, t):
        tau = np.asarray(t, dtype=float) - self.t0
        growth = _exp_difference_quotient(self.B_Lambda, self.B_f, tau)
        return ((1.0 + self.u_t0) * np.exp(self.B_f * tau)
                + self.B_g * (1.0 + self.K_t0) * growth - 1.0)


def apriori_envelope(m, u_sup: float, K_sup: float, t0: float = 0.0) -> AprioriEnvelope:
    """Envelope for model ``m`` from initial sup norms ``u_sup`` and ``K_sup``."""
    for name, v in (("u_sup", u_sup), ("K_sup", K_sup), ("t0", t0)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    return AprioriEnvelope(B_f=m.f.B_f, B_g=m.g.B_g, B_Lambda=m.lam.B_Lambda,
                           u_t0=float(u_sup), K_t0=float(K_sup), t0=float(t0))


def iterate_partial_sum(B_Lambda: float, tau, n: int):
    """``sum_{l=0}^{n} (B_Lambda tau)^l / l!``: growth factor of the n-th weight iterate."""
    tau = np.asarray(tau, dtype=float)
    x = B_Lambda * tau
    term = np.ones_like(x)
    total = np.ones_like(x)
    for ell in range(1, n + 1):
        term = term * x / ell
        total = total + term
    return total
