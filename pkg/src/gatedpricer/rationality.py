"""No-arbitrage checks C1-C6 and risk-neutral density extraction.

A pricing surface is anything callable as ``y(m, tau)`` on rescaled units
(undiscounted call price over spot, ``m = K / S``).  Derivatives are taken
from ``dm``, ``d2m`` and ``dtau`` methods when the object has them, else by
central differences.

Conditions, in rescaled units:

* C1 ``dy/dm <= 0``
* C2 ``d2y/dm2 >= 0``
* C3 ``dy/dtau >= 0``
* C4 ``y(m_large, tau) -> 0``
* C5 ``y(m, 0) = max(0, 1 - m)``
* C6 ``max(0, 1 - m) <= exp(-r tau) y <= 1``

C1-C4 are hard conditions.  C5 and C6 are only enforced softly by training,
so they may come back as ``soft-pass`` when within ``soft_tol``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .gated_net import SingleModel

CONDITIONS = ("C1", "C2", "C3", "C4", "C5", "C6")
PASS, SOFT_PASS, FAIL = "pass", "soft-pass", "fail"


class PricingSurface:
    """Wrap a bare function ``y(m, tau)`` with finite-difference derivatives."""

    def __init__(self, func, h_m: float = 1e-4, h_tau: float = 1e-5):
        self.func = func
        self.h_m = h_m
        self.h_tau = h_tau

    def __call__(self, m, tau):
        return np.asarray(self.func(m, tau), dtype=float)

    def dm(self, m, tau):
        m = np.asarray(m, float)
        return (self(m + self.h_m, tau) - self(m - self.h_m, tau)) / (2 * self.h_m)

    def d2m(self, m, tau):
        m = np.asarray(m, float)
        return (self(m + self.h_m, tau) - 2 * self(m, tau) + self(m - self.h_m, tau)) / self.h_m**2

    def dtau(self, m, tau):
        # one-sided at tau = 0 so the surface is never asked for negative maturities
        tau = np.asarray(tau, float)
        lo = np.maximum(tau - self.h_tau, 0.0)
        hi = tau + self.h_tau
        return (self(m, hi) - self(m, lo)) / (hi - lo)


def as_surface(model):
    """Return ``model`` if it exposes derivatives, else a finite-difference wrapper."""
    if all(hasattr(model, a) for a in ("dm", "d2m", "dtau")):
        return model
    return PricingSurface(model)


@dataclass
class CheckGrid:
    """Evaluation grid and tolerances for :func:`check_conditions`."""

    m: np.ndarray = field(default_factory=lambda: np.linspace(0.01, 4.0, 400))
    tau: np.ndarray = field(default_factory=lambda: np.linspace(2, 365, 30) / 365.0)
    m_large: float = 50.0
    r: float = 0.0
    hard_tol: float = 1e-6
    soft_tol: float = 0.05
    c4_tol: float = 1e-6

    def __post_init__(self):
        self.m = np.asarray(self.m, float)
        self.tau = np.asarray(self.tau, float)
        if self.m.size == 0 or self.tau.size == 0:
            raise ValueError("empty check grid")

    def describe(self) -> dict:
        return {
            "m_min": float(self.m.min()), "m_max": float(self.m.max()), "n_m": int(self.m.size),
            "tau_min": float(self.tau.min()), "tau_max": float(self.tau.max()), "n_tau": int(self.tau.size),
            "m_large": self.m_large, "r": self.r,
            "hard_tol": self.hard_tol, "soft_tol": self.soft_tol, "c4_tol": self.c4_tol,
        }


@dataclass
class ConditionResult:
    """Outcome of one condition; ``worst`` is the signed size of the worst point."""

    name: str
    status: str
    worst: float
    m: float | None
    tau: float | None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != FAIL


@dataclass
class RationalityReport:
    conditions: dict
    grid: dict

    def __post_init__(self):
        if tuple(sorted(self.conditions)) != CONDITIONS:
            raise ValueError("a report must hold every condition C1-C6 exactly once")

    def __getitem__(self, name) -> ConditionResult:
        return self.conditions[name]

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.conditions.values())

    def failures(self) -> list[str]:
        return [n for n in CONDITIONS if not self.conditions[n].ok]

    def to_dict(self) -> dict:
        return {"conditions": {n: asdict(self.conditions[n]) for n in CONDITIONS}, "grid": self.grid,
                "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _worst(values, M, T, largest: bool):
    i = int(np.argmax(values) if largest else np.argmin(values))
    return float(values[i]), float(M[i]), float(T[i])


def _sign_condition(name, values, M, T, tol, want_nonpositive: bool, what: str) -> ConditionResult:
    worst, m, t = _worst(values, M, T, largest=want_nonpositive)
    bad = worst > tol if want_nonpositive else worst < -tol
    return ConditionResult(name, FAIL if bad else PASS, worst, m, t, what)


def _graded(name, error, m, t, grid: CheckGrid, what: str) -> ConditionResult:
    if error <= grid.hard_tol:
        status = PASS
    elif error <= grid.soft_tol:
        status = SOFT_PASS
    else:
        status = FAIL
    return ConditionResult(name, status, error, m, t, what)


def check_conditions(model, grid: CheckGrid | None = None) -> RationalityReport:
    """Evaluate C1-C6 on ``grid``; failures are reported, never raised."""
    grid = grid or CheckGrid()
    surf = as_surface(model)
    M, T = (a.ravel() for a in np.meshgrid(grid.m, grid.tau))
    out = {}
    out["C1"] = _sign_condition("C1", np.asarray(surf.dm(M, T)), M, T, grid.hard_tol, True, "max dy/dm")
    out["C2"] = _sign_condition("C2", np.asarray(surf.d2m(M, T)), M, T, grid.hard_tol, False, "min d2y/dm2")
    out["C3"] = _sign_condition("C3", np.asarray(surf.dtau(M, T)), M, T, grid.hard_tol, False, "min dy/dtau")

    far = np.asarray(surf(np.full_like(grid.tau, grid.m_large), grid.tau))
    i = int(np.argmax(far))
    out["C4"] = ConditionResult("C4", PASS if far[i] < grid.c4_tol else FAIL, float(far[i]), grid.m_large,
                                float(grid.tau[i]), f"max y(m_large, tau), tol {grid.c4_tol:g}")

    payoff = np.maximum(0.0, 1.0 - grid.m)
    gap = np.abs(np.asarray(surf(grid.m, np.zeros_like(grid.m))) - payoff)
    i = int(np.argmax(gap))
    out["C5"] = _graded("C5", float(gap[i]), float(grid.m[i]), 0.0, grid, "max |y(m, 0) - max(0, 1 - m)|")

    disc = np.exp(-grid.r * T) * np.asarray(surf(M, T))
    below = np.maximum(0.0, 1.0 - M) - disc
    above = disc - 1.0
    excess = np.maximum(below, above)
    i = int(np.argmax(excess))
    out["C6"] = _graded("C6", max(0.0, float(excess[i])), float(M[i]), float(T[i]), grid,
                        "max bound violation of exp(-r tau) y in [max(0, 1 - m), 1]")
    return RationalityReport(out, grid.describe())


# --------------------------------------------------------------------------
# densities


@dataclass
class DensityCurve:
    """Risk-neutral density ``f(S_T)`` of the terminal price on a grid.

    ``valid`` requires ``min_value >= -neg_tol`` and ``|integral - 1| <= tol``.
    ``stable`` is False when the integral moves by more than 5% under step
    or grid refinement.
    """

    S_T: np.ndarray
    f: np.ndarray
    S_t: float
    tau: float
    r: float
    integral: float
    min_value: float
    tol: float = 0.05
    neg_tol: float = 1e-6
    stable: bool = True
    method: str = "analytic"

    def __post_init__(self):
        self.S_T = np.asarray(self.S_T, float)
        self.f = np.asarray(self.f, float)
        if self.S_T.ndim != 1 or self.S_T.shape != self.f.shape:
            raise ValueError("S_T and f must be 1-d arrays of the same length")
        if np.any(np.diff(self.S_T) <= 0):
            raise ValueError("S_T grid must be strictly ascending")

    @property
    def valid(self) -> bool:
        return self.min_value >= -self.neg_tol and abs(self.integral - 1.0) <= self.tol

    def cdf(self) -> np.ndarray:
        return cumulative_trapezoid(self.f, self.S_T, initial=0.0)

    def mass_below(self, x: float) -> float:
        sel = self.S_T <= x
        if sel.sum() < 2:
            return 0.0
        return float(trapezoid(self.f[sel], self.S_T[sel]))

    def summary(self) -> dict:
        return {"S_t": self.S_t, "tau": self.tau, "r": self.r, "integral": self.integral,
                "min_value": self.min_value, "valid": self.valid, "stable": self.stable, "method": self.method}


def _has_analytic_d2m(model) -> bool:
    return isinstance(model, SingleModel)


def _fd_d2m(model, m, tau, h):
    return (model(m + h, tau) - 2.0 * model(m, tau) + model(m - h, tau)) / h**2


def extract_density(model, S_t: float, tau: float, r: float = 0.0, S_T=None, h: float = 1e-3,
                    method: str = "auto", tol: float = 0.05, neg_tol: float = 1e-6) -> DensityCurve:
    """Density ``f(S_T) = (1 / S_t) d2y/dm2`` at ``m = S_T / S_t``.

    ``method`` is ``"analytic"`` (single models), ``"fd"`` (central second
    difference with step ``h`` in ``m``) or ``"auto"``.  The FD path is
    repeated at ``h / 2`` and the integral is recomputed on every other grid
    point; a change above 5% marks the curve unstable.
    """
    if not S_t > 0:
        raise ValueError("S_t must be positive")
    if S_T is None:
        S_T = S_t * np.linspace(0.01, 4.0, 400)
    S_T = np.asarray(S_T, float)
    if np.any(S_T <= 0) or np.any(np.diff(S_T) <= 0):
        raise ValueError("S_T grid must be positive and strictly ascending")
    if method == "auto":
        method = "analytic" if _has_analytic_d2m(model) else "fd"
    m = S_T / S_t
    t = np.full_like(m, float(tau))
    if method == "analytic":
        if not hasattr(model, "d2m"):
            raise ValueError("model has no analytic second derivative")
        f = np.asarray(model.d2m(m, t), float) / S_t
        refined = f
    elif method == "fd":
        if h <= 0 or np.any(m - h < 0):
            raise ValueError("finite-difference step must be positive and keep m - h >= 0")
        f = np.asarray(_fd_d2m(model, m, t, h), float) / S_t
        refined = np.asarray(_fd_d2m(model, m, t, h / 2), float) / S_t
    else:
        raise ValueError(f"unknown density method {method!r}")
    integral = float(trapezoid(f, S_T))
    checks = [float(trapezoid(refined, S_T))]
    if S_T.size >= 5:
        checks.append(float(trapezoid(f[::2], S_T[::2])))
    scale = max(abs(integral), 1e-12)
    stable = all(abs(c - integral) <= 0.05 * scale for c in checks)
    return DensityCurve(S_T, f, float(S_t), float(tau), float(r), integral, float(np.min(f)), tol, neg_tol,
                        stable, method)


class DensityMoments(NamedTuple):
    mean: float
    variance: float
    skewness: float
    kurtosis: float
    trusted: bool


def density_moments(d: DensityCurve) -> DensityMoments:
    """Trapezoid moments of ``d`` normalised by its integral.

    ``kurtosis`` is the plain fourth standardised moment (3 for a normal).
    Moments of an invalid curve are still computed but marked untrusted.
    """
    x, f = d.S_T, d.f
    mass = float(trapezoid(f, x))
    if not mass > 0:
        return DensityMoments(math.nan, math.nan, math.nan, math.nan, False)
    mean = float(trapezoid(x * f, x)) / mass
    var = float(trapezoid((x - mean) ** 2 * f, x)) / mass
    if var <= 0:
        return DensityMoments(mean, 0.0, math.nan, math.nan, False)
    sd = math.sqrt(var)
    skew = float(trapezoid(((x - mean) / sd) ** 3 * f, x)) / mass
    kurt = float(trapezoid(((x - mean) / sd) ** 4 * f, x)) / mass
    return DensityMoments(mean, var, skew, kurt, d.valid and d.stable)
