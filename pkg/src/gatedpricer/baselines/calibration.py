"""Single-day least-squares calibration of the econometric baselines."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .black_scholes import bs_price
from .levy import PARAM_NAMES, InadmissibleParameters, LevyModelParams
from .pricing import DEFAULT_ALPHA, ConfigurationError, price_records

log = logging.getLogger(__name__)

# Kou up-jump rate is kept above alpha + 1 so the damped transform exists.
KOU_ETA1_FLOOR = DEFAULT_ALPHA + 1.0 + 0.05

_START_BOXES = {
    "bs": {"sigma": (0.05, 0.6)},
    "vg": {"sigma": (0.05, 0.4), "nu": (0.05, 0.8), "theta": (-0.4, 0.1)},
    "kou": {"sigma": (0.05, 0.4), "lam": (0.1, 3.0), "p_up": (0.2, 0.8), "eta1": (5.0, 30.0), "eta2": (2.0, 20.0)},
}

# plan settings used while calibrating: cheaper than the accuracy defaults
CALIBRATION_PLAN = {"tol": 1e-7, "max_N": 2**15}


def _to_free(variant: str, values: dict) -> np.ndarray:
    out = []
    for name in PARAM_NAMES[variant]:
        x = values[name]
        if name == "theta":
            out.append(x)
        elif name == "p_up":
            out.append(np.log(x / (1 - x)))
        elif name == "eta1" and variant == "kou":
            out.append(np.log(x - KOU_ETA1_FLOOR))
        else:
            out.append(np.log(x))
    return np.array(out)


def _from_free(variant: str, z) -> dict:
    values = {}
    for name, x in zip(PARAM_NAMES[variant], z):
        x = float(np.clip(x, -30.0, 30.0))
        if name == "theta":
            values[name] = x
        elif name == "p_up":
            values[name] = 1.0 / (1.0 + np.exp(-x))
        elif name == "eta1" and variant == "kou":
            values[name] = KOU_ETA1_FLOOR + np.exp(x)
        else:
            values[name] = np.exp(x)
    return values


@dataclass
class CalibrationResult:
    params: LevyModelParams
    mse: float
    mape: float
    n_contracts: int
    converged: bool
    starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "mse": self.mse,
            "mape": self.mape,
            "n_contracts": self.n_contracts,
            "converged": self.converged,
        }


def model_prices(params: LevyModelParams, tau, strikes, **plan_kw):
    """Dollar prices for one spot; BS uses the closed form."""
    if params.variant == "bs":
        return bs_price(params.sigma, params.S, strikes, params.r, params.q_div, tau)
    return price_records(params, tau, strikes, **plan_kw)


def calibrate(
    records,
    variant: str,
    n_starts: int = 10,
    seed: int = 0,
    objective: str = "mse",
    maxiter: int | None = None,
    plan_kw: dict | None = None,
    warm_start: LevyModelParams | dict | None = None,
    optimizer: str = "least_squares",
) -> CalibrationResult:
    """Fit ``variant`` to one day's call records by multi-start least squares.

    ``records`` must share a spot (one quote date); the rate may vary by
    maturity and is taken from each record.  The objective is the dollar
    price MSE, or the mean squared relative error when
    ``objective == "mape"``.  Starts are drawn uniformly from a plausible
    box; ``warm_start`` (e.g. the previous day's fit) is tried first.
    ``optimizer`` is ``"least_squares"`` (trust-region on the residual
    vector) or ``"nelder-mead"`` (simplex on the summed objective; slower).
    """
    if objective not in ("mse", "mape"):
        raise ValueError(f"unknown calibration objective {objective!r}")
    if optimizer not in ("least_squares", "nelder-mead"):
        raise ValueError(f"unknown calibration optimizer {optimizer!r}")
    records = list(records)
    names = PARAM_NAMES[variant]
    if len(records) < len(names):
        raise ValueError(f"{len(records)} contracts cannot identify {len(names)} {variant} parameters")
    spots = {r.S for r in records}
    if len(spots) != 1:
        raise ValueError("calibration expects a single quote date (one spot)")
    S = spots.pop()
    K = np.array([r.K for r in records])
    tau = np.array([r.tau_years for r in records])
    rate = np.array([r.r for r in records])
    price = np.array([r.c for r in records])
    plan_kw = dict(CALIBRATION_PLAN if plan_kw is None else plan_kw)
    # distinct (tau, r) groups each get their own FRFT
    groups = [(t, rr, (tau == t) & (rate == rr)) for t, rr in sorted({(a, b) for a, b in zip(tau, rate)})]
    pos = price > 0
    scale = np.where(pos, price, 1.0) if objective == "mape" else np.ones_like(price)
    scale = scale * np.sqrt(len(price))
    failed = np.full(len(price), 1e6)

    def prices_for(values: dict) -> np.ndarray:
        out = np.empty_like(price)
        for t, rr, sel in groups:
            p = LevyModelParams(variant, S=S, r=rr, **values)
            out[sel] = model_prices(p, t, K[sel], **plan_kw)
        return out

    def residuals(z) -> np.ndarray:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = prices_for(_from_free(variant, z))
        except (InadmissibleParameters, ConfigurationError, ValueError, FloatingPointError):
            return failed
        if not np.all(np.isfinite(fit)):
            return failed
        return (fit - price) / scale

    rng = np.random.default_rng(seed)
    box = _START_BOXES[variant]
    starts_z = []
    if warm_start is not None:
        values = warm_start.model_params if isinstance(warm_start, LevyModelParams) else warm_start
        starts_z.append(_to_free(variant, values))
    for _ in range(n_starts):
        starts_z.append(_to_free(variant, {n: rng.uniform(*box[n]) for n in names}))
    best = None
    starts = []
    for z0 in starts_z:
        if optimizer == "least_squares":
            res = least_squares(residuals, z0, method="trf", max_nfev=maxiter or 100 * len(names), diff_step=1e-6,
                                xtol=1e-10, ftol=1e-12, gtol=1e-12)
            fun = float(2.0 * res.cost)
        else:
            res = minimize(lambda z: float(np.sum(residuals(z) ** 2)), z0, method="Nelder-Mead",
                           options={"maxiter": maxiter or 400 * len(names), "xatol": 1e-6, "fatol": 1e-12})
            fun = float(res.fun)
        starts.append({"start": _from_free(variant, z0), "fun": fun, "success": bool(res.success)})
        if best is None or fun < best[0]:
            best = (fun, res.x)
    converged = any(s["success"] for s in starts)
    if not converged:
        log.warning("%s calibration: no start converged; returning best effort", variant)

    values = _from_free(variant, best[1])
    fit = prices_for(values)
    return CalibrationResult(
        params=LevyModelParams(variant, S=S, r=float(np.median(rate)), **values),
        mse=float(np.mean((fit - price) ** 2)),
        mape=float(np.mean(np.abs(fit[pos] - price[pos]) / price[pos])) * 100.0,
        n_contracts=len(records),
        converged=converged,
        starts=starts,
    )
