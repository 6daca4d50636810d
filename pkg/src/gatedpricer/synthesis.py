"""Virtual boundary contracts, convexity hint points and synthetic markets."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines.black_scholes import bs_price
from .baselines.levy import LevyModelParams
from .baselines.pricing import fft_price_curve
from .market_data import DAYS_PER_YEAR, CallRecord

DEFAULT_C5_SAMPLES = 50
DEFAULT_HINT_POINTS = 100
DEFAULT_HINT_RANGE = (0.3, 3.0)
DEFAULT_DELTA = 0.001


@dataclass(frozen=True)
class VirtualOption:
    kind: str  # "C5_boundary" or "C6_upper"
    tau_days: float
    S: float
    K: float
    c: float
    r: float = 0.0

    @property
    def tau_years(self) -> float:
        return self.tau_days / DAYS_PER_YEAR

    @property
    def m(self) -> float:
        return self.K / self.S

    @property
    def y_target(self) -> float:
        return math.exp(self.r * self.tau_years) * self.c / self.S


@dataclass(frozen=True)
class HintPoint:
    m: float
    tau_years: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("hint delta must be positive")
        if not self.m >= 0:
            raise ValueError("hint moneyness must be non-negative")


def make_c5_virtuals(spots, n_samples: int = DEFAULT_C5_SAMPLES, rng=None) -> list[VirtualOption]:
    """Expiry contracts: ``tau = 0``, ``K ~ U[0, S]``, price ``S - K`` for each distinct spot."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng)
    out = []
    for S in sorted(set(float(s) for s in spots)):
        for K in rng.uniform(0.0, S, n_samples):
            out.append(VirtualOption("C5_boundary", 0, S, float(K), S - float(K)))
    return out


def make_c6_virtuals(taus, spot: float) -> list[VirtualOption]:
    """Zero-strike contracts priced at the spot, one per distinct ``(tau_days, r)``.

    Their rescaled target is ``exp(r tau)``.
    """
    return [VirtualOption("C6_upper", t, float(spot), 0.0, float(spot), float(r)) for t, r in sorted(set(taus))]


def make_hint_grid(taus, P: int = DEFAULT_HINT_POINTS, m_range=DEFAULT_HINT_RANGE, delta: float = DEFAULT_DELTA) -> list[HintPoint]:
    """``P`` evenly spaced moneyness points for every distinct maturity (in years)."""
    if P < 2:
        raise ValueError("need at least two hint points per maturity")
    lo, hi = m_range
    if not hi > lo:
        raise ValueError(f"degenerate hint moneyness range {m_range}")
    ms = np.linspace(lo, hi, P)
    return [HintPoint(float(m), float(t), delta) for t in sorted(set(taus)) for m in ms]


def hint_arrays(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.array([p.m for p in points], dtype=float),
        np.array([p.tau_years for p in points], dtype=float),
        np.array([p.delta for p in points], dtype=float),
    )


# --------------------------------------------------------------------------
# synthetic markets


@dataclass(frozen=True)
class SyntheticSurfaceSpec:
    """Recipe for a synthetic multi-day call market.

    Spots follow a seeded lognormal daily walk with volatility ``spot_vol``;
    each day carries ``strikes_per_date`` contracts spread over ``tau_days``
    with moneyness drawn uniformly from ``m_range``.  Contracts priced below
    ``min_price`` are dropped, like sub-tick quotes.
    """

    model: LevyModelParams
    n_dates: int = 20
    strikes_per_date: int = 200
    tau_days: tuple = (7, 14, 30, 60, 90, 180)
    S0: float = 100.0
    spot_vol: float = 0.15
    m_range: tuple = (0.8, 1.2)
    strike_step: float = 0.5
    min_price: float = 0.01
    start: str = "2020-01-02"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.tau_days) < 2:
            raise ValueError("maturities must be at least two days")
        if not 0 < self.m_range[0] < self.m_range[1]:
            raise ValueError("m_range must be a positive increasing interval")
        if self.n_dates < 1 or self.strikes_per_date < 1:
            raise ValueError("need at least one date and one strike per date")

    @property
    def generator(self) -> str:
        return self.model.variant


class PricerError(RuntimeError):
    pass


def model_call_prices(model: LevyModelParams, S: float, tau_years: float, strikes) -> np.ndarray:
    """Prices from the named generator at spot ``S``."""
    strikes = np.asarray(strikes, dtype=float)
    if model.variant == "bs":
        return np.asarray(bs_price(model.sigma, S, strikes, model.r, model.q_div, tau_years), dtype=float)
    return fft_price_curve(model.with_market(S, model.r, model.q_div), tau_years, strikes)


def trading_dates(start: str, n: int) -> list[dt.date]:
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return [dt.date.fromisoformat(str(d)) for d in days]


def generate_synthetic_market(spec: SyntheticSurfaceSpec, seed: int = 0) -> list[CallRecord]:
    rng = np.random.default_rng(seed)
    model = spec.model
    dates = trading_dates(spec.start, spec.n_dates)
    shocks = rng.standard_normal(spec.n_dates)
    daily = spec.spot_vol / math.sqrt(252.0)
    log_path = np.cumsum(np.r_[0.0, daily * shocks[1:] - 0.5 * daily**2])
    spots = np.round(spec.S0 * np.exp(log_path), 2)

    taus = np.array(spec.tau_days)
    records = []
    for date, S in zip(dates, spots):
        tau_pick = np.sort(rng.choice(taus, spec.strikes_per_date))
        m = rng.uniform(*spec.m_range, spec.strikes_per_date)
        K = np.maximum(spec.strike_step, np.round(S * m / spec.strike_step) * spec.strike_step)
        for t in np.unique(tau_pick):
            sel = tau_pick == t
            ks = np.unique(K[sel])
            tau = t / DAYS_PER_YEAR
            c = model_call_prices(model, float(S), tau, ks)
            lower = np.maximum(0.0, S * math.exp(-model.q_div * tau) - ks * math.exp(-model.r * tau))
            if np.any(c < lower - 1e-6 * S):
                raise PricerError(f"{model.variant} price below no-arbitrage bound at tau={t}d")
            c = np.maximum(c, lower)
            for k, price in zip(ks, c):
                if price >= spec.min_price:
                    records.append(CallRecord(date, int(t), float(k), float(S), float(price), model.r))
    return records
