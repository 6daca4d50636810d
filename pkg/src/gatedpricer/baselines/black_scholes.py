"""Black-Scholes closed form for European calls."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm


def bs_price(sigma, S, K, r, q_div, tau):
    """Black-Scholes call price with continuous dividend yield ``q_div``.

    At ``tau == 0`` the intrinsic value ``max(0, S - K)`` is returned and
    ``K == 0`` gives the discounted spot.  Broadcasts over array inputs.
    """
    sigma, S, K, r, q_div, tau = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (sigma, S, K, r, q_div, tau)))
    out = np.empty(S.shape)
    expired = tau <= 0.0
    out[expired] = np.maximum(0.0, S[expired] - K[expired])

    live = ~expired
    s, k, rr, qq, t, v = S[live], K[live], r[live], q_div[live], tau[live], sigma[live]
    disc_s = s * np.exp(-qq * t)
    disc_k = k * np.exp(-rr * t)
    vol = v * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(disc_s / disc_k)) / vol + 0.5 * vol
    d2 = d1 - vol
    price = disc_s * norm.cdf(d1) - disc_k * norm.cdf(d2)
    # K == 0: d1 = +inf; zero vol collapses to the discounted forward payoff
    price = np.where(k == 0.0, disc_s, price)
    price = np.where(vol == 0.0, np.maximum(0.0, disc_s - disc_k), price)
    out[live] = price
    return out if out.ndim else float(out)


def bs_implied_density(sigma, S, ST, r, q_div, tau):
    """Lognormal risk-neutral density of ``S_T``."""
    ST = np.asarray(ST, dtype=float)
    mu = np.log(S) + (r - q_div - 0.5 * sigma**2) * tau
    s = sigma * np.sqrt(tau)
    return np.exp(-((np.log(ST) - mu) ** 2) / (2 * s * s)) / (ST * s * np.sqrt(2 * np.pi))


class BlackScholesSurface:
    """Rescaled undiscounted surface ``y(m, tau) = e^{r tau} C(S=1, K=m) ``.

    Provides only values, so consumers fall back to finite differences.
    """

    model_type = "bs"

    def __init__(self, sigma: float, r: float = 0.0, q_div: float = 0.0):
        self.sigma, self.r, self.q_div = sigma, r, q_div

    def __call__(self, m, tau):
        m = np.asarray(m, float)
        tau = np.asarray(tau, float)
        return np.exp(self.r * tau) * bs_price(self.sigma, 1.0, m, self.r, self.q_div, tau)
