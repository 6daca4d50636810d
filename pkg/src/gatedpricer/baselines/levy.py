"""Risk-neutral characteristic functions of ``log S_T`` for BS, VG and Kou."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

VARIANTS = ("bs", "vg", "kou")

PARAM_NAMES = {
    "bs": ("sigma",),
    "vg": ("sigma", "nu", "theta"),
    "kou": ("sigma", "lam", "p_up", "eta1", "eta2"),
}


class InadmissibleParameters(ValueError):
    pass


@dataclass(frozen=True)
class LevyModelParams:
    """Model variant, its parameters and the shared market inputs.

    Unused parameters for a variant are ignored (and kept at their defaults).
    """

    variant: str
    sigma: float
    nu: float = 0.0
    theta: float = 0.0
    lam: float = 0.0
    p_up: float = 0.5
    eta1: float = 10.0
    eta2: float = 10.0
    S: float = 1.0
    r: float = 0.0
    q_div: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        problems = []
        if not self.sigma > 0:
            problems.append("sigma must be > 0")
        if self.variant == "vg" and not self.nu > 0:
            problems.append("nu must be > 0")
        if self.variant == "kou":
            if not self.lam >= 0:
                problems.append("lam must be >= 0")
            if not 0.0 <= self.p_up <= 1.0:
                problems.append("p_up must lie in [0, 1]")
            if not self.eta1 > 1:
                problems.append("eta1 must be > 1")
            if not self.eta2 > 0:
                problems.append("eta2 must be > 0")
        if self.variant == "vg" and not 1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu > 0:
            problems.append("VG needs 1 - theta nu - sigma^2 nu / 2 > 0 for a finite forward")
        if not self.S > 0:
            problems.append("S must be > 0")
        if problems:
            raise InadmissibleParameters("; ".join(problems))

    @property
    def model_params(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in PARAM_NAMES[self.variant]}

    def with_market(self, S: float, r: float, q_div: float = 0.0) -> "LevyModelParams":
        d = asdict(self)
        d.update(S=S, r=r, q_div=q_div)
        return LevyModelParams(**d)

    def to_dict(self) -> dict:
        return {"variant": self.variant, **self.model_params, "S": self.S, "r": self.r, "q_div": self.q_div}

    def annual_variance(self) -> float:
        """Variance of the log return per unit time."""
        if self.variant == "bs":
            return self.sigma**2
        if self.variant == "vg":
            return self.sigma**2 + self.theta**2 * self.nu
        q = 1.0 - self.p_up
        return self.sigma**2 + self.lam * (2 * self.p_up / self.eta1**2 + 2 * q / self.eta2**2)

    def log_mgf_exponent_limit(self) -> float:
        """Supremum of ``a`` with ``E[S_T^a] < inf`` (``inf`` when unbounded)."""
        if self.variant == "bs":
            return np.inf
        if self.variant == "kou":
            return self.eta1 if self.lam > 0 else np.inf
        # VG: 1 - a theta nu - sigma^2 nu a^2 / 2 > 0
        s2 = self.sigma**2 * self.nu
        return (-self.theta * self.nu + np.sqrt((self.theta * self.nu) ** 2 + 2 * s2)) / s2


def levy_exponent(params: LevyModelParams, u):
    """``psi(u)`` with ``E[exp(i u X_t)] = exp(t psi(u))`` for the driftless jump/diffusion part."""
    u = np.asarray(u, dtype=complex)
    s2 = params.sigma**2
    if params.variant == "bs":
        return -0.5 * s2 * u * u
    if params.variant == "vg":
        nu, th = params.nu, params.theta
        # real part of the argument stays positive along the pricing contour
        # whenever the damped moment exists, so the principal log is continuous
        return -np.log(1.0 - 1j * u * th * nu + 0.5 * s2 * nu * u * u) / nu
    p, q = params.p_up, 1.0 - params.p_up
    jump = p * params.eta1 / (params.eta1 - 1j * u) + q * params.eta2 / (params.eta2 + 1j * u) - 1.0
    return -0.5 * s2 * u * u + params.lam * jump


def martingale_drift(params: LevyModelParams) -> float:
    """Drift correction ``omega`` making ``e^{-(r-q) t} S_t`` a martingale."""
    return float(-np.real(levy_exponent(params, -1j)))


def charfn(params: LevyModelParams, u, tau: float):
    """Characteristic function of ``log S_T`` under the risk-neutral measure.

    ``E[exp(i u log S_T)] = exp(i u (log S + (r - q + omega) tau) + tau psi(u))``,
    so ``charfn(params, -1j, tau) == S exp((r - q) tau)``.
    """
    u = np.asarray(u, dtype=complex)
    drift = np.log(params.S) + (params.r - params.q_div + martingale_drift(params)) * tau
    return np.exp(1j * u * drift + tau * levy_exponent(params, u))
