"""Econometric baselines: Black-Scholes, Variance Gamma and Kou priced by FRFT."""

from .black_scholes import BlackScholesSurface, bs_implied_density, bs_price
from .calibration import CalibrationResult, calibrate, model_prices
from .frft import direct_fractional_dft, frft
from .levy import PARAM_NAMES, VARIANTS, InadmissibleParameters, LevyModelParams, charfn, martingale_drift
from .pricing import ConfigurationError, FrftPlan, fft_price_curve, make_plan, price_records

__all__ = [
    "BlackScholesSurface", "bs_implied_density", "bs_price",
    "CalibrationResult", "calibrate", "model_prices",
    "direct_fractional_dft", "frft",
    "PARAM_NAMES", "VARIANTS", "InadmissibleParameters", "LevyModelParams", "charfn", "martingale_drift",
    "ConfigurationError", "FrftPlan", "fft_price_curve", "make_plan", "price_records",
]
