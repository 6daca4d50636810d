"""Option pricing with gated neural networks that respect no-arbitrage conditions.

Modules
-------
market_data   option-chain ingestion, filters, put-call parity, rate curves
synthesis     virtual boundary contracts, convexity hint points, synthetic markets
gated_net     single and multi gated networks with analytic derivatives
training      MSE+MAPE loss, hint penalty, Adam, rolling evaluation
rationality   C1-C6 grid checks and risk-neutral density extraction
baselines     Black-Scholes, Variance Gamma and Kou via fractional FFT
cli           command-line front end
"""

from .gated_net import (
    Checkpoint,
    MultiModel,
    MultiModelParams,
    SingleModel,
    SingleModelParams,
    make_model,
)
from .market_data import CallRecord, OptionQuote, RateCurve
from .rationality import DensityCurve, RationalityReport, check_conditions, density_moments, extract_density
from .training import LossConfig, ModelSpec, TrainConfig, rolling_evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "MultiModel", "MultiModelParams", "SingleModel", "SingleModelParams", "make_model",
    "CallRecord", "OptionQuote", "RateCurve",
    "DensityCurve", "RationalityReport", "check_conditions", "density_moments", "extract_density",
    "LossConfig", "ModelSpec", "TrainConfig", "rolling_evaluate", "train",
]
