"""Losses, the convexity hint penalty, Adam and the rolling evaluation harness."""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import synthesis
from .gated_net import (
    MAX_LOG_WEIGHT,
    Checkpoint,
    MultiModel,
    MultiModelParams,
    SingleModelParams,
    make_model,
)
from .market_data import as_arrays, group_by_date

log = logging.getLogger(__name__)

NN_METHODS = ("single", "multi")
BASELINE_METHODS = ("bs", "vg", "kou")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good_epoch):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch


@dataclass
class LossConfig:
    mse_weight: float = 1.0
    mape_weight: float = 1.0
    # the hinge is about delta * |d2y/dm2| per violating point, so it needs a large weight
    hint_weight: float = 100.0
    virtual_weight: float = 1.0
    # False leaves virtual options to the MSE term only
    mape_on_virtuals: bool = True

    def __post_init__(self):
        if min(self.mse_weight, self.mape_weight, self.hint_weight, self.virtual_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mse_weight == 0 and self.mape_weight == 0:
            raise ValueError("at least one of mse_weight and mape_weight must be positive")


# (learning_rate, final_learning_rate, epochs) used when a config leaves them unset
MODEL_SCHEDULES = {
    "single": (0.01, None, 10000),
    "multi": (0.03, 0.001, 3000),
}


@dataclass
class TrainConfig:
    """Optimiser and data-augmentation settings for one training run.

    ``learning_rate`` and ``epochs`` left as None take the model's entry in
    :data:`MODEL_SCHEDULES`; an unset learning rate also takes the
    schedule's final rate.  ``final_learning_rate`` turns on a geometric
    decay over the run; None keeps the rate fixed.
    """

    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int | None = None
    final_learning_rate: float | None = None
    batch_size: int | None = None  # None: full batch
    use_virtuals: bool = True
    c5_samples: int = synthesis.DEFAULT_C5_SAMPLES
    hint_points: int = synthesis.DEFAULT_HINT_POINTS
    hint_m_min: float = synthesis.DEFAULT_HINT_RANGE[0]
    hint_m_max: float = synthesis.DEFAULT_HINT_RANGE[1]
    hint_delta: float = synthesis.DEFAULT_DELTA

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved(self, model_type: str) -> "TrainConfig":
        """Copy with the optimiser schedule filled in for ``model_type``."""
        lr, final, epochs = MODEL_SCHEDULES[model_type]
        changes = {}
        if self.learning_rate is None:
            changes.update(learning_rate=lr, final_learning_rate=final)
        if self.epochs is None:
            changes["epochs"] = epochs
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        return cls(loss=loss, **d)


@dataclass(frozen=True)
class ModelSpec:
    model_type: str = "multi"
    J: int = 5
    I: int = 9  # noqa: E741
    K_g: int = 5
    init_scheme: str = "kink_spread"

    def __post_init__(self):
        if self.model_type not in NN_METHODS:
            raise ValueError(f"model_type must be one of {NN_METHODS}")

    def initialize(self, rng):
        if self.model_type == "single":
            return SingleModelParams.initialize(self.J, rng, scheme=self.init_scheme)
        return MultiModelParams.initialize(self.I, self.J, self.K_g, rng, scheme=self.init_scheme)


@dataclass
class TrainingBatch:
    """Flat arrays over market records followed by virtual options."""

    m: np.ndarray
    tau: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    virtual: np.ndarray

    @classmethod
    def build(cls, records, virtuals=(), virtual_weight: float = 1.0) -> "TrainingBatch":
        rows = list(records) + list(virtuals)
        n_market = len(records)
        return cls(
            m=np.array([r.m for r in rows], dtype=float),
            tau=np.array([r.tau_years for r in rows], dtype=float),
            y=np.array([r.y_target for r in rows], dtype=float),
            weight=np.r_[np.ones(n_market), np.full(len(rows) - n_market, float(virtual_weight))],
            virtual=np.r_[np.zeros(n_market, bool), np.ones(len(rows) - n_market, bool)],
        )

    def __len__(self):
        return len(self.m)

    def subset(self, idx) -> "TrainingBatch":
        return TrainingBatch(self.m[idx], self.tau[idx], self.y[idx], self.weight[idx], self.virtual[idx])


def loss(batch: TrainingBatch, model, cfg: LossConfig):
    """Weighted ``mse + mape`` on rescaled prices and its parameter gradient.

    MAPE runs over rows with a positive target only, and skips virtual
    options unless ``cfg.mape_on_virtuals`` is set.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    pos = batch.y > 0
    if not cfg.mape_on_virtuals:
        pos &= ~batch.virtual
    if cfg.mse_weight == 0 and not np.any(pos):
        raise ValueError("MAPE-only loss on a batch whose targets are all zero")
    pred, _, cache = model.evaluate(batch.m, batch.tau)
    err = pred - batch.y
    w = batch.weight
    value = 0.0
    upstream = np.zeros_like(err)
    if cfg.mse_weight > 0:
        value += cfg.mse_weight * np.sum(w * err**2) / w.sum()
        upstream += cfg.mse_weight * 2.0 * w * err / w.sum()
    if cfg.mape_weight > 0 and np.any(pos):
        wp = w[pos].sum()
        rel = np.zeros_like(err)
        rel[pos] = err[pos] / batch.y[pos]
        value += cfg.mape_weight * np.sum(w * np.abs(rel)) / wp
        upstream += cfg.mape_weight * w * np.sign(rel) * np.where(pos, 1.0 / np.where(pos, batch.y, 1.0), 0.0) / wp
    return float(value), model.grads_from_cache(cache, upstream)


def hint_penalty(model, m, tau, delta):
    """``sum max(0, g(m, tau) - g(m + delta, tau))`` with ``g = dy/dm``, and its gradient."""
    if not isinstance(model, MultiModel):
        raise TypeError("the hint penalty applies to multi models; single models are convex by design")
    m = np.asarray(m, float)
    tau = np.asarray(tau, float)
    delta = np.broadcast_to(np.asarray(delta, float), m.shape)
    mm = np.r_[m, m + delta]
    tt = np.r_[tau, tau]
    _, g, cache = model.evaluate(mm, tt)
    n = len(m)
    gap = g[:n] - g[n:]
    active = (gap > 0).astype(float)
    value = float(np.sum(gap * active))
    upstream_dm = np.r_[active, -active]
    return value, model.grads_from_cache(cache, 0.0, upstream_dm)


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; returns new params (``state`` is updated in place)."""
    g_arrays = grads.arrays()
    for name, g in g_arrays.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * math.sqrt(1 - b2**state.t) / (1 - b1**state.t)
    eps_t = state.epsilon * math.sqrt(1 - b2**state.t)
    new = {}
    for name, p in params.arrays().items():
        g = g_arrays[name]
        m1 = state.first.get(name, np.zeros_like(p))
        m2 = state.second.get(name, np.zeros_like(p))
        m1 = b1 * m1 + (1 - b1) * g
        m2 = b2 * m2 + (1 - b2) * g * g
        state.first[name], state.second[name] = m1, m2
        new[name] = p - lr_t * m1 / (np.sqrt(m2) + eps_t)
    return type(params)(**new)


def _add(a, b, scale=1.0):
    bb = b.arrays()
    return type(a)(**{k: v + scale * bb[k] for k, v in a.arrays().items()})


def c2_residual(model, taus, m_grid=None, delta=synthesis.DEFAULT_DELTA) -> float:
    """Largest hinge violation ``g(m) - g(m + delta)`` over a dense grid."""
    if m_grid is None:
        m_grid = np.linspace(0.01, 4.0, 400)
    taus = np.unique(np.asarray(taus, float))
    M, T = np.meshgrid(m_grid, taus)
    m, t = M.ravel(), T.ravel()
    return float(max(0.0, np.max(model.dm(m, t) - model.dm(m + delta, t))))


def build_virtuals(records, cfg: TrainConfig, rng):
    """C5 virtuals for each training spot and C6 virtuals for each ``(tau, r)`` at the latest spot."""
    if not cfg.use_virtuals or not records:
        return []
    spots = [r.S for r in records]
    last_spot = max(records, key=lambda r: r.date).S
    c5 = synthesis.make_c5_virtuals(spots, cfg.c5_samples, rng)
    c6 = synthesis.make_c6_virtuals({(r.tau_days, r.r) for r in records}, last_spot)
    return c5 + c6


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for ``epoch`` of a resolved config."""
    if cfg.final_learning_rate is None or cfg.epochs <= 1:
        return cfg.learning_rate
    frac = epoch / (cfg.epochs - 1)
    return cfg.learning_rate * (cfg.final_learning_rate / cfg.learning_rate) ** frac


def train(records, virtuals, hints, model_spec: ModelSpec, cfg: TrainConfig, seed: int = 0, init=None) -> Checkpoint:
    """Fit a gated network with Adam; deterministic for a given seed.

    ``hints`` is a list of :class:`~gatedpricer.synthesis.HintPoint` (used for
    multi models when ``hint_weight > 0``).  The checkpoint metadata carries
    the per-epoch loss trace and the final C2 residual.
    """
    records = list(records)
    if not records:
        raise ValueError("train needs at least one record")
    cfg = cfg.resolved(model_spec.model_type)
    rng = np.random.default_rng(seed)
    params = init if init is not None else model_spec.initialize(rng)
    batch = TrainingBatch.build(records, virtuals, cfg.loss.virtual_weight)
    use_hints = model_spec.model_type == "multi" and cfg.loss.hint_weight > 0 and len(hints) > 0
    if use_hints:
        hm, ht, hd = synthesis.hint_arrays(hints)
    state = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    trace = []
    warned = False
    n = len(batch)
    for epoch in range(cfg.epochs):
        state.learning_rate = learning_rate_at(cfg, epoch)
        if cfg.batch_size and cfg.batch_size < n:
            order = rng.permutation(n)
            chunks = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        else:
            chunks = [slice(None)]
        epoch_loss = 0.0
        for idx in chunks:
            model = make_model(params)
            value, grads = loss(batch.subset(idx), model, cfg.loss)
            if use_hints:
                h_value, h_grads = hint_penalty(model, hm, ht, hd)
                value += cfg.loss.hint_weight * h_value
                grads = _add(grads, h_grads, cfg.loss.hint_weight)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}", epoch - 1)
            try:
                params = adam_step(state, params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}", epoch - 1) from exc
            epoch_loss += value / len(chunks)
        trace.append(epoch_loss)
        if not warned and any(np.max(params.arrays()[k]) > MAX_LOG_WEIGHT for k in ("w_tilde", "w_bar", "w_hat")):
            warnings.warn("weight exponent exceeds the clamp; gradients are saturated", RuntimeWarning, stacklevel=2)
            warned = True

    model = make_model(params)
    taus = np.unique(batch.tau[~batch.virtual]) if np.any(~batch.virtual) else np.unique(batch.tau)
    meta = {
        "epochs": cfg.epochs,
        "final_loss": trace[-1] if trace else None,
        "loss_trace": trace,
        "c2_residual": c2_residual(model, taus),
        "n_records": len(records),
        "n_virtuals": len(list(virtuals)),
        "n_hints": len(hints) if use_hints else 0,
        "config": cfg.to_dict(),
    }
    return Checkpoint(model_spec.model_type, params, seed, meta)


# --------------------------------------------------------------------------
# evaluation


def price_metrics(c, c_hat) -> tuple[float, float]:
    """Dollar MSE and MAPE (percent, over positive prices)."""
    c = np.asarray(c, float)
    c_hat = np.asarray(c_hat, float)
    if c.size == 0:
        return float("nan"), float("nan")
    mse = float(np.mean((c_hat - c) ** 2))
    pos = c > 0
    mape = float(np.mean(np.abs(c_hat[pos] - c[pos]) / c[pos]) * 100.0) if np.any(pos) else float("nan")
    return mse, mape


def nn_prices(model, records) -> np.ndarray:
    """Dollar prices ``exp(-r tau) S y(m, tau)``."""
    a = as_arrays(records)
    return np.exp(-a["r"] * a["tau"]) * a["S"] * model(a["m"], a["tau"])


@dataclass
class WindowResult:
    method: str
    window: int
    train_dates: list
    test_date: object
    train_mse: float
    train_mape: float
    test_mse: float
    test_mape: float
    n_train: int
    n_test: int

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "window": self.window,
            "train_start": self.train_dates[0].isoformat(),
            "train_end": self.train_dates[-1].isoformat(),
            "date": self.test_date.isoformat(),
            "train_mse": repr(self.train_mse),
            "train_mape": repr(self.train_mape),
            "test_mse": repr(self.test_mse),
            "test_mape": repr(self.test_mape),
            "n_train": self.n_train,
            "n_contracts": self.n_test,
        }


@dataclass
class Prediction:
    method: str
    window: int
    split: str
    record: object
    c_hat: float


def windows(dates, train_days: int = 5):
    """``(train_dates, test_date)`` pairs sliding one day at a time."""
    dates = list(dates)
    return [(dates[i:i + train_days], dates[i + train_days]) for i in range(len(dates) - train_days)]


def fit_and_predict(method, train_records, test_records, cfg: TrainConfig, seed: int,
                    model_spec: ModelSpec | None = None, calib_kw: dict | None = None, warm_start=None):
    """Fit ``method`` on the training window and price both splits in dollars.

    Returns ``(train_prices, test_prices, fit)`` where ``fit`` is a
    checkpoint for neural methods and a calibration result for baselines.
    ``warm_start`` seeds baseline calibration with earlier parameters.
    """
    if method in NN_METHODS:
        spec = model_spec if model_spec and model_spec.model_type == method else ModelSpec(method)
        rng = np.random.default_rng(seed)
        virtuals = build_virtuals(train_records, cfg, rng)
        taus = sorted({r.tau_years for r in train_records})
        hints = synthesis.make_hint_grid(taus, cfg.hint_points, (cfg.hint_m_min, cfg.hint_m_max), cfg.hint_delta) if method == "multi" else []
        ckpt = train(train_records, virtuals, hints, spec, cfg, seed)
        model = ckpt.model
        return nn_prices(model, train_records), nn_prices(model, test_records), ckpt
    if method in BASELINE_METHODS:
        from .baselines.calibration import calibrate, model_prices
        from .baselines.levy import LevyModelParams

        last_day = max(r.date for r in train_records)
        day = [r for r in train_records if r.date == last_day]
        result = calibrate(day, method, seed=seed, warm_start=warm_start, **(calib_kw or {}))
        fitted = result.params.model_params

        def price(recs):
            out = np.empty(len(recs))
            groups: dict = {}
            for i, r in enumerate(recs):
                groups.setdefault((r.S, r.r, r.tau_years), []).append(i)
            for (S, rate, tau), idx in groups.items():
                p = LevyModelParams(method, S=S, r=rate, **fitted)
                out[idx] = model_prices(p, tau, np.array([recs[i].K for i in idx]))
            return out

        return price(day), price(test_records), result
    raise ValueError(f"unknown method {method!r}")


def rolling_evaluate(records, methods=("single", "multi"), train_days: int = 5, cfg: TrainConfig | None = None,
                     seed: int = 0, model_specs: dict | None = None, calib_kw: dict | None = None,
                     max_windows: int | None = None):
    """Train on ``train_days`` consecutive dates, test on the next, slide by one.

    Returns ``(results, predictions)``.  Neural methods are scored on all five
    training days; baselines are calibrated to, and scored on, the last one.
    Virtual options never enter the reported metrics.  Each baseline
    calibration is warm-started from the previous window's fit.
    """
    cfg = cfg or TrainConfig()
    by_date = group_by_date(records)
    if len(by_date) < train_days + 1:
        raise ValueError(f"need at least {train_days + 1} distinct dates, got {len(by_date)}")
    results, preds = [], []
    warm: dict = {}
    for w, (train_dates, test_date) in enumerate(windows(by_date, train_days)):
        if max_windows is not None and w >= max_windows:
            break
        test = by_date[test_date]
        if not test:
            log.warning("window %d: empty test day %s skipped", w, test_date)
            continue
        train_recs = [r for d in train_dates for r in by_date[d]]
        assert test_date not in set(train_dates)
        for method in methods:
            spec = (model_specs or {}).get(method)
            train_hat, test_hat, fit = fit_and_predict(method, train_recs, test, cfg, seed + w, spec, calib_kw,
                                                       warm.get(method))
            if method in BASELINE_METHODS:
                warm[method] = fit.params
            scored_train = train_recs if method in NN_METHODS else [r for r in train_recs if r.date == train_dates[-1]]
            tr = price_metrics([r.c for r in scored_train], train_hat)
            te = price_metrics([r.c for r in test], test_hat)
            results.append(WindowResult(method, w, list(train_dates), test_date, *tr, *te, len(scored_train), len(test)))
            preds += [Prediction(method, w, "train", r, float(c)) for r, c in zip(scored_train, train_hat)]
            preds += [Prediction(method, w, "test", r, float(c)) for r, c in zip(test, test_hat)]
            log.info("window %d %s: test mse %.4g mape %.3g%%", w, method, te[0], te[1])
    return results, preds
