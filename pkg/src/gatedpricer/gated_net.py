"""Gated pricing networks.

The single model is a sum over ``J`` hidden units, each the product of a
softplus "moneyness" neuron and a sigmoid "maturity" neuron::

    y(m, tau) = sum_j softplus(bt_j - m exp(wt_j)) * sigmoid(bb_j + tau exp(wb_j)) * exp(wh_j)

The sign constraints (negative moneyness weight, positive maturity and output
weights, no output bias) make the surface decreasing and convex in ``m``,
increasing in ``tau`` and vanishing as ``m -> inf`` for every parameter value.

The multi model mixes ``I`` such experts with a softmax gate driven by a
one-hidden-layer sigmoid network of width ``K_g``.

All evaluations are vectorised over points: ``m`` and ``tau`` broadcast to a
common 1-d shape ``(N,)``.  Parameter gradients are returned summed over points
and are computed for an arbitrary linear functional ``sum_n dy_n * y_n +
dg_n * g_n`` where ``g = dy/dm``; this covers both the pricing loss and the
convexity hint penalty.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

# Weight exponentials are clamped at exp(MAX_LOG_WEIGHT).
MAX_LOG_WEIGHT = 20.0

EXPERT_FIELDS = ("w_tilde", "b_tilde", "w_bar", "b_bar", "w_hat")
GATE_FIELDS = ("W_dot", "b_dot", "W_ddot", "b_ddot")

# "kink_spread": each softplus unit starts as a hinge at a random moneyness in
# KINK_RANGE with slope exp(w_tilde) log-uniform in SLOPE_RANGE, scaled so the
# surface starts at the size of a call price.  "uniform_bias": small weights
# with b_tilde ~ U[0, 3]; its outputs start near 4 and the softplus units tend
# to die while the output shrinks, so it is kept for comparison only.
INIT_SCHEMES = ("kink_spread", "uniform_bias")
KINK_RANGE = (0.6, 1.4)
SLOPE_RANGE = (3.0, 100.0)


def softplus(x):
    """``log(1 + e^x)``, overflow safe for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    return expit(x)


def _pos(w):
    return np.exp(np.minimum(w, MAX_LOG_WEIGHT))


def _check_finite(params) -> None:
    for name, arr in params.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in parameter block {name!r}")


class _ParamsMixin:
    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def replace(self, **arrays):
        return dataclasses.replace(self, **arrays)

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def copy(self):
        return type(self)(**{k: np.array(v, dtype=float) for k, v in self.arrays().items()})


@dataclass
class SingleModelParams(_ParamsMixin):
    """Five parameter blocks of one gated expert, each of shape ``(J,)``.

    The same container is used with shape ``(I, J)`` blocks for the stacked
    experts of a multi model.
    """

    w_tilde: np.ndarray
    b_tilde: np.ndarray
    w_bar: np.ndarray
    b_bar: np.ndarray
    w_hat: np.ndarray

    def __post_init__(self):
        for name in EXPERT_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        shape = self.w_tilde.shape
        if any(getattr(self, n).shape != shape for n in EXPERT_FIELDS):
            raise ValueError("all expert parameter blocks must share one shape")

    @property
    def J(self) -> int:
        return self.w_tilde.shape[-1]

    @classmethod
    def initialize(cls, J: int = 5, rng=None, leading: tuple = (), scheme: str = "kink_spread") -> "SingleModelParams":
        rng = np.random.default_rng(rng)
        shape = tuple(leading) + (J,)
        if scheme == "uniform_bias":
            return cls(
                w_tilde=rng.normal(0.0, 0.1, shape),
                b_tilde=rng.uniform(0.0, 3.0, shape),
                w_bar=rng.normal(0.0, 0.1, shape),
                b_bar=rng.normal(0.0, 1.0, shape),
                w_hat=rng.normal(0.0, 0.1, shape),
            )
        if scheme != "kink_spread":
            raise ValueError(f"unknown init scheme {scheme!r}; choose from {INIT_SCHEMES}")
        w_tilde = rng.uniform(np.log(SLOPE_RANGE[0]), np.log(SLOPE_RANGE[1]), shape)
        kink = rng.uniform(*KINK_RANGE, shape)
        return cls(
            w_tilde=w_tilde,
            b_tilde=kink * np.exp(w_tilde),
            w_bar=rng.uniform(0.0, 3.0, shape),
            b_bar=rng.normal(0.0, 1.0, shape),
            w_hat=-w_tilde - np.log(J) + rng.normal(0.0, 0.1, shape),
        )


@dataclass
class MultiModelParams(_ParamsMixin):
    """``I`` stacked experts plus the softmax gating network.

    Expert blocks have shape ``(I, J)``; ``W_dot`` is ``(2, K_g)``,
    ``b_dot`` is ``(K_g,)``, ``W_ddot`` is ``(K_g, I)`` and ``b_ddot`` is ``(I,)``.
    """

    w_tilde: np.ndarray
    b_tilde: np.ndarray
    w_bar: np.ndarray
    b_bar: np.ndarray
    w_hat: np.ndarray
    W_dot: np.ndarray
    b_dot: np.ndarray
    W_ddot: np.ndarray
    b_ddot: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=float))
        I, J = self.w_tilde.shape
        K_g = self.b_dot.shape[0]
        expected = {
            "W_dot": (2, K_g),
            "W_ddot": (K_g, I),
            "b_ddot": (I,),
        }
        for name in EXPERT_FIELDS:
            expected[name] = (I, J)
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def I(self) -> int:  # noqa: E743
        return self.w_tilde.shape[0]

    @property
    def J(self) -> int:
        return self.w_tilde.shape[1]

    @property
    def K_g(self) -> int:
        return self.b_dot.shape[0]

    @property
    def experts(self) -> SingleModelParams:
        return SingleModelParams(*(getattr(self, n) for n in EXPERT_FIELDS))

    def expert(self, i: int) -> SingleModelParams:
        return SingleModelParams(*(getattr(self, n)[i] for n in EXPERT_FIELDS))

    @classmethod
    def from_experts(cls, experts: list[SingleModelParams], W_dot, b_dot, W_ddot, b_ddot):
        stacked = {n: np.stack([getattr(e, n) for e in experts]) for n in EXPERT_FIELDS}
        return cls(**stacked, W_dot=W_dot, b_dot=b_dot, W_ddot=W_ddot, b_ddot=b_ddot)

    @classmethod
    def initialize(cls, I: int = 9, J: int = 5, K_g: int = 5, rng=None, scheme: str = "kink_spread") -> "MultiModelParams":  # noqa: E741
        rng = np.random.default_rng(rng)
        experts = SingleModelParams.initialize(J, rng, leading=(I,), scheme=scheme)
        return cls(
            **experts.arrays(),
            W_dot=rng.normal(0.0, 1.0, (2, K_g)),
            b_dot=rng.normal(0.0, 1.0, K_g),
            W_ddot=rng.normal(0.0, 1.0, (K_g, I)),
            b_ddot=np.zeros(I),
        )


# --------------------------------------------------------------------------
# single model


@dataclass
class _ExpertTerms:
    """Per-unit intermediate quantities, shape ``(N, *leading, J)``."""

    m: np.ndarray
    tau: np.ndarray
    ewt: np.ndarray
    ewb: np.ndarray
    ewh: np.ndarray
    A: np.ndarray  # softplus(a)
    Ap: np.ndarray  # sigmoid(a)
    App: np.ndarray  # sigmoid'(a)
    B: np.ndarray  # sigmoid(s)
    Bp: np.ndarray  # sigmoid'(s)


def _expert_terms(p: SingleModelParams, m, tau) -> _ExpertTerms:
    m, tau = np.broadcast_arrays(np.atleast_1d(np.asarray(m, float)), np.atleast_1d(np.asarray(tau, float)))
    if m.ndim != 1:
        raise ValueError("m and tau must be scalars or 1-d arrays")
    extra = (1,) * p.w_tilde.ndim
    mm = m.reshape(m.shape + extra)
    tt = tau.reshape(tau.shape + extra)
    ewt, ewb, ewh = _pos(p.w_tilde), _pos(p.w_bar), _pos(p.w_hat)
    a = p.b_tilde - mm * ewt
    s = p.b_bar + tt * ewb
    Ap = sigmoid(a)
    B = sigmoid(s)
    return _ExpertTerms(
        m=mm, tau=tt, ewt=ewt, ewb=ewb, ewh=ewh,
        A=softplus(a), Ap=Ap, App=Ap * (1.0 - Ap), B=B, Bp=B * (1.0 - B),
    )


def _expert_values(t: _ExpertTerms):
    """Return y, dy/dm, d2y/dm2, dy/dtau summed over the last (hidden) axis."""
    y = np.sum(t.A * t.B * t.ewh, axis=-1)
    dm = np.sum(-t.ewt * t.Ap * t.B * t.ewh, axis=-1)
    d2m = np.sum(t.ewt**2 * t.App * t.B * t.ewh, axis=-1)
    dtau = np.sum(t.ewb * t.A * t.Bp * t.ewh, axis=-1)
    return y, dm, d2m, dtau


def _expert_param_grads(t: _ExpertTerms, dy=None, dg=None) -> dict[str, np.ndarray]:
    """Gradient of ``sum_n dy_n y_n + dg_n g_n`` w.r.t. the expert blocks.

    ``dy`` and ``dg`` have the shape of the expert outputs, ``(N, *leading)``;
    ``None`` skips that path.
    """
    ewt, ewh = t.ewt, t.ewh
    if dy is None and dg is None:
        zero = np.zeros(t.A.shape[1:])
        return {k: zero.copy() for k in EXPERT_FIELDS}
    # y_j = A B h;  g_j = -e^{wt} A' B h
    d_bt = d_wt = d_s = d_wh = 0.0
    if dy is not None:
        dy = np.asarray(dy, float)[..., None]
        ApBh = dy * t.Ap * t.B * ewh
        d_bt = ApBh
        d_wt = -ApBh * t.m * ewt
        d_s = dy * t.A * t.Bp * ewh
        d_wh = dy * t.A * t.B * ewh
    if dg is not None:
        dg = np.asarray(dg, float)[..., None]
        gBh = dg * ewt * t.B * ewh
        d_bt = d_bt - gBh * t.App
        d_wt = d_wt - gBh * (t.Ap - t.m * ewt * t.App)
        d_s = d_s - dg * ewt * t.Ap * t.Bp * ewh
        d_wh = d_wh - gBh * t.Ap
    grads = dict(w_tilde=d_wt, b_tilde=d_bt, b_bar=d_s, w_bar=d_s * t.tau * t.ewb, w_hat=d_wh)
    return {k: np.sum(v, axis=0) for k, v in grads.items()}


def single_forward(p: SingleModelParams, m, tau):
    """Price ``y(m, tau)`` of a single gated model at each point."""
    _check_finite(p)
    return _expert_values(_expert_terms(p, m, tau))[0]


def single_dm(p: SingleModelParams, m, tau):
    return _expert_values(_expert_terms(p, m, tau))[1]


def single_d2m(p: SingleModelParams, m, tau):
    return _expert_values(_expert_terms(p, m, tau))[2]


def single_dtau(p: SingleModelParams, m, tau):
    return _expert_values(_expert_terms(p, m, tau))[3]


def single_param_grads(p: SingleModelParams, m, tau, upstream=1.0, upstream_dm=0.0) -> SingleModelParams:
    """Gradient of ``sum(upstream * y + upstream_dm * dy/dm)`` w.r.t. ``p``."""
    return _single_grads_from_terms(_expert_terms(p, m, tau), upstream, upstream_dm)


def _upstream(value, n):
    """Broadcast an upstream weight to ``(n,)``, or ``None`` when identically zero."""
    arr = np.asarray(value, float)
    if not np.any(arr):
        return None
    return np.broadcast_to(arr, (n,))


def _single_grads_from_terms(t: _ExpertTerms, upstream, upstream_dm) -> SingleModelParams:
    n = t.m.shape[0]
    return SingleModelParams(**_expert_param_grads(t, _upstream(upstream, n), _upstream(upstream_dm, n)))


# --------------------------------------------------------------------------
# multi model


@dataclass
class _MultiState:
    terms: _ExpertTerms
    y_i: np.ndarray  # (N, I)
    g_i: np.ndarray
    d2_i: np.ndarray
    dt_i: np.ndarray
    u: np.ndarray  # (N, K_g) gate pre-activations
    H: np.ndarray
    Hp: np.ndarray
    w: np.ndarray  # (N, I) softmax weights
    z_m: np.ndarray  # dz/dm, (N, I)
    z_t: np.ndarray  # dz/dtau
    m: np.ndarray
    tau: np.ndarray


def _multi_state(p: MultiModelParams, m, tau) -> _MultiState:
    terms = _expert_terms(p.experts, m, tau)
    y_i, g_i, d2_i, dt_i = _expert_values(terms)
    mm = terms.m[:, 0, 0]
    tt = terms.tau[:, 0, 0]
    u = np.outer(mm, p.W_dot[0]) + np.outer(tt, p.W_dot[1]) + p.b_dot
    H = sigmoid(u)
    Hp = H * (1.0 - H)
    z = H @ p.W_ddot + p.b_ddot
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=1, keepdims=True)
    z_m = (Hp * p.W_dot[0]) @ p.W_ddot
    z_t = (Hp * p.W_dot[1]) @ p.W_ddot
    return _MultiState(terms, y_i, g_i, d2_i, dt_i, u, H, Hp, w, z_m, z_t, mm, tt)


def gating_weights(p: MultiModelParams, m, tau):
    """Softmax expert weights, shape ``(N, I)``; rows sum to one."""
    return _multi_state(p, m, tau).w


def multi_forward(p: MultiModelParams, m, tau):
    _check_finite(p)
    st = _multi_state(p, m, tau)
    return np.sum(st.w * st.y_i, axis=1)


def _multi_dm(st: _MultiState):
    y = np.sum(st.w * st.y_i, axis=1, keepdims=True)
    return np.sum(st.w * (st.g_i + (st.y_i - y) * st.z_m), axis=1)


def multi_dm(p: MultiModelParams, m, tau):
    """Analytic ``dy/dm`` of the mixture, including the gate's dependence on ``m``."""
    return _multi_dm(_multi_state(p, m, tau))


def multi_dtau(p: MultiModelParams, m, tau):
    st = _multi_state(p, m, tau)
    y = np.sum(st.w * st.y_i, axis=1, keepdims=True)
    return np.sum(st.w * (st.dt_i + (st.y_i - y) * st.z_t), axis=1)


def multi_d2m(p: MultiModelParams, m, tau, h: float = 1e-3):
    """Central second difference of ``y`` in ``m`` with step ``h``."""
    m, tau = np.broadcast_arrays(np.atleast_1d(np.asarray(m, float)), np.atleast_1d(np.asarray(tau, float)))
    return (multi_forward(p, m + h, tau) - 2.0 * multi_forward(p, m, tau) + multi_forward(p, m - h, tau)) / h**2


def multi_param_grads(p: MultiModelParams, m, tau, upstream=1.0, upstream_dm=0.0) -> MultiModelParams:
    """Gradient of ``sum(upstream * y + upstream_dm * dy/dm)`` w.r.t. every block of ``p``.

    With ``y = sum_i w_i y_i`` and ``g = dy/dm = sum_i w_i (g_i + (y_i - y) zm_i)``
    where ``zm = dz/dm`` is the gate-logit sensitivity to moneyness.
    """
    return _multi_grads_from_state(p, _multi_state(p, m, tau), upstream, upstream_dm)


def _multi_grads_from_state(p: MultiModelParams, st: _MultiState, upstream, upstream_dm) -> MultiModelParams:
    n = st.m.shape[0]
    dy = _upstream(upstream, n)
    dg = _upstream(upstream_dm, n)
    w, y_i, g_i, zm = st.w, st.y_i, st.g_i, st.z_m
    y = np.sum(w * y_i, axis=1, keepdims=True)
    zbar = np.sum(w * zm, axis=1, keepdims=True)

    # g = sum w g_i + sum w y_i zm - y * zbar
    d_yi = d_gi = None
    d_w = np.zeros_like(w)
    d_zm = np.zeros_like(w)
    if dy is not None:
        dy = dy[:, None]
        d_yi = dy * w
        d_w += dy * y_i
    if dg is not None:
        dg = dg[:, None]
        extra = dg * w * (zm - zbar)
        d_yi = extra if d_yi is None else d_yi + extra
        d_gi = dg * w
        d_w += dg * (g_i + y_i * zm - y_i * zbar - y * zm)
        d_zm = dg * w * (y_i - y)
    if d_yi is None:
        return p.zeros_like()
    grads = _expert_param_grads(st.terms, d_yi, d_gi)
    d_z = w * (d_w - np.sum(w * d_w, axis=1, keepdims=True))

    H, Hp, W1 = st.H, st.Hp, p.W_dot[0]
    grads["b_ddot"] = d_z.sum(axis=0)
    grads["W_ddot"] = H.T @ d_z + (Hp * W1).T @ d_zm
    d_H = d_z @ p.W_ddot.T
    P = d_zm @ p.W_ddot.T  # d/d(Hp_k W1_k)
    d_Hp = P * W1
    d_u = d_H * Hp + d_Hp * Hp * (1.0 - 2.0 * H)
    d_W1 = st.m @ d_u + np.sum(Hp * P, axis=0)
    d_W2 = st.tau @ d_u
    grads["W_dot"] = np.stack([d_W1, d_W2])
    grads["b_dot"] = d_u.sum(axis=0)
    return MultiModelParams(**grads)


# --------------------------------------------------------------------------
# model wrappers and checkpoints


class SingleModel:
    """Pricing surface backed by :class:`SingleModelParams`."""

    model_type = "single"

    def __init__(self, params: SingleModelParams):
        self.params = params

    def __call__(self, m, tau):
        return single_forward(self.params, m, tau)

    def dm(self, m, tau):
        return single_dm(self.params, m, tau)

    def d2m(self, m, tau):
        return single_d2m(self.params, m, tau)

    def dtau(self, m, tau):
        return single_dtau(self.params, m, tau)

    def param_grads(self, m, tau, upstream=1.0, upstream_dm=0.0):
        return single_param_grads(self.params, m, tau, upstream, upstream_dm)

    def evaluate(self, m, tau):
        """``(y, dy/dm, cache)``; pass the cache to :meth:`grads_from_cache`."""
        t = _expert_terms(self.params, m, tau)
        y, g, _, _ = _expert_values(t)
        return y, g, t

    def grads_from_cache(self, cache, upstream=0.0, upstream_dm=0.0):
        return _single_grads_from_terms(cache, upstream, upstream_dm)

    @property
    def shape_info(self) -> dict:
        return {"J": self.params.J, "I": 1, "K_g": 0}


class MultiModel:
    """Softmax-gated mixture of single experts.

    ``d2m`` is a finite difference (step ``h``); the mixture is not convex
    by construction.
    """

    model_type = "multi"

    def __init__(self, params: MultiModelParams, h: float = 1e-3):
        self.params = params
        self.h = h

    def __call__(self, m, tau):
        return multi_forward(self.params, m, tau)

    def dm(self, m, tau):
        return multi_dm(self.params, m, tau)

    def d2m(self, m, tau):
        return multi_d2m(self.params, m, tau, self.h)

    def dtau(self, m, tau):
        return multi_dtau(self.params, m, tau)

    def weights(self, m, tau):
        return gating_weights(self.params, m, tau)

    def param_grads(self, m, tau, upstream=1.0, upstream_dm=0.0):
        return multi_param_grads(self.params, m, tau, upstream, upstream_dm)

    def evaluate(self, m, tau):
        st = _multi_state(self.params, m, tau)
        return np.sum(st.w * st.y_i, axis=1), _multi_dm(st), st

    def grads_from_cache(self, cache, upstream=0.0, upstream_dm=0.0):
        return _multi_grads_from_state(self.params, cache, upstream, upstream_dm)

    @property
    def shape_info(self) -> dict:
        return {"J": self.params.J, "I": self.params.I, "K_g": self.params.K_g}


def make_model(params):
    if isinstance(params, MultiModelParams):
        return MultiModel(params)
    return SingleModel(params)


@dataclass
class Checkpoint:
    model_type: str
    params: SingleModelParams | MultiModelParams
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def model(self):
        return make_model(self.params)

    def to_dict(self) -> dict:
        info = make_model(self.params).shape_info
        return {
            "model_type": self.model_type,
            **info,
            "seed": self.seed,
            "params": {k: v.tolist() for k, v in self.params.arrays().items()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Checkpoint":
        arrays = {k: np.array(v, dtype=float) for k, v in doc["params"].items()}
        kind = doc["model_type"]
        if kind == "single":
            params = SingleModelParams(**arrays)
        elif kind == "multi":
            params = MultiModelParams(**arrays)
        else:
            raise ValueError(f"unknown model_type {kind!r}")
        return cls(kind, params, doc.get("seed"), doc.get("metadata", {}))

    def dumps(self) -> str:
        # float repr is the shortest string that round-trips bit-exactly
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))
