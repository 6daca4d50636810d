"""Run configuration: a flat ``key = value`` text file mirrored by :class:`RunConfig`.

Example::

    # training
    model_type = multi
    learning_rate = 0.01
    epochs = 5000
    hint_weight = 100
    methods = single, multi, bs, kou

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .training import LossConfig, ModelSpec, TrainConfig

INT_OR_NONE = ("batch_size", "max_windows", "epochs")
FLOAT_OR_NONE = ("learning_rate", "final_learning_rate")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything that determines a CLI run's outputs."""

    command: str = ""
    inputs: tuple = ()
    out: str = "."
    seed: int = 0
    # model
    model_type: str = "multi"
    J: int = 5
    I: int = 9  # noqa: E741
    K_g: int = 5
    init_scheme: str = "kink_spread"
    # loss
    mse_weight: float = 1.0
    mape_weight: float = 1.0
    hint_weight: float = 100.0
    virtual_weight: float = 1.0
    mape_on_virtuals: bool = True
    # optimiser
    # unset: per-model schedule (see training.MODEL_SCHEDULES)
    learning_rate: float | None = None
    final_learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int | None = None
    batch_size: int | None = None
    # augmentation
    use_virtuals: bool = True
    c5_samples: int = 50
    hint_points: int = 100
    hint_m_min: float = 0.3
    hint_m_max: float = 3.0
    hint_delta: float = 0.001
    # evaluation
    methods: tuple = ("single", "multi", "bs", "vg", "kou")
    train_days: int = 5
    max_windows: int | None = None
    calib_starts: int = 3
    calib_objective: str = "mse"
    extra: dict = field(default_factory=dict)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.mse_weight, self.mape_weight, self.hint_weight, self.virtual_weight,
                          self.mape_on_virtuals)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.loss_config(),
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            epochs=self.epochs,
            final_learning_rate=self.final_learning_rate,
            batch_size=self.batch_size,
            use_virtuals=self.use_virtuals,
            c5_samples=self.c5_samples,
            hint_points=self.hint_points,
            hint_m_min=self.hint_m_min,
            hint_m_max=self.hint_m_max,
            hint_delta=self.hint_delta,
        )

    def model_spec(self, model_type: str | None = None) -> ModelSpec:
        return ModelSpec(model_type or self.model_type, self.J, self.I, self.K_g, self.init_scheme)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["inputs"] = list(self.inputs)
        d["methods"] = list(self.methods)
        return d

    def header_lines(self) -> list[str]:
        """``key = value`` lines for embedding in output files."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "extra":
                for k in sorted(value):
                    lines.append(f"{k} = {format_value(value[k])}")
                continue
            lines.append(f"{f.name} = {format_value(value)}")
        return lines

    def updated(self, **changes) -> "RunConfig":
        known = {f.name for f in fields(self)}
        extra = dict(self.extra)
        for k in [k for k in changes if k not in known]:
            extra[k] = changes.pop(k)
        return dataclasses.replace(self, extra=extra, **changes)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _coerce(name: str, text: str, default):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(default, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, tuple):
        return tuple(s.strip() for s in text.split(",") if s.strip())
    try:
        if isinstance(default, int) or name in INT_OR_NONE:
            return int(text)
        if isinstance(default, float) or name in FLOAT_OR_NONE:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into typed overrides for :class:`RunConfig`."""
    defaults = RunConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(RunConfig) if f.name != "extra"}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, value, known[key])
    return out


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig(**parse_config_text(fh.read()))
