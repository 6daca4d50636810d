"""Option-chain ingestion, filtering and normalisation to training records."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

log = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0
MIN_TAU_DAYS = 2

DEFAULT_SCHEMA = {
    "quote_date": "quote_date",
    "expiry_date": "expiry_date",
    "option_type": "type",
    "strike": "strike",
    "bid": "bid",
    "ask": "ask",
    "underlying_close": "underlying_close",
    "risk_free_rate": "rate",
    "dividend_yield": "dividend_yield",
}
REQUIRED = ("quote_date", "expiry_date", "option_type", "strike", "bid", "ask", "underlying_close")

RECORD_COLUMNS = ("date", "tau_days", "tau_years", "K", "S_t", "r", "m", "c", "y_target")


class IngestError(ValueError):
    pass


class NoUsableQuotes(ValueError):
    pass


@dataclass(frozen=True)
class OptionQuote:
    quote_date: dt.date
    expiry_date: dt.date
    option_type: str
    strike: float
    bid: float
    ask: float
    underlying_close: float
    risk_free_rate: float | None = None
    dividend_yield: float = 0.0

    def __post_init__(self):
        if self.option_type not in ("call", "put"):
            raise ValueError(f"option_type must be 'call' or 'put', got {self.option_type!r}")
        if not self.strike >= 0:
            raise ValueError("strike must be >= 0")
        if not 0 <= self.bid <= self.ask:
            raise ValueError(f"need 0 <= bid <= ask, got bid={self.bid}, ask={self.ask}")
        if not self.underlying_close > 0:
            raise ValueError("underlying_close must be > 0")
        if self.expiry_date < self.quote_date:
            raise ValueError("expiry_date precedes quote_date")

    @property
    def tau_days(self) -> int:
        return (self.expiry_date - self.quote_date).days


@dataclass(frozen=True)
class CallRecord:
    """A normalised call observation.

    ``m = K / S`` and ``y_target = exp(r tau) c / S`` is the rescaled
    undiscounted price the networks are trained on.
    """

    date: dt.date
    tau_days: int
    K: float
    S: float
    c: float
    r: float

    @property
    def tau_years(self) -> float:
        return self.tau_days / DAYS_PER_YEAR

    @property
    def m(self) -> float:
        return self.K / self.S

    @property
    def y_target(self) -> float:
        return math.exp(self.r * self.tau_years) * self.c / self.S

    def as_row(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "tau_days": self.tau_days,
            "tau_years": repr(self.tau_years),
            "K": repr(self.K),
            "S_t": repr(self.S),
            "r": repr(self.r),
            "m": repr(self.m),
            "c": repr(self.c),
            "y_target": repr(self.y_target),
        }


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def _parse_type(text: str) -> str:
    t = text.strip().lower()
    if t in ("c", "call"):
        return "call"
    if t in ("p", "put"):
        return "put"
    raise ValueError(f"unknown option type {text!r}")


def ingest_chain(path, schema: dict | None = None, max_bad_fraction: float = 0.1) -> list[OptionQuote]:
    """Read an option chain CSV into quotes, preserving file order.

    Rows with missing mandatory fields or violating quote invariants are
    skipped and logged with their line number.  If the rejected share exceeds
    ``max_bad_fraction`` an :class:`IngestError` summarising them is raised.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    quotes, rejected = [], []
    with handle:
        reader = csv.DictReader(line for line in handle if not line.startswith("#"))
        for lineno, row in enumerate(reader, start=2):
            try:
                fields = {}
                for key in REQUIRED:
                    raw = row.get(schema[key])
                    if raw is None or raw.strip() == "":
                        raise ValueError(f"missing {schema[key]!r}")
                    fields[key] = raw
                rate = row.get(schema["risk_free_rate"])
                div = row.get(schema["dividend_yield"])
                quotes.append(OptionQuote(
                    quote_date=_parse_date(fields["quote_date"]),
                    expiry_date=_parse_date(fields["expiry_date"]),
                    option_type=_parse_type(fields["option_type"]),
                    strike=float(fields["strike"]),
                    bid=float(fields["bid"]),
                    ask=float(fields["ask"]),
                    underlying_close=float(fields["underlying_close"]),
                    risk_free_rate=float(rate) if rate not in (None, "") else None,
                    dividend_yield=float(div) if div not in (None, "") else 0.0,
                ))
            except ValueError as exc:
                rejected.append((lineno, str(exc)))
                log.warning("%s line %d rejected: %s", path.name, lineno, exc)
    total = len(quotes) + len(rejected)
    if total == 0:
        log.warning("%s contains no quotes", path)
    elif len(rejected) > max_bad_fraction * total:
        summary = "; ".join(f"line {n}: {msg}" for n, msg in rejected[:5])
        raise IngestError(f"{len(rejected)} of {total} rows malformed in {path} ({summary})")
    return quotes


def midpoint_price(q: OptionQuote) -> float:
    return 0.5 * (q.bid + q.ask)


@dataclass(frozen=True)
class RateCurve:
    """Risk-free curve knots ``(days, rate)`` with natural cubic-spline interpolation."""

    days: tuple
    rates: tuple

    def __post_init__(self):
        if len(self.days) < 2 or len(self.days) != len(self.rates):
            raise ValueError("a rate curve needs at least two (days, rate) knots")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("rate curve knots must be strictly increasing in days")

    @classmethod
    def from_knots(cls, knots) -> "RateCurve":
        knots = sorted((float(d), float(r)) for d, r in knots)
        return cls(tuple(d for d, _ in knots), tuple(r for _, r in knots))

    @classmethod
    def from_csv(cls, path) -> "RateCurve":
        with open(path, newline="") as fh:
            rows = csv.DictReader(line for line in fh if not line.startswith("#"))
            return cls.from_knots((row["days"], row["rate"]) for row in rows)

    def _spline(self):
        return CubicSpline(self.days, self.rates, bc_type="natural")


def interpolate_rate(curve: RateCurve, tau_days) -> tuple[float, bool]:
    """Rate at ``tau_days`` and whether the query was clamped to the knot range."""
    lo, hi = curve.days[0], curve.days[-1]
    clamped = not lo <= tau_days <= hi
    if clamped:
        log.info("tau_days=%s outside curve range [%s, %s]; clamped", tau_days, lo, hi)
    x = min(max(float(tau_days), lo), hi)
    return float(curve._spline()(x)), clamped


def put_to_call(p, S, K, r, q_div, tau):
    """Put-call parity: ``c = p + S e^{-q tau} - K e^{-r tau}``."""
    if not S > 0:
        raise ValueError("spot must be positive")
    return p + S * math.exp(-q_div * tau) - K * math.exp(-r * tau)


def call_to_put(c, S, K, r, q_div, tau):
    return c - S * math.exp(-q_div * tau) + K * math.exp(-r * tau)


def filter_and_normalize(quotes, curve: RateCurve | None = None) -> list[CallRecord]:
    """Turn one day's quotes into call records.

    In-the-money calls (``K < S``) and in-the-money puts (``K > S``) are
    dropped as illiquid; surviving puts become in-the-money calls via parity.
    Contracts with fewer than two days to expiry, and conversions that break
    the zero lower bound, are dropped.  The interpolated curve rate is used
    when a curve is supplied, else the quote's own rate.
    """
    quotes = list(quotes)
    dates = {q.quote_date for q in quotes}
    if len(dates) > 1:
        raise ValueError(f"filter_and_normalize expects a single quote_date, got {len(dates)}")
    records = []
    for q in quotes:
        S, K = q.underlying_close, q.strike
        if q.option_type == "call" and K < S:
            continue
        if q.option_type == "put" and K > S:
            continue
        if q.tau_days < MIN_TAU_DAYS:
            continue
        if curve is not None:
            r, _ = interpolate_rate(curve, q.tau_days)
            if q.risk_free_rate is not None and q.risk_free_rate != r:
                log.debug("using interpolated rate %.6g over vendor rate %.6g", r, q.risk_free_rate)
        elif q.risk_free_rate is not None:
            r = q.risk_free_rate
        else:
            raise ValueError("quote has no rate and no rate curve was supplied")
        tau = q.tau_days / DAYS_PER_YEAR
        price = midpoint_price(q)
        if q.option_type == "put":
            price = put_to_call(price, S, K, r, q.dividend_yield, tau)
            if price < 0:
                log.info("dropping put K=%s: parity gives negative call price %.4g", K, price)
                continue
        records.append(CallRecord(q.quote_date, q.tau_days, K, S, price, r))
    if not records:
        raise NoUsableQuotes("no usable quotes after filtering")
    return records


def filter_records(records) -> list[CallRecord]:
    """Record-level filters (maturity, positivity); idempotent."""
    return [r for r in records if r.tau_days >= MIN_TAU_DAYS and r.c >= 0 and r.K > 0 and r.S > 0]


def normalize_chain(quotes, curve: RateCurve | None = None) -> list[CallRecord]:
    """Apply :func:`filter_and_normalize` date by date, in date order."""
    by_date: dict = {}
    for q in quotes:
        by_date.setdefault(q.quote_date, []).append(q)
    out = []
    for date in sorted(by_date):
        try:
            out.extend(filter_and_normalize(by_date[date], curve))
        except NoUsableQuotes:
            log.warning("%s: no usable quotes", date)
    if not out:
        raise NoUsableQuotes("no usable quotes after filtering")
    return out


def write_records(path, records, header: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(r.as_row())


def read_records(path) -> list[CallRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [
            CallRecord(
                date=_parse_date(row["date"]),
                tau_days=int(row["tau_days"]),
                K=float(row["K"]),
                S=float(row["S_t"]),
                c=float(row["c"]),
                r=float(row["r"]),
            )
            for row in reader
        ]


def group_by_date(records) -> dict:
    out: dict = {}
    for r in records:
        out.setdefault(r.date, []).append(r)
    return dict(sorted(out.items()))


def as_arrays(records) -> dict[str, np.ndarray]:
    """Column arrays ``m, tau, y, c, S, r`` for vectorised use."""
    return {
        "m": np.array([r.m for r in records], dtype=float),
        "tau": np.array([r.tau_years for r in records], dtype=float),
        "y": np.array([r.y_target for r in records], dtype=float),
        "c": np.array([r.c for r in records], dtype=float),
        "S": np.array([r.S for r in records], dtype=float),
        "r": np.array([r.r for r in records], dtype=float),
        "K": np.array([r.K for r in records], dtype=float),
    }
