"""Payment-log ingestion, currency-to-time conversion, and synthetic fixtures.

Files carry wall-clock ISO datetimes; everything in memory works in float
minutes measured from an explicit epoch. The synthetic pipeline writes paid
time directly in minutes (`amount_unit="minutes"`), skipping the rate table
that real dollar amounts need.
"""

import csv
import json
import logging
import math
import re
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # stdlib from 3.11; backport below
    import tomli as tomllib
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .abc_filter import Observation
from .estimators import GroundTruth, OccupancyTrajectory
from .payment_model import MeterState, PaymentMixture, sample_payment_amount, update_meter
from .queue_core import build_sample_path, default_distributions, occupancy_profile
from .state_model import ModelParams

__all__ = [
    "PaymentRecord",
    "RateSchedule",
    "Scenario",
    "ScenarioResult",
    "CsvFormatError",
    "MissingRateError",
    "ConfigError",
    "parse_payments",
    "payments_to_observations",
    "parse_ground_truth",
    "generate_scenario",
    "simulate_scenario",
    "scenario_from_config",
    "load_config",
    "to_minutes",
    "from_minutes",
    "write_payments_csv",
    "write_truth_csv",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

logger = logging.getLogger(__name__)

MS_MINUTES = 0.001 / 60.0  # one millisecond, the tie-break perturbation

_DT_RE = re.compile(
    r"^(\d{4})-(\d{1,2})-(\d{1,2})[ T](\d{1,2}):(\d{2}):(\d{2})(\.\d+)?$"
)


class CsvFormatError(ValueError):
    """Malformed rows; `errors` holds (line_number, message) pairs."""

    def __init__(self, errors, what):
        self.errors = list(errors)
        shown = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:10])
        super().__init__(f"{what}: {shown}")


class MissingRateError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def parse_datetime(text):
    """ISO-8601 datetimes, tolerating single-digit month/day/hour fields."""
    text = text.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    m = _DT_RE.match(text)
    if m is None:
        raise ValueError(f"unrecognized datetime {text!r}")
    frac = m.group(7)
    micros = round(float(frac) * 1_000_000) if frac else 0
    return datetime(*(int(m.group(i)) for i in range(1, 7)), microsecond=micros)


def to_minutes(ts, epoch):
    """Wall-clock datetime -> float minutes since epoch."""
    return (ts - epoch).total_seconds() / 60.0


def from_minutes(minutes, epoch):
    """Float minutes since epoch -> wall-clock datetime (microsecond grain)."""
    return epoch + timedelta(minutes=float(minutes))


@dataclass(frozen=True)
class PaymentRecord:
    block_id: str
    timestamp: datetime
    amount: float

    def __post_init__(self):
        if not (math.isfinite(self.amount) and self.amount >= 0):
            raise ValueError("amount must be finite and >= 0")


@dataclass(frozen=True)
class RateSchedule:
    """Per-block price table: block_id -> ((start_min, end_min, $/hour), ...).

    Window bounds are minutes of the day; windows must not overlap within a
    block. Build from config with `RateSchedule.from_config`.
    """

    entries: dict

    def __post_init__(self):
        norm = {}
        for block, windows in self.entries.items():
            rows = sorted((float(a), float(b), float(p)) for a, b, p in windows)
            for (a, b, p) in rows:
                if not (0 <= a < b <= 1440):
                    raise ValueError(f"window [{a}, {b}) out of range for {block}")
                if p <= 0:
                    raise ValueError(f"price must be positive for {block}")
            for (_, b1, _), (a2, _, _) in zip(rows, rows[1:]):
                if a2 < b1:
                    raise ValueError(f"overlapping rate windows for {block}")
            norm[str(block)] = tuple(rows)
        object.__setattr__(self, "entries", norm)

    @classmethod
    def from_config(cls, raw):
        """{"B1": [["09:00", "18:00", 2.0], ...]} with HH:MM window bounds."""
        entries = {}
        for block, windows in raw.items():
            entries[block] = [
                (_parse_tod(a), _parse_tod(b), float(p)) for a, b, p in windows
            ]
        return cls(entries)

    def rate_at(self, block_id, ts):
        """$/hour at the timestamp, or None when no window covers it."""
        tod = ts.hour * 60.0 + ts.minute + ts.second / 60.0 + ts.microsecond / 6e7
        for a, b, price in self.entries.get(str(block_id), ()):
            if a <= tod < b:
                return price
        return None


def _parse_tod(text):
    h, m = text.split(":")
    return int(h) * 60.0 + float(m)


def parse_payments(file):
    """Read `block_id,date,amount` rows, sorted by time within block.

    Exact duplicate rows are dropped (count logged); bad rows abort with the
    first ten errors and their line numbers.
    """

    def _run(fh):
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["block_id", "date", "amount"]:
            raise CsvFormatError([(1, f"expected header block_id,date,amount, got {header}")],
                                 "payment file")
        records, errors, seen, dupes = [], [], set(), 0
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 columns, got {len(row)}")
                block, ts_raw, amt_raw = row
                key = (block, ts_raw.strip(), amt_raw.strip())
                if key in seen:
                    dupes += 1
                    continue
                seen.add(key)
                records.append(
                    PaymentRecord(block, parse_datetime(ts_raw), float(amt_raw))
                )
            except ValueError as exc:
                errors.append((ln, str(exc)))
                if len(errors) >= 10:
                    break
        if errors:
            raise CsvFormatError(errors, "payment file")
        if dupes:
            logger.info("dropped %d duplicate payment rows", dupes)
        return sorted(records, key=lambda r: (r.block_id, r.timestamp))

    if hasattr(file, "read"):
        return _run(file)
    with open(file, newline="") as fh:
        return _run(fh)


def payments_to_observations(
    records, rates, block, window, amount_unit="dollars"
):
    """Convert one block's payments inside the window to (time, balance) pairs.

    Times are minutes from the window start; balances fold the meter
    recursion from an empty meter at the window start. Payments sharing a
    timestamp are nudged forward a millisecond each (one station serializes
    payments), with a warning. Zero-amount rows are dropped: the model's
    observations are the nonzero payments.
    """
    start, end = window
    if not start < end:
        raise ValueError("window start must precede its end")
    mine = sorted(
        (r for r in records if r.block_id == block and start <= r.timestamp <= end),
        key=lambda r: r.timestamp,
    )
    outside = sum(1 for r in records if r.block_id == block) - len(mine)
    if outside:
        logger.info("dropped %d payments outside the window", outside)
    if amount_unit not in ("dollars", "minutes"):
        raise ValueError("amount_unit must be 'dollars' or 'minutes'")

    out = []
    state = MeterState(0.0, 0.0)
    prev_tau = 0.0
    zero_rows = 0
    for rec in mine:
        if rec.amount == 0.0:
            zero_rows += 1
            continue
        if amount_unit == "minutes":
            paid = rec.amount
        else:
            price = rates.rate_at(block, rec.timestamp) if rates else None
            if price is None:
                raise MissingRateError(
                    f"no rate for block {block} at {rec.timestamp.isoformat()}"
                )
            paid = rec.amount / price * 60.0
        tau = to_minutes(rec.timestamp, start)
        if tau <= prev_tau:
            tau = prev_tau + MS_MINUTES
            warnings.warn(
                f"payment at {rec.timestamp.isoformat()} shares its instant; "
                "perturbed by 1 ms"
            )
        state = update_meter(state, paid, tau)
        out.append(Observation(pay_time=tau, meter_balance=state.balance))
        prev_tau = tau
    if zero_rows:
        logger.info("dropped %d zero-amount rows", zero_rows)
    return out


def parse_ground_truth(file, epoch=None):
    """Read `block_id,time,occupied,capacity` rows.

    Returns ({block_id: GroundTruth}, epoch); times become minutes from the
    epoch (default: the earliest snapshot in the file). Rows with
    occupied > capacity are rejected with their line numbers.
    """

    def _run(fh):
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["block_id", "time", "occupied", "capacity"]
        if header is None or [h.strip() for h in header] != expected:
            raise CsvFormatError(
                [(1, f"expected header {','.join(expected)}, got {header}")],
                "truth file",
            )
        rows, errors = [], []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 columns, got {len(row)}")
                block, ts_raw, occ_raw, cap_raw = row
                occ, cap = int(occ_raw), int(cap_raw)
                if occ < 0 or cap < 1:
                    raise ValueError("need occupied >= 0 and capacity >= 1")
                if occ > cap:
                    raise ValueError(f"occupied {occ} exceeds capacity {cap}")
                rows.append((block, parse_datetime(ts_raw), occ, cap))
            except ValueError as exc:
                errors.append((ln, str(exc)))
                if len(errors) >= 10:
                    break
        if errors:
            raise CsvFormatError(errors, "truth file")
        return rows

    rows = _run(file) if hasattr(file, "read") else None
    if rows is None:
        with open(file, newline="") as fh:
            rows = _run(fh)
    if not rows:
        return {}, epoch
    if epoch is None:
        epoch = min(ts for _, ts, _, _ in rows)
    out = {}
    for block in sorted({r[0] for r in rows}):
        mine = sorted((r for r in rows if r[0] == block), key=lambda r: r[1])
        out[block] = GroundTruth(
            snapshot_times=[to_minutes(ts, epoch) for _, ts, _, _ in mine],
            occupied=[occ for _, _, occ, _ in mine],
            capacity=[cap for _, _, _, cap in mine],
        )
    return out, epoch


@dataclass(frozen=True)
class Scenario:
    """Synthetic-experiment description: parameters, payment count, seed."""

    theta: ModelParams
    num_payments: int
    seed: object
    origin: datetime = datetime(2012, 1, 3, 9, 0, 0)
    block_id: str = "B1"

    def __post_init__(self):
        if self.num_payments < 1:
            raise ValueError("num_payments must be >= 1")


@dataclass(frozen=True)
class ScenarioResult:
    """Full simulation record; `observations` is what inference may see."""

    observations: list
    true_path: object
    truth: GroundTruth
    amounts: np.ndarray
    payer_index: np.ndarray


def simulate_scenario(sc):
    """Run the generative model until the K-th nonzero payment.

    Per arrival, in a fixed draw order: inter-arrival gap, parking duration,
    then the payment (zero atom + exponential amount). Stops at the arrival
    making the K-th payment; occupancy past that arrival's service start is
    unaffected by the unsimulated future, so the truth grid ends there.
    """
    th = sc.theta
    rng = np.random.default_rng(sc.seed)
    ia_dist, sv_dist = default_distributions(th)
    mix = PaymentMixture(th.compliance)
    alphas, nus, amounts, payer_idx = [], [], [], []
    j = 0
    while len(payer_idx) < sc.num_payments:
        alphas.append(float(ia_dist.sample(rng)))
        nu = float(sv_dist.sample(rng))
        nus.append(nu)
        beta = sample_payment_amount(nu, mix, rng)
        if beta > 0.0:
            amounts.append(beta)
            payer_idx.append(j)
        j += 1

    path = build_sample_path((alphas, nus, th.spaces))
    payer_idx = np.array(payer_idx, dtype=np.int64)
    amounts = np.array(amounts, dtype=float)
    pay_times = path.service_starts[payer_idx]

    obs = []
    state = MeterState(0.0, 0.0)
    prev = 0.0
    for tau, beta in zip(pay_times, amounts):
        tau = float(tau)
        if tau <= prev:
            tau = prev + MS_MINUTES
            warnings.warn("coincident simulated payments; perturbed by 1 ms")
        state = update_meter(state, float(beta), tau)
        obs.append(Observation(pay_time=tau, meter_balance=state.balance))
        prev = tau

    last = obs[-1].pay_time
    grid = np.arange(0.0, last + 1e-9, 5.0)
    occupied = occupancy_profile(path, grid)
    truth = GroundTruth(
        snapshot_times=grid,
        occupied=occupied,
        capacity=np.full(len(grid), th.spaces, dtype=np.int64),
    )
    return ScenarioResult(obs, path, truth, amounts, payer_idx)


def generate_scenario(sc):
    """(observations, true path, truth on a 5-minute grid) for a Scenario."""
    res = simulate_scenario(sc)
    return res.observations, res.true_path, res.truth


def load_config(path):
    """Read a JSON or TOML config into a dict."""
    path = str(path)
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def scenario_from_config(cfg):
    """Build a Scenario from {lambda, mean_parking, compliance, spaces,
    num_payments, seed, origin[, block_id]}, naming any offending field."""
    required = ("lambda", "mean_parking", "compliance", "spaces", "num_payments", "seed")
    for key in required:
        if key not in cfg:
            raise ConfigError(f"missing config field: {key}")
    try:
        theta = ModelParams(
            lam=float(cfg["lambda"]),
            mean_parking=float(cfg["mean_parking"]),
            compliance=float(cfg["compliance"]),
            spaces=int(cfg["spaces"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc
    try:
        origin = (
            parse_datetime(cfg["origin"]) if "origin" in cfg else Scenario.origin
        )
    except ValueError as exc:
        raise ConfigError(f"invalid origin: {exc}") from exc
    try:
        return Scenario(
            theta=theta,
            num_payments=int(cfg["num_payments"]),
            seed=cfg["seed"],
            origin=origin,
            block_id=str(cfg.get("block_id", "B1")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def _open_out(file, fn):
    if hasattr(file, "write"):
        return fn(file)
    with open(file, "w", newline="") as fh:
        return fn(fh)


def write_payments_csv(file, block_id, pay_times, amounts, epoch):
    """`block_id,date,amount` rows; amounts are written exactly (repr)."""

    def _run(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "date", "amount"])
        for tau, amt in zip(pay_times, amounts):
            w.writerow(
                [block_id, from_minutes(tau, epoch).isoformat(sep=" "), repr(float(amt))]
            )

    _open_out(file, _run)


def write_truth_csv(file, block_id, truth, epoch):
    def _run(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "time", "occupied", "capacity"])
        for t, occ, cap in zip(truth.snapshot_times, truth.occupied, truth.capacity):
            w.writerow(
                [block_id, from_minutes(t, epoch).isoformat(sep=" "), int(occ), int(cap)]
            )

    _open_out(file, _run)


def write_trajectory_csv(file, traj, epoch):
    """`time,q05,q25,q50,q75,q95` rows from an OccupancyTrajectory."""
    levels = (0.05, 0.25, 0.5, 0.75, 0.95)

    def _run(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "q05", "q25", "q50", "q75", "q95"])
        for i, t in enumerate(traj.eval_times):
            row = [from_minutes(t, epoch).isoformat(sep=" ")]
            row += [repr(float(traj.quantiles[lv][i])) for lv in levels]
            w.writerow(row)

    _open_out(file, _run)


def read_trajectory_csv(file, epoch=None):
    """Read a quantile band back; returns (OccupancyTrajectory, epoch).

    The CSV stores no mean or capacity: the mean is set to the median and
    the capacity to the smallest integer bounding the top band.
    """

    def _run(fh):
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["time", "q05", "q25", "q50", "q75", "q95"]
        if header is None or [h.strip() for h in header] != expected:
            raise CsvFormatError(
                [(1, f"expected header {','.join(expected)}, got {header}")],
                "trajectory file",
            )
        return [row for row in reader if row]

    rows = _run(file) if hasattr(file, "read") else None
    if rows is None:
        with open(file, newline="") as fh:
            rows = _run(fh)
    if not rows:
        raise CsvFormatError([(2, "no data rows")], "trajectory file")
    stamps = [parse_datetime(r[0]) for r in rows]
    if epoch is None:
        epoch = min(stamps)
    times = np.array([to_minutes(ts, epoch) for ts in stamps])
    levels = (0.05, 0.25, 0.5, 0.75, 0.95)
    cols = np.array([[float(v) for v in r[1:6]] for r in rows])
    qs = {lv: cols[:, i] for i, lv in enumerate(levels)}
    capacity = int(math.ceil(cols[:, 4].max())) or 1
    traj = OccupancyTrajectory(times, qs, qs[0.5].copy(), max(capacity, 1))
    return traj, epoch
