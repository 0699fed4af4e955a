"""Aggregation of filter/chain outputs into reported quantities.

Occupancy quantile bands, RMSE against ground-truth snapshots, cruising
statistics, hourly occupancy rates, and posterior parameter summaries.
All functions are pure; weighted quantiles follow the left-continuous
inverse-CDF rule (smallest value whose cumulative weight reaches the level).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .queue_core import occupancy_profile

__all__ = [
    "LEVELS",
    "OccupancyTrajectory",
    "GroundTruth",
    "CruisingSummary",
    "OverlapError",
    "CoverageError",
    "weighted_quantile",
    "trajectory_quantiles",
    "rmse_vs_truth",
    "band_coverage",
    "cruising_stats",
    "hourly_occupancy_rate",
    "truth_as_trajectory",
    "parameter_posterior_summary",
    "evaluation_report",
]

LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


class OverlapError(ValueError):
    """Estimate and truth share no alignable evaluation times."""


class CoverageError(ValueError):
    """Evaluation grid does not cover the requested window densely enough."""


@dataclass(frozen=True)
class OccupancyTrajectory:
    """Quantile band of occupancy over evaluation times."""

    eval_times: np.ndarray
    quantiles: dict
    mean: np.ndarray
    capacity: int

    def __post_init__(self):
        object.__setattr__(self, "eval_times", np.asarray(self.eval_times, dtype=float))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        qs = {float(k): np.asarray(v, dtype=float) for k, v in self.quantiles.items()}
        object.__setattr__(self, "quantiles", qs)
        n = len(self.eval_times)
        if any(len(v) != n for v in qs.values()) or len(self.mean) != n:
            raise ValueError("quantile series must match eval_times length")
        levels = sorted(qs)
        stacked = np.array([qs[q] for q in levels])
        if stacked.size:
            if np.any(np.diff(stacked, axis=0) < 0):
                raise ValueError("quantiles must be nondecreasing in level")
            if np.any(stacked < 0) or np.any(stacked > self.capacity):
                raise ValueError("occupancy quantiles must lie in [0, capacity]")

    @property
    def median(self):
        return self.quantiles[0.5]


@dataclass(frozen=True)
class GroundTruth:
    """Occupancy snapshots: times, occupied counts, per-snapshot capacity."""

    snapshot_times: np.ndarray
    occupied: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "snapshot_times", np.asarray(self.snapshot_times, dtype=float)
        )
        object.__setattr__(self, "occupied", np.asarray(self.occupied, dtype=np.int64))
        object.__setattr__(self, "capacity", np.asarray(self.capacity, dtype=np.int64))
        if not (len(self.snapshot_times) == len(self.occupied) == len(self.capacity)):
            raise ValueError("ground-truth fields must have equal length")
        if np.any(self.occupied < 0) or np.any(self.occupied > self.capacity):
            raise ValueError("need 0 <= occupied <= capacity at every snapshot")


@dataclass(frozen=True)
class CruisingSummary:
    mean_search: float
    median_search: float
    q95_search: float
    time_avg_searching: float
    num_arrivals: int


def weighted_quantile(values, weights, qs):
    """Left-continuous inverse CDF of a weighted sample.

    Returns the smallest value whose cumulative weight reaches each level.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    if len(values) == 0:
        raise ValueError("cannot take quantiles of an empty sample")
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw = cw / cw[-1]
    idx = np.searchsorted(cw, qs - 1e-12, side="left")
    return v[np.minimum(idx, len(v) - 1)]


def _occupancy_matrix(trajectories, eval_times):
    """(matrix[n_traj, n_times], weights, capacity) from either input form."""
    if hasattr(trajectories, "occupancy_matrix"):
        occ = trajectories.occupancy_matrix(eval_times)
        return occ, trajectories.weights, trajectories.num_spaces
    paths = list(trajectories)
    if not paths:
        raise ValueError("empty trajectory set")
    occ = np.stack([occupancy_profile(p, eval_times) for p in paths])
    w = np.full(len(paths), 1.0 / len(paths))
    return occ, w, max(p.num_spaces for p in paths)


def trajectory_quantiles(trajectories, eval_times, weights=None, levels=LEVELS):
    """Weighted occupancy quantile band over sampled trajectories.

    `trajectories` is either a particle trajectory set (anything exposing
    occupancy_matrix/weights/num_spaces) or a sequence of sample paths,
    equally weighted unless `weights` is given.
    """
    eval_times = np.asarray(eval_times, dtype=float)
    occ, w, capacity = _occupancy_matrix(trajectories, eval_times)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if len(w) != occ.shape[0]:
            raise ValueError("weights length must match trajectory count")
        w = w / w.sum()
    qs = {}
    levels = tuple(levels)
    qmat = np.empty((len(levels), len(eval_times)))
    for t in range(len(eval_times)):
        qmat[:, t] = weighted_quantile(occ[:, t], w, levels)
    for li, lv in enumerate(levels):
        qs[lv] = qmat[li]
    mean = w @ occ
    return OccupancyTrajectory(eval_times, qs, mean, int(capacity))


def _align(eval_times, truth, window):
    """Nearest-snapshot index per eval time; -1 when none in window."""
    snap = truth.snapshot_times
    idx = np.empty(len(eval_times), dtype=np.int64)
    for i, t in enumerate(eval_times):
        j = int(np.argmin(np.abs(snap - t)))  # ties: earlier snapshot
        idx[i] = j if abs(snap[j] - t) <= window else -1
    return idx


def rmse_vs_truth(traj, truth, window=5.0):
    """RMSE of the median series against nearest-in-window truth snapshots."""
    idx = _align(traj.eval_times, truth, window)
    used = idx >= 0
    if not np.any(used):
        raise OverlapError("no evaluation time has a truth snapshot within window")
    diff = traj.median[used] - truth.occupied[idx[used]]
    return float(np.sqrt(np.mean(np.square(diff))))


def band_coverage(traj, truth, low=0.05, high=0.95, window=5.0):
    """Fraction of alignable eval times where truth lies in [q_low, q_high]."""
    idx = _align(traj.eval_times, truth, window)
    used = idx >= 0
    if not np.any(used):
        raise OverlapError("no evaluation time has a truth snapshot within window")
    occ = truth.occupied[idx[used]]
    lo = traj.quantiles[low][used]
    hi = traj.quantiles[high][used]
    return float(np.mean((occ >= lo) & (occ <= hi)))


def _window_overlap(starts, ends, w0, w1):
    return np.maximum(np.minimum(ends, w1) - np.maximum(starts, w0), 0.0)


def cruising_stats(trajectories, window, weights=None):
    """Search-time statistics of arrivals inside the window.

    Each arrival inherits its trajectory's weight; the searching-count time
    average is the weighted mean over trajectories of the integral of
    searching_at over the window divided by its length.
    """
    w0, w1 = float(window[0]), float(window[1])
    if not w1 > w0:
        raise ValueError("window must have positive length")
    if hasattr(trajectories, "paths"):
        paths = list(trajectories.paths())
        w = trajectories.weights
    else:
        paths = list(trajectories)
        w = np.full(len(paths), 1.0 / max(len(paths), 1))
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    if not paths:
        raise ValueError("empty trajectory set")

    search_vals, search_wts = [], []
    time_avgs = np.zeros(len(paths))
    n_arrivals = 0
    for i, p in enumerate(paths):
        inside = (p.arrivals >= w0) & (p.arrivals < w1)
        st = p.search_times[inside]
        search_vals.append(st)
        search_wts.append(np.full(len(st), w[i]))
        n_arrivals += int(np.count_nonzero(inside))
        time_avgs[i] = np.sum(
            _window_overlap(p.arrivals, p.service_starts, w0, w1)
        ) / (w1 - w0)

    time_avg = float(np.dot(w, time_avgs))
    vals = np.concatenate(search_vals) if search_vals else np.empty(0)
    if len(vals) == 0:
        return CruisingSummary(0.0, 0.0, 0.0, time_avg, 0)
    wts = np.concatenate(search_wts)
    med, q95 = weighted_quantile(vals, wts, [0.5, 0.95])
    mean = float(np.dot(wts, vals) / wts.sum())
    return CruisingSummary(mean, float(med), float(q95), time_avg, n_arrivals)


def hourly_occupancy_rate(traj, capacity, hour_window, max_gap=15.0):
    """Percent of capacity-time occupied by the median estimate.

    Trapezoidal integral of the median over the window divided by
    capacity x window length; structurally bounded by 100.
    """
    w0, w1 = float(hour_window[0]), float(hour_window[1])
    t = traj.eval_times
    if not w1 > w0:
        raise ValueError("hour window must have positive length")
    if len(t) == 0 or t[0] > w0 or t[-1] < w1:
        raise CoverageError("evaluation times do not span the hour window")
    inner = t[(t > w0) & (t < w1)]
    grid = np.concatenate([[w0], inner, [w1]])
    if np.max(np.diff(grid)) > max_gap:
        raise CoverageError(f"evaluation-time gap exceeds {max_gap} minutes in window")
    med = np.interp(grid, t, traj.median)
    integral = float(np.trapezoid(med, grid))
    return 100.0 * integral / (capacity * (w1 - w0))


def truth_as_trajectory(truth):
    """Wrap ground truth as a degenerate trajectory (all quantiles equal)."""
    occ = truth.occupied.astype(float)
    qs = {lv: occ for lv in LEVELS}
    return OccupancyTrajectory(
        truth.snapshot_times, qs, occ, int(truth.capacity.max())
    )


def parameter_posterior_summary(thetas, log_liks=None, bins=40):
    """Marginal summaries and pairwise 2-D histograms of a parameter chain.

    `thetas` is a sequence of (lambda, mean_parking, compliance) draws (ModelParams
    or 3-sequences). Histogram counts per pair sum to the chain length.
    """
    rows = []
    for th in thetas:
        if hasattr(th, "lam"):
            rows.append((th.lam, th.mean_parking, th.compliance))
        else:
            rows.append(tuple(th))
    if not rows:
        raise ValueError("empty chain")
    arr = np.asarray(rows, dtype=float)
    names = ("lambda", "mean_parking", "compliance")
    marginals = {}
    for i, name in enumerate(names):
        col = arr[:, i]
        marginals[name] = {
            "mean": float(col.mean()),
            **{f"q{int(100 * lv):02d}": float(np.quantile(col, lv)) for lv in LEVELS},
        }
    pairs = {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        xi, xj = arr[:, i], arr[:, j]
        xe = _hist_edges(xi, bins)
        ye = _hist_edges(xj, bins)
        counts, _, _ = np.histogram2d(xi, xj, bins=(xe, ye))
        pairs[(names[i], names[j])] = {
            "x_edges": xe,
            "y_edges": ye,
            "counts": counts.astype(np.int64),
        }
    return {"n": len(arr), "marginals": marginals, "pairs": pairs}


def _hist_edges(col, bins):
    lo, hi = float(col.min()), float(col.max())
    if lo == hi:  # constant chain: point mass in one cell
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def evaluation_report(traj, truth, window=5.0):
    """RMSE, band coverage, and hourly rates as a JSON-ready dict."""
    idx = _align(traj.eval_times, truth, window)
    n_excluded = int(np.count_nonzero(idx < 0))
    rmse = rmse_vs_truth(traj, truth, window)
    coverage = band_coverage(traj, truth, window=window)
    t0, t1 = traj.eval_times[0], traj.eval_times[-1]
    capacity = int(truth.capacity.max())
    truth_traj = truth_as_trajectory(truth)
    hourly = []
    h = math.ceil(t0 / 60.0) * 60.0
    while h + 60.0 <= t1 + 1e-9:
        entry = {"start_minute": h}
        try:
            entry["estimate"] = hourly_occupancy_rate(traj, capacity, (h, h + 60.0))
        except CoverageError:
            entry["estimate"] = None
        try:
            entry["truth"] = hourly_occupancy_rate(truth_traj, capacity, (h, h + 60.0))
        except CoverageError:
            entry["truth"] = None
        hourly.append(entry)
        h += 60.0
    return {
        "rmse_cars": rmse,
        "coverage_fraction_05_95": coverage,
        "eval_times_excluded": n_excluded,
        "eval_times_total": int(len(traj.eval_times)),
        "hourly_rates": hourly,
    }
