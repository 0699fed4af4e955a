"""Deterministic GI/GI/s sample-path construction and its inverse.

A block of `s` parking spaces is a first-come-first-served multi-server
queue. Given positive inter-arrival and service durations, the recursion

    a_j = a_{j-1} + alpha_j
    c_j = min_i b_{ji}          (b_{ji}: when space i last freed, origin if never used)
    u_j = max(a_j, c_j)
    d_j = u_j + nu_j

yields arrival, service-start and departure times; the assigned space is the
argmin over b_{ji}, lowest index on ties. The map is invertible: the
primitives are recovered as consecutive differences.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QueuePrimitives",
    "SamplePath",
    "Exponential",
    "default_distributions",
    "build_sample_path",
    "extend_sample_path",
    "invert_sample_path",
    "occupancy_at",
    "occupancy_profile",
    "searching_at",
    "log_joint_density",
    "path_to_csv",
    "path_from_csv",
]


@dataclass(frozen=True)
class Exponential:
    """Exponential density with a sampler; the default GI family.

    Any object with .sample(rng, size), .log_density(x) and .mean works in
    its place, so non-exponential inter-arrival or service laws plug in.
    """

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    @property
    def mean(self):
        return 1.0 / self.rate

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, math.log(self.rate) - self.rate * x, -np.inf)


def default_distributions(params):
    """(inter-arrival, service) densities for ModelParams-like objects."""
    return Exponential(params.lam), Exponential(1.0 / params.mean_parking)


def _as_float_array(seq, name):
    arr = np.asarray(seq, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class QueuePrimitives:
    """Random inputs of the queue: inter-arrival gaps, service times, spaces."""

    inter_arrivals: np.ndarray
    service_times: np.ndarray
    num_spaces: int

    def __post_init__(self):
        object.__setattr__(
            self, "inter_arrivals", _as_float_array(self.inter_arrivals, "inter_arrivals")
        )
        object.__setattr__(
            self, "service_times", _as_float_array(self.service_times, "service_times")
        )
        if len(self.inter_arrivals) != len(self.service_times):
            raise ValueError("inter_arrivals and service_times must have equal length")
        if len(self.inter_arrivals) and not np.all(self.inter_arrivals > 0):
            raise ValueError("inter-arrival durations must be positive")
        if len(self.service_times) and not np.all(self.service_times > 0):
            raise ValueError("service durations must be positive")
        if not (isinstance(self.num_spaces, (int, np.integer)) and self.num_spaces >= 1):
            raise ValueError(f"num_spaces must be an integer >= 1, got {self.num_spaces}")

    def __len__(self):
        return len(self.inter_arrivals)


@dataclass(frozen=True)
class SamplePath:
    """Arrival/service-start/departure times and space assignments.

    `first_free` records c_j, the earliest time a space was available to
    arrival j; `assigned_space` is 1-based. `space_free_times` carries the
    per-space last-departure state so the path can be extended without a
    rebuild.
    """

    arrivals: np.ndarray
    service_starts: np.ndarray
    departures: np.ndarray
    assigned_space: np.ndarray
    first_free: np.ndarray
    num_spaces: int
    origin: float = 0.0
    space_free_times: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("arrivals", "service_starts", "departures", "first_free"):
            object.__setattr__(self, name, _as_float_array(getattr(self, name), name))
        object.__setattr__(
            self, "assigned_space", np.asarray(self.assigned_space, dtype=np.int64)
        )
        if self.space_free_times is None:
            object.__setattr__(self, "space_free_times", self._replay_space_state())
        else:
            object.__setattr__(
                self, "space_free_times", np.asarray(self.space_free_times, dtype=float)
            )
        self._validate()

    def _replay_space_state(self):
        free = np.full(self.num_spaces, float(self.origin))
        for j in range(len(self.arrivals)):
            free[self.assigned_space[j] - 1] = self.departures[j]
        return free

    def _validate(self):
        a, u, d = self.arrivals, self.service_starts, self.departures
        n = len(a)
        if not (len(u) == len(d) == len(self.assigned_space) == len(self.first_free) == n):
            raise ValueError("sample path fields must have equal length")
        if self.num_spaces < 1:
            raise ValueError("num_spaces must be >= 1")
        if n == 0:
            return
        if not (np.all(a <= u) and np.all(u <= d)):
            raise ValueError("need a_j <= u_j <= d_j for every arrival")
        if np.any(np.diff(a) <= 0):
            raise ValueError("arrivals must be strictly increasing")
        if np.any((self.assigned_space < 1) | (self.assigned_space > self.num_spaces)):
            raise ValueError("assigned_space indices must lie in [1, num_spaces]")

    def __len__(self):
        return len(self.arrivals)

    @property
    def search_times(self):
        """Per-arrival cruising durations u_j - a_j."""
        return self.service_starts - self.arrivals


def build_sample_path(primitives, origin_time=0.0):
    """Transform primitives into the unique FCFS sample path."""
    if not isinstance(primitives, QueuePrimitives):
        primitives = QueuePrimitives(*primitives)
    n = len(primitives)
    s = primitives.num_spaces
    a = np.empty(n)
    u = np.empty(n)
    d = np.empty(n)
    c = np.empty(n)
    space = np.empty(n, dtype=np.int64)
    free = np.full(s, float(origin_time))

    a_prev = float(origin_time)
    alphas, nus = primitives.inter_arrivals, primitives.service_times
    for j in range(n):
        a_j = a_prev + alphas[j]
        i = int(np.argmin(free))  # ties: lowest index
        c_j = free[i]
        u_j = a_j if a_j > c_j else c_j
        d_j = u_j + nus[j]
        free[i] = d_j
        a[j], u[j], d[j], c[j], space[j] = a_j, u_j, d_j, c_j, i + 1
        a_prev = a_j

    return SamplePath(a, u, d, space, c, s, float(origin_time), free)


def extend_sample_path(path, inter_arrivals, service_times):
    """Append arrivals to an existing path; bit-identical to a full rebuild."""
    alphas = _as_float_array(inter_arrivals, "inter_arrivals")
    nus = _as_float_array(service_times, "service_times")
    if len(alphas) != len(nus):
        raise ValueError("inter_arrivals and service_times must have equal length")
    if len(alphas) and not (np.all(alphas > 0) and np.all(nus > 0)):
        raise ValueError("durations must be positive")
    m = len(alphas)
    n = len(path)
    a = np.concatenate([path.arrivals, np.empty(m)])
    u = np.concatenate([path.service_starts, np.empty(m)])
    d = np.concatenate([path.departures, np.empty(m)])
    c = np.concatenate([path.first_free, np.empty(m)])
    space = np.concatenate([path.assigned_space, np.empty(m, dtype=np.int64)])
    free = path.space_free_times.copy()

    a_prev = a[n - 1] if n else float(path.origin)
    for j in range(m):
        a_j = a_prev + alphas[j]
        i = int(np.argmin(free))
        c_j = free[i]
        u_j = a_j if a_j > c_j else c_j
        d_j = u_j + nus[j]
        free[i] = d_j
        a[n + j], u[n + j], d[n + j], c[n + j], space[n + j] = a_j, u_j, d_j, c_j, i + 1
        a_prev = a_j

    return SamplePath(a, u, d, space, c, path.num_spaces, path.origin, free)


def invert_sample_path(path):
    """Recover (alpha, nu) primitives; build(invert(P)) == P bit-exactly."""
    a = path.arrivals
    alphas = np.diff(a, prepend=path.origin)
    nus = path.departures - path.service_starts
    return QueuePrimitives(alphas, nus, path.num_spaces)


def occupancy_at(path, t):
    """Number of parked cars at time t: |{j : u_j <= t < d_j}|."""
    return int(np.count_nonzero((path.service_starts <= t) & (t < path.departures)))


def occupancy_profile(path, times):
    """occupancy_at evaluated on an array of times."""
    t = np.asarray(times, dtype=float)
    u = path.service_starts
    d = path.departures
    if len(u) == 0:
        return np.zeros(t.shape, dtype=np.int64)
    return np.count_nonzero((u[:, None] <= t) & (t < d[:, None]), axis=0)


def searching_at(path, t):
    """Number of cruising cars at time t: arrived but not yet parked."""
    return int(np.count_nonzero((path.arrivals <= t) & (t < path.service_starts)))


def log_joint_density(path, params, interarrival_dist=None, service_dist=None):
    """Joint log-density of the path's primitives under h_alpha, h_nu.

    Defaults to exponential densities with rates (lambda, 1/mean_parking)
    taken from `params`; any density object with .log_density may be passed.
    Returns -inf when any primitive has zero density; empty paths give 0.
    """
    if len(path) == 0:
        return 0.0
    if interarrival_dist is None or service_dist is None:
        d_a, d_s = default_distributions(params)
        interarrival_dist = interarrival_dist or d_a
        service_dist = service_dist or d_s
    prims = invert_sample_path(path)
    terms_a = interarrival_dist.log_density(prims.inter_arrivals)
    terms_s = service_dist.log_density(prims.service_times)
    total = float(np.sum(terms_a) + np.sum(terms_s))
    return total if np.isfinite(total) else -math.inf


def path_to_csv(path, file):
    """Write `j,arrival,service_start,departure,space` rows, 6 decimals."""

    def _run(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["j", "arrival", "service_start", "departure", "space"])
        for j in range(len(path)):
            writer.writerow([
                j + 1,
                f"{path.arrivals[j]:.6f}",
                f"{path.service_starts[j]:.6f}",
                f"{path.departures[j]:.6f}",
                int(path.assigned_space[j]),
            ])

    if hasattr(file, "write"):
        _run(file)
    else:
        with open(file, "w", newline="") as fh:
            _run(fh)


def path_from_csv(file, num_spaces=None, origin=0.0):
    """Read a path CSV back; `first_free` is replayed from assignments."""
    if not hasattr(file, "read"):
        with open(file, newline="") as fh:
            return path_from_csv(fh, num_spaces, origin)
    reader = csv.DictReader(file)
    a, u, d, space = [], [], [], []
    for row in reader:
        a.append(float(row["arrival"]))
        u.append(float(row["service_start"]))
        d.append(float(row["departure"]))
        space.append(int(row["space"]))
    if num_spaces is None:
        num_spaces = max(space) if space else 1
    a, u, d = np.array(a), np.array(u), np.array(d)
    space = np.array(space, dtype=np.int64)
    # c_j replay: the assigned space is the argmin over availabilities, so
    # its own prior free time IS c_j.
    free = np.full(num_spaces, float(origin))
    c = np.empty(len(a))
    for j in range(len(a)):
        c[j] = free[space[j] - 1]
        free[space[j] - 1] = d[j]
    return SamplePath(a, u, d, space, c, num_spaces, float(origin), free)
