"""Trans-dimensional hidden state and its Markov transition.

Between consecutive payments the number of arrivals is 1 + Geometric: each
arriving driver independently pays with probability `compliance`, so the
k-th payment is preceded by a geometric number of non-payers. A transition
appends that many arrivals to the particle's sample path; the newest arrival
is the k-th payer by construction.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .payment_model import MeterState
from .queue_core import (
    QueuePrimitives,
    SamplePath,
    build_sample_path,
    default_distributions,
    extend_sample_path,
)

__all__ = [
    "ModelParams",
    "Particle",
    "sample_arrival_increment",
    "transition",
    "log_transition_density",
    "init_particle",
]


@dataclass(frozen=True)
class ModelParams:
    """theta = (lambda, mean parking minutes, compliance) plus the space count."""

    lam: float
    mean_parking: float
    compliance: float
    spaces: int

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.mean_parking > 0:
            raise ValueError(f"mean_parking must be positive, got {self.mean_parking}")
        if not 0 < self.compliance <= 1:
            raise ValueError(f"compliance must lie in (0, 1], got {self.compliance}")
        if not (isinstance(self.spaces, (int, np.integer)) and self.spaces >= 1):
            raise ValueError(f"spaces must be an integer >= 1, got {self.spaces}")


@dataclass(frozen=True)
class Particle:
    """x_k: arrival count, queueing history of every arrival, meter, weight."""

    num_arrivals: int
    path: SamplePath
    meter: MeterState
    log_weight: float = 0.0

    def __post_init__(self):
        if len(self.path) != self.num_arrivals:
            raise ValueError("path length must equal num_arrivals")
        if math.isnan(self.log_weight):
            raise ValueError("log_weight must be finite or -inf")


def sample_arrival_increment(compliance, rng):
    """Arrivals between payments: 1 + Geometric(success = compliance).

    numpy's geometric counts trials to the first success, which is exactly
    the payer's position among the new arrivals.
    """
    if not 0 < compliance <= 1:
        raise ValueError(f"compliance must lie in (0, 1], got {compliance}")
    return int(rng.geometric(compliance))


def transition(prev, params, rng, interarrival_dist=None, service_dist=None):
    """Advance a particle to the next payment event (append-only)."""
    if interarrival_dist is None or service_dist is None:
        d_a, d_s = default_distributions(params)
        interarrival_dist = interarrival_dist or d_a
        service_dist = service_dist or d_s
    dj = sample_arrival_increment(params.compliance, rng)
    alphas = np.atleast_1d(interarrival_dist.sample(rng, dj))
    nus = np.atleast_1d(service_dist.sample(rng, dj))
    path = extend_sample_path(prev.path, alphas, nus)
    return replace(prev, num_arrivals=prev.num_arrivals + dj, path=path)


def log_transition_density(prev, nxt, params, interarrival_dist=None, service_dist=None):
    """f_theta(next | prev): geometric mass plus per-arrival primitive densities.

    -inf when `nxt` does not extend `prev` (fewer arrivals, or differing
    shared history).
    """
    dj = nxt.num_arrivals - prev.num_arrivals
    if dj < 1:
        return -math.inf
    n = prev.num_arrivals
    if not (
        np.array_equal(prev.path.arrivals, nxt.path.arrivals[:n])
        and np.array_equal(prev.path.service_starts, nxt.path.service_starts[:n])
        and np.array_equal(prev.path.departures, nxt.path.departures[:n])
    ):
        return -math.inf
    p = params.compliance
    if p == 1.0:
        geo = 0.0 if dj == 1 else -math.inf
    else:
        geo = (dj - 1) * math.log1p(-p) + math.log(p)
    if geo == -math.inf:
        return -math.inf
    if interarrival_dist is None or service_dist is None:
        d_a, d_s = default_distributions(params)
        interarrival_dist = interarrival_dist or d_a
        service_dist = service_dist or d_s
    new_alphas = np.diff(nxt.path.arrivals[n - 1 :]) if n else np.diff(
        nxt.path.arrivals, prepend=nxt.path.origin
    )
    new_nus = (nxt.path.departures - nxt.path.service_starts)[n:]
    total = (
        geo
        + float(np.sum(interarrival_dist.log_density(new_alphas)))
        + float(np.sum(service_dist.log_density(new_nus)))
    )
    return total if np.isfinite(total) else -math.inf


def init_particle(params, origin=0.0):
    """Empty block at the window origin: no arrivals, meter at zero."""
    prims = QueuePrimitives(np.empty(0), np.empty(0), params.spaces)
    empty = build_sample_path(prims, origin_time=origin)
    return Particle(0, empty, MeterState(0.0, origin), 0.0)
