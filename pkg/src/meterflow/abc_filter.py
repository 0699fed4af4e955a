"""Approximate-likelihood particle filter over payment observations.

Each particle carries a queue sample path plus the meter state it shares
with the data. A step extends every path until it holds the next payer,
simulates pseudo payment records from the newest arrival, and scores them
against the observed (time, balance) pair with a product Gaussian kernel;
the per-step normalizing factors accumulate into the likelihood estimate
used by the outer parameter sampler.

The hot loops run through a kernel backend (compiled when available); all
randomness is drawn here through one numpy Generator so both backends
produce identical paths for a given seed.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .estimators import LEVELS, OccupancyTrajectory, weighted_quantile
from .payment_model import MeterState
from .queue_core import SamplePath, default_distributions
from .state_model import Particle

__all__ = [
    "Observation",
    "AbcConfig",
    "TrajectorySet",
    "FilterResult",
    "FilterDegeneracyError",
    "simulate_pseudo_observations",
    "abc_log_weight",
    "effective_sample_size",
    "resample_multinomial",
    "kernel_bandwidths",
    "run_filter",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    """One payment record: when it happened and the balance it left."""

    pay_time: float
    meter_balance: float

    def __post_init__(self):
        if not math.isfinite(self.pay_time):
            raise ValueError("pay_time must be finite")
        if not (math.isfinite(self.meter_balance) and self.meter_balance >= 0):
            raise ValueError("meter_balance must be finite and nonnegative")


@dataclass(frozen=True)
class AbcConfig:
    """Filter tuning knobs.

    bandwidth_override, when set to (eps_time, eps_balance), bypasses the
    data-driven bandwidth rules entirely; kernel_bandwidth_const scales
    both rules when it is not set.
    """

    num_particles: int = 1000
    num_pseudo_obs: int = 64
    kernel_bandwidth_const: float = 1.0
    ess_threshold: float = 0.5
    bandwidth_override: tuple | None = None
    resampling: str = "multinomial"

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be >= 1")
        if self.num_pseudo_obs < 1:
            raise ValueError("num_pseudo_obs must be >= 1")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if self.kernel_bandwidth_const <= 0:
            raise ValueError("kernel_bandwidth_const must be positive")
        if self.resampling not in ("multinomial", "systematic"):
            raise ValueError("resampling must be 'multinomial' or 'systematic'")
        if self.bandwidth_override is not None:
            e1, e2 = self.bandwidth_override
            if not (e1 > 0 and e2 > 0):
                raise ValueError("bandwidth_override entries must be positive")


class FilterDegeneracyError(RuntimeError):
    """Every particle got zero kernel weight at some step."""

    def __init__(self, step):
        self.step = step
        super().__init__(
            f"all particle weights vanished at observation step {step}; "
            "widen the kernel bandwidths or add particles"
        )


class TrajectorySet:
    """Final particle paths as a packed array bundle.

    Rows are particles; `counts[i]` records how many arrivals row i holds.
    """

    def __init__(
        self,
        counts,
        arrivals,
        service_starts,
        departures,
        spaces,
        log_weights,
        num_spaces,
        origin=0.0,
        backend=None,
    ):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.arrivals = np.asarray(arrivals, dtype=float)
        self.service_starts = np.asarray(service_starts, dtype=float)
        self.departures = np.asarray(departures, dtype=float)
        self.spaces = np.asarray(spaces, dtype=np.int64)
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.num_spaces = int(num_spaces)
        self.origin = float(origin)
        self._backend = backend if backend is not None else _kernels.get_backend()

    def __len__(self):
        return len(self.counts)

    @property
    def weights(self):
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def path(self, i):
        """Materialize row i as a SamplePath, bit-identical to the stored row."""
        n = int(self.counts[i])
        a = self.arrivals[i, :n].copy()
        u = self.service_starts[i, :n].copy()
        d = self.departures[i, :n].copy()
        sp = self.spaces[i, :n].copy()
        free = np.full(self.num_spaces, self.origin)
        c = np.empty(n)
        for j in range(n):
            c[j] = free[sp[j] - 1]  # assigned space's prior free time is c_j
            free[sp[j] - 1] = d[j]
        return SamplePath(a, u, d, sp, c, self.num_spaces, self.origin, free)

    def paths(self):
        for i in range(len(self)):
            yield self.path(i)

    def occupancy_matrix(self, times):
        times = np.asarray(times, dtype=float)
        return self._backend.occupancy_counts(
            self.service_starts, self.departures, self.counts, times
        )

    def sample_index(self, rng):
        """Draw one row index with probability proportional to its weight."""
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        return int(np.searchsorted(cum, rng.random(), side="right"))


@dataclass
class FilterResult:
    """Everything a single filter pass produces."""

    trajectories: TrajectorySet
    log_likelihood: float
    ess_history: np.ndarray
    step_log_factors: np.ndarray
    resampled_steps: list
    band: OccupancyTrajectory | None
    theta: object
    config: AbcConfig
    origin: float
    bandwidths: tuple
    observations: list = field(default_factory=list)

    @property
    def particles(self):
        """Materialize the final particle cloud (shares the last meter state)."""
        if self.observations:
            last = self.observations[-1]
            meter = MeterState(last.meter_balance, last.pay_time)
        else:
            meter = MeterState(0.0, self.origin)
        out = []
        ts = self.trajectories
        for i in range(len(ts)):
            out.append(
                Particle(
                    num_arrivals=int(ts.counts[i]),
                    path=ts.path(i),
                    meter=meter,
                    log_weight=float(ts.log_weights[i]),
                )
            )
        return out

    def sample_trajectory(self, rng):
        return self.trajectories.path(self.trajectories.sample_index(rng))


def simulate_pseudo_observations(particle, params, num_pseudo, rng):
    """Pseudo payment records for the newest arrival of one particle.

    The pseudo pay time is the service start of the newest arrival; the
    balances fold one payment-amount draw through the particle's meter.
    """
    if num_pseudo < 1:
        raise ValueError("num_pseudo must be >= 1")
    if particle.num_arrivals < 1:
        raise ValueError("particle has no arrival to pay")
    path = particle.path
    u = float(path.service_starts[-1])
    nu = float(path.departures[-1] - u)
    amounts = rng.exponential(nu, size=num_pseudo)
    elapsed = max(u - particle.meter.last_payment_time, 0.0)
    base = particle.meter.balance
    out = []
    for beta in amounts:
        bal = max(base + beta - elapsed, 0.0)
        out.append(Observation(pay_time=u, meter_balance=bal))
    return out


def abc_log_weight(observed, pseudo, bandwidths):
    """Log kernel weight of one observation given pseudo records.

    Product Gaussian kernel in (pay time, balance), averaged over the
    pseudo records in linear space.
    """
    e1, e2 = bandwidths
    if not (e1 > 0 and e2 > 0):
        raise ValueError("bandwidths must be positive")
    taus = np.array([p.pay_time for p in pseudo], dtype=float)
    ms = np.array([p.meter_balance for p in pseudo], dtype=float)
    if len(taus) == 0:
        raise ValueError("need at least one pseudo record")
    z = (
        -0.5 * np.square((observed.pay_time - taus) / e1)
        - 0.5 * np.square((observed.meter_balance - ms) / e2)
    )
    return float(
        logsumexp(z) - math.log(len(taus)) - math.log(e1) - math.log(e2) - _LOG_2PI
    )


def effective_sample_size(weights):
    """1 / sum(w^2) for normalized weights; raises if they do not sum to 1."""
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be normalized")
    return float(1.0 / np.dot(w, w))


def _resample_indices(weights, rng, scheme):
    n = len(weights)
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    if scheme == "systematic":
        u = (rng.random() + np.arange(n)) / n
    else:
        u = rng.random(n)
    return np.searchsorted(cum, u, side="right")


def resample_multinomial(particles, rng):
    """Draw a fresh equally weighted cloud from normalized particle weights."""
    logw = np.array([p.log_weight for p in particles], dtype=float)
    w = np.exp(logw)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("particle weights must be normalized before resampling")
    w = w / w.sum()
    idx = _resample_indices(w, rng, "multinomial")
    neutral = -math.log(len(particles))
    return [replace(particles[i], log_weight=neutral) for i in idx]


def kernel_bandwidths(cfg, observations, origin=0.0):
    """(eps_tau, bw_factor, eps_m_floor, eps_m_fixed) for a run.

    With no override: the pay-time bandwidth is const * window/1000; the
    balance bandwidth is per particle, const * (log H / H)^(1/5) times the
    pseudo-balance spread, floored at const * max(balance scale, 1)/1000.
    eps_m_fixed is -1 in that case (sentinel for "per particle").
    """
    if cfg.bandwidth_override is not None:
        e1, e2 = cfg.bandwidth_override
        return float(e1), 0.0, 0.0, float(e2)
    c = cfg.kernel_bandwidth_const
    window = observations[-1].pay_time - origin
    if window <= 0:
        raise ValueError("last observation must lie after the origin")
    eps_tau = c * window / 1000.0
    h = cfg.num_pseudo_obs
    bw_factor = c * (math.log(h) / h) ** 0.2 if h > 1 else c
    m_scale = max(max(o.meter_balance for o in observations), 1.0)
    eps_m_floor = c * m_scale / 1000.0
    return eps_tau, bw_factor, eps_m_floor, -1.0


def _grow(arr, new_cap):
    out = np.zeros((arr.shape[0], new_cap), dtype=arr.dtype)
    out[:, : arr.shape[1]] = arr
    return out


def run_filter(
    observations,
    theta,
    config,
    seed,
    origin=0.0,
    backend=None,
    interarrival_dist=None,
    service_dist=None,
    collect_band=True,
):
    """Run the filter over a payment sequence; returns a FilterResult.

    The likelihood estimate is the sum over steps of the log-mean updated
    weight. Resampling (multinomial by default) triggers when the effective
    sample size drops below ess_threshold * num_particles.
    """
    obs = list(observations)
    times = np.array([o.pay_time for o in obs], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation pay times must be strictly increasing")
    if len(times) and times[0] <= origin:
        raise ValueError("observations must lie strictly after the origin")
    kern = backend if backend is not None else _kernels.get_backend()
    if isinstance(kern, str):
        kern = _kernels.get_backend(kern)
    if interarrival_dist is None or service_dist is None:
        ia, sv = default_distributions(theta)
        interarrival_dist = interarrival_dist or ia
        service_dist = service_dist or sv

    rng = np.random.default_rng(seed)
    n = config.num_particles
    h = config.num_pseudo_obs
    s = theta.spaces
    k_steps = len(obs)

    if k_steps == 0:
        ts = TrajectorySet(
            np.zeros(n, dtype=np.int64),
            np.zeros((n, 0)),
            np.zeros((n, 0)),
            np.zeros((n, 0)),
            np.zeros((n, 0), dtype=np.int64),
            np.full(n, -math.log(n)),
            s,
            origin,
            kern,
        )
        return FilterResult(
            trajectories=ts,
            log_likelihood=0.0,
            ess_history=np.empty(0),
            step_log_factors=np.empty(0),
            resampled_steps=[],
            band=None,
            theta=theta,
            config=config,
            origin=origin,
            bandwidths=(math.nan, math.nan),
            observations=obs,
        )

    eps_tau, bw_factor, eps_m_floor, eps_m_fixed = kernel_bandwidths(
        config, obs, origin
    )

    cap = k_steps + 8
    counts = np.zeros(n, dtype=np.int64)
    a_last = np.full(n, float(origin))
    space_busy = np.full((n, s), float(origin))
    arr_a = np.zeros((n, cap))
    arr_u = np.zeros((n, cap))
    arr_d = np.zeros((n, cap))
    arr_space = np.zeros((n, cap), dtype=np.int64)
    log_w = np.full(n, -math.log(n))
    e_buf = np.empty((n, h))

    loglik = 0.0
    ess_hist = np.empty(k_steps)
    factors = np.empty(k_steps)
    resampled = []
    band_q = np.empty((len(LEVELS), k_steps)) if collect_band else None
    band_mean = np.empty(k_steps) if collect_band else None

    m_prev = 0.0
    t_prev = float(origin)

    for k, ob in enumerate(obs):
        incr = rng.geometric(theta.compliance, size=n).astype(np.int64)
        total = int(incr.sum())
        offsets = np.zeros(n, dtype=np.int64)
        np.cumsum(incr[:-1], out=offsets[1:])
        alphas = np.asarray(interarrival_dist.sample(rng, total), dtype=float)
        nus = np.asarray(service_dist.sample(rng, total), dtype=float)

        need = int(counts.max() + incr.max())
        if need > cap:
            cap = max(need, 2 * cap)
            arr_a = _grow(arr_a, cap)
            arr_u = _grow(arr_u, cap)
            arr_d = _grow(arr_d, cap)
            arr_space = _grow(arr_space, cap)

        kern.extend_paths(
            counts, a_last, space_busy, arr_a, arr_u, arr_d, arr_space,
            incr, offsets, alphas, nus,
        )

        rng.standard_exponential(out=e_buf)
        logg = kern.step_log_weights(
            arr_u, arr_d, counts, m_prev, t_prev, e_buf,
            ob.pay_time, ob.meter_balance,
            eps_tau, bw_factor, eps_m_floor, eps_m_fixed,
        )

        updated = log_w + logg
        step_log = float(logsumexp(updated))
        if not math.isfinite(step_log):
            raise FilterDegeneracyError(k)
        factors[k] = step_log
        loglik += step_log
        log_w = updated - step_log
        w = np.exp(log_w)

        ess = 1.0 / float(np.dot(w, w))
        ess_hist[k] = ess

        if collect_band:
            occ_k = kern.occupancy_counts(
                arr_u, arr_d, counts, np.array([ob.pay_time])
            )[:, 0]
            band_q[:, k] = weighted_quantile(occ_k, w, LEVELS)
            band_mean[k] = float(np.dot(w, occ_k))

        if ess < config.ess_threshold * n:
            idx = _resample_indices(w, rng, config.resampling)
            counts = counts[idx]
            a_last = a_last[idx]
            space_busy = np.ascontiguousarray(space_busy[idx])
            arr_a = np.ascontiguousarray(arr_a[idx])
            arr_u = np.ascontiguousarray(arr_u[idx])
            arr_d = np.ascontiguousarray(arr_d[idx])
            arr_space = np.ascontiguousarray(arr_space[idx])
            log_w = np.full(n, -math.log(n))
            resampled.append(k)

        m_prev = ob.meter_balance
        t_prev = ob.pay_time

    ts = TrajectorySet(
        counts, arr_a, arr_u, arr_d, arr_space, log_w, s, origin, kern
    )
    band = None
    if collect_band:
        qs = {lv: band_q[i] for i, lv in enumerate(LEVELS)}
        band = OccupancyTrajectory(times, qs, band_mean, s)
    return FilterResult(
        trajectories=ts,
        log_likelihood=loglik,
        ess_history=ess_hist,
        step_log_factors=factors,
        resampled_steps=resampled,
        band=band,
        theta=theta,
        config=config,
        origin=origin,
        bandwidths=(eps_tau, eps_m_fixed if eps_m_fixed > 0 else eps_m_floor),
        observations=obs,
    )
