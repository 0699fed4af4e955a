"""Markov chain over model parameters driven by filter likelihood estimates.

Random-walk Metropolis-Hastings in transformed space (log arrival rate,
log mean parking time, logit compliance), optionally with Haario-style
adaptive covariance, accepting against the particle filter's likelihood
estimate. A rejection retains the previous parameter, trajectory, and
likelihood estimate unchanged.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, expit, logit

from .abc_filter import AbcConfig, FilterDegeneracyError, run_filter
from .queue_core import default_distributions
from .state_model import ModelParams

__all__ = [
    "LogNormalPrior",
    "BetaPrior",
    "FixedValue",
    "PriorSpec",
    "PmmhConfig",
    "PosteriorSample",
    "ZeroAcceptanceError",
    "propose_params",
    "acceptance_log_ratio",
    "moment_init",
    "run_pmmh",
    "map_estimate",
    "pooled_trajectories",
    "write_chain_csv",
    "read_chain_csv",
]

logger = logging.getLogger(__name__)

_PARAM_NAMES = ("lam", "mean_parking", "compliance")
_ADAPT_MIN_HISTORY = 50  # retained draws before the empirical covariance kicks in
_ADAPT_JITTER = 1e-6


@dataclass(frozen=True)
class LogNormalPrior:
    """Log-normal prior parameterized by the median and the log-scale sd."""

    log_median: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")

    def log_density(self, x):
        if x <= 0:
            return -math.inf
        z = (math.log(x) - self.log_median) / self.sd
        return -0.5 * z * z - math.log(x * self.sd) - 0.5 * math.log(2.0 * math.pi)

    def sample(self, rng):
        return math.exp(self.log_median + self.sd * rng.standard_normal())


@dataclass(frozen=True)
class BetaPrior:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("shape parameters must be positive")

    def log_density(self, x):
        if not 0.0 < x < 1.0:
            return -math.inf
        return (
            (self.a - 1.0) * math.log(x)
            + (self.b - 1.0) * math.log1p(-x)
            - betaln(self.a, self.b)
        )

    def sample(self, rng):
        return float(rng.beta(self.a, self.b))


@dataclass(frozen=True)
class FixedValue:
    """Pins a parameter; it is excluded from the sampled vector."""

    value: float

    def log_density(self, x):
        return 0.0 if x == self.value else -math.inf

    def sample(self, rng):
        return self.value


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter priors; swap any entry for FixedValue to pin it."""

    lam: object = LogNormalPrior(0.0, 1.0)  # median 1 arrival/min
    mean_parking: object = LogNormalPrior(math.log(10.0), 1.0)  # median 10 min
    compliance: object = BetaPrior(2.0, 2.0)


def free_param_names(prior_spec):
    """Parameters that are actually sampled (not pinned)."""
    return tuple(
        n for n in _PARAM_NAMES if not isinstance(getattr(prior_spec, n), FixedValue)
    )


@dataclass(frozen=True)
class PmmhConfig:
    num_accepts_burn_in: int = 200
    num_accepts_post: int = 3800
    max_iterations: int = 50_000
    prior_spec: PriorSpec = PriorSpec()
    proposal_init_scale: object = 0.15
    adapt: bool = True
    filter_cfg: AbcConfig = AbcConfig()
    seed: object = None
    spaces: int = 1
    init_theta: ModelParams | None = None
    trajectories_per_sample: int = 8

    def __post_init__(self):
        if self.num_accepts_burn_in < 0:
            raise ValueError("num_accepts_burn_in must be >= 0")
        if self.num_accepts_post < 1 or self.max_iterations < 1:
            raise ValueError("accept target and max_iterations must be >= 1")
        scales = np.atleast_1d(np.asarray(self.proposal_init_scale, dtype=float))
        if np.any(scales < 0):
            raise ValueError("proposal scales must be nonnegative")
        if self.spaces < 1:
            raise ValueError("spaces must be >= 1")
        if self.trajectories_per_sample < 1:
            raise ValueError("trajectories_per_sample must be >= 1")


@dataclass(frozen=True)
class PosteriorSample:
    """One chain state: parameters, a drawn trajectory, and the likelihood
    estimate that carried them. Rejections repeat the previous state.

    `extra_trajectories` holds additional independent draws from the same
    filter run; they sharpen pooled occupancy bands without extra filter
    passes. The MAP pair stays (theta, trajectory)."""

    theta: ModelParams
    trajectory: object
    log_likelihood: float
    iteration: int
    accepted: bool
    burn_in: bool
    extra_trajectories: tuple = ()


class ZeroAcceptanceError(RuntimeError):
    """The chain hit its iteration cap without a single acceptance."""


def _to_z(theta, free):
    out = np.empty(len(free))
    for i, name in enumerate(free):
        v = getattr(theta, name)
        out[i] = logit(v) if name == "compliance" else math.log(v)
    return out


def _from_z(z, template, free):
    vals = {n: getattr(template, n) for n in _PARAM_NAMES}
    for i, name in enumerate(free):
        vals[name] = float(expit(z[i])) if name == "compliance" else math.exp(z[i])
    return ModelParams(
        lam=vals["lam"],
        mean_parking=vals["mean_parking"],
        compliance=vals["compliance"],
        spaces=template.spaces,
    )


def _init_scales(raw, free):
    scales = np.atleast_1d(np.asarray(raw, dtype=float))
    if scales.size == 1:
        return np.full(len(free), float(scales[0]))
    if scales.size == len(_PARAM_NAMES):
        idx = [_PARAM_NAMES.index(n) for n in free]
        return scales[idx]
    if scales.size == len(free):
        return scales.astype(float)
    raise ValueError("proposal_init_scale must be scalar, per-parameter, or per-free-parameter")


def propose_params(current, chain_history, cfg, rng):
    """Gaussian random-walk step in transformed space; returns a valid θ.

    Uses the fixed diagonal scales until `chain_history` holds 50 retained
    draws, then (with adapt on) the scaled empirical covariance plus jitter.
    """
    free = free_param_names(cfg.prior_spec)
    if not free:
        return current
    d = len(free)
    z = _to_z(current, free)
    if cfg.adapt and len(chain_history) >= _ADAPT_MIN_HISTORY:
        zh = np.stack([_to_z(t, free) for t in chain_history])
        cov = np.atleast_2d(np.cov(zh, rowvar=False))
        sigma = (2.38**2 / d) * cov + _ADAPT_JITTER * np.eye(d)
        step = np.linalg.cholesky(sigma) @ rng.standard_normal(d)
    else:
        step = _init_scales(cfg.proposal_init_scale, free) * rng.standard_normal(d)
    if np.all(step == 0.0):
        return current
    return _from_z(z + step, current, free)


def _log_prior(theta, prior_spec):
    if prior_spec is None:
        return 0.0
    total = 0.0
    for name in _PARAM_NAMES:
        total += getattr(prior_spec, name).log_density(getattr(theta, name))
    return total


def _log_jacobian(theta, prior_spec):
    """log |dθ/dz| of the sampling transform, summed over free parameters."""
    free = free_param_names(prior_spec) if prior_spec is not None else _PARAM_NAMES
    total = 0.0
    for name in free:
        v = getattr(theta, name)
        if name == "compliance":
            total += math.log(v) + math.log1p(-v) if 0.0 < v < 1.0 else -math.inf
        else:
            total += math.log(v)
    return total


def acceptance_log_ratio(
    prop_loglik, cur_loglik, prop_theta, cur_theta, prior=None, proposal=None
):
    """log min(1, ratio) for the Metropolis-Hastings step.

    The random walk is symmetric in transformed space, so the proposal
    contributes only the change-of-variable Jacobian (`proposal` is accepted
    for signature compatibility and carries no density of its own).
    A proposal with -inf log-likelihood is rejected outright.
    """
    if not math.isfinite(prop_loglik):
        return -math.inf
    num = prop_loglik + _log_prior(prop_theta, prior) + _log_jacobian(prop_theta, prior)
    if not math.isfinite(num):
        return -math.inf
    den = cur_loglik + _log_prior(cur_theta, prior) + _log_jacobian(cur_theta, prior)
    if not math.isfinite(den):
        return 0.0  # escaping an impossible state: accept surely
    return min(0.0, num - den)


def moment_init(observations, spaces, origin=0.0, compliance=0.75):
    """Cheap data-driven chain start.

    Arrival rate from the payment count over the window divided by the
    compliance guess; mean parking from the average balance increment
    (m_k - max(m_{k-1} - elapsed, 0) inverts one meter update unless the
    balance floored at zero, in which case the increment underestimates).
    """
    obs = list(observations)
    if not obs:
        raise ValueError("observations must be nonempty")
    window = obs[-1].pay_time - origin
    if window <= 0:
        raise ValueError("last observation must lie after the origin")
    lam0 = len(obs) / window / compliance
    prev_m, prev_t = 0.0, origin
    incs = []
    for o in obs:
        inc = o.meter_balance - max(prev_m - (o.pay_time - prev_t), 0.0)
        if inc > 0:
            incs.append(inc)
        prev_m, prev_t = o.meter_balance, o.pay_time
    mu0 = float(np.mean(incs)) if incs else max(o.meter_balance for o in obs) or 5.0
    return ModelParams(lam0, mu0, compliance, spaces)


def _draw_initial_theta(cfg, rng):
    if cfg.init_theta is not None:
        return cfg.init_theta
    spec = cfg.prior_spec
    return ModelParams(
        lam=spec.lam.sample(rng),
        mean_parking=spec.mean_parking.sample(rng),
        compliance=spec.compliance.sample(rng),
        spaces=cfg.spaces,
    )


def run_pmmh(observations, cfg, origin=0.0, backend=None, dist_factory=None):
    """Run the full chain; returns the list of per-iteration PosteriorSamples.

    Stops after num_accepts_burn_in + num_accepts_post acceptances or at
    max_iterations, whichever comes first; raises ZeroAcceptanceError if the
    cap is reached with no acceptance at all. Identical config (including
    seed) gives an identical chain.
    """
    obs = list(observations)
    if not obs:
        raise ValueError("observations must be nonempty")
    if not free_param_names(cfg.prior_spec):
        raise ValueError("all parameters are fixed; nothing to sample")
    if dist_factory is None:
        dist_factory = default_distributions

    root = np.random.SeedSequence(cfg.seed)
    init_ss, prop_ss, filt_root = root.spawn(3)
    prop_rng = np.random.default_rng(prop_ss)

    def evaluate(theta):
        """(log_likelihood, trajectory draws or None) at theta."""
        filt_ss, traj_ss = filt_root.spawn(2)
        ia, sv = dist_factory(theta)
        try:
            res = run_filter(
                obs,
                theta,
                cfg.filter_cfg,
                seed=filt_ss,
                origin=origin,
                backend=backend,
                interarrival_dist=ia,
                service_dist=sv,
                collect_band=False,
            )
        except FilterDegeneracyError:
            return -math.inf, None
        traj_rng = np.random.default_rng(traj_ss)
        trajs = tuple(
            res.sample_trajectory(traj_rng)
            for _ in range(cfg.trajectories_per_sample)
        )
        return res.log_likelihood, trajs

    theta = _draw_initial_theta(cfg, np.random.default_rng(init_ss))
    loglik, trajs = evaluate(theta)

    history = [theta]
    samples = []
    accepts = 0
    target = cfg.num_accepts_burn_in + cfg.num_accepts_post

    for it in range(1, cfg.max_iterations + 1):
        prop_theta = propose_params(theta, history, cfg, prop_rng)
        prop_loglik, prop_trajs = evaluate(prop_theta)
        log_r = acceptance_log_ratio(
            prop_loglik, loglik, prop_theta, theta, cfg.prior_spec
        )
        u = prop_rng.random()
        if log_r == -math.inf:
            accepted = False
        else:
            accepted = u == 0.0 or math.log(u) < log_r
        if accepted:
            theta, loglik, trajs = prop_theta, prop_loglik, prop_trajs
            accepts += 1
            in_burn = accepts <= cfg.num_accepts_burn_in
        else:
            in_burn = accepts < cfg.num_accepts_burn_in
        samples.append(
            PosteriorSample(
                theta, trajs[0] if trajs else None, loglik, it, accepted,
                in_burn, trajs[1:] if trajs else (),
            )
        )
        history.append(theta)
        if it % 100 == 0:
            logger.info(
                "iteration %d: %d accepts, log_lik %.3f", it, accepts, loglik
            )
        if accepts >= target:
            break

    if accepts == 0:
        raise ZeroAcceptanceError(
            f"no acceptance in {cfg.max_iterations} iterations; "
            "loosen the proposal scales or check the filter settings"
        )
    return samples


def map_estimate(chain):
    """Post-burn-in sample with the highest likelihood estimate.

    Ties break toward the earliest iteration.
    """
    post = [s for s in chain if not s.burn_in]
    if not post:
        raise ValueError("chain has no post-burn-in samples")
    return max(post, key=lambda s: (s.log_likelihood, -s.iteration))


def pooled_trajectories(chain, include_burn_in=False):
    """All trajectory draws held by the retained states, in chain order.

    Each sample contributes its primary trajectory plus any extra draws,
    so the pool is a plain mixture over the posterior. Samples whose
    filter run degenerated carry no trajectory and are skipped.
    """
    pool = []
    for s in chain:
        if s.burn_in and not include_burn_in:
            continue
        if s.trajectory is None:
            continue
        pool.append(s.trajectory)
        pool.extend(s.extra_trajectories)
    return pool


def write_chain_csv(chain, file):
    """Write `iter,accepted,lambda,mean_parking,p,log_lik` rows."""

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "accepted", "lambda", "mean_parking", "p", "log_lik"])
        for s in chain:
            w.writerow(
                [
                    s.iteration,
                    int(s.accepted),
                    repr(float(s.theta.lam)),
                    repr(float(s.theta.mean_parking)),
                    repr(float(s.theta.compliance)),
                    repr(float(s.log_likelihood)),
                ]
            )

    if hasattr(file, "write"):
        _write(file)
    else:
        with open(file, "w", newline="") as fh:
            _write(fh)


def read_chain_csv(file):
    """Read a chain CSV back as a dict of numpy columns."""

    def _read(fh):
        rows = list(csv.DictReader(fh))
        return {
            "iter": np.array([int(r["iter"]) for r in rows], dtype=np.int64),
            "accepted": np.array([int(r["accepted"]) for r in rows], dtype=bool),
            "lambda": np.array([float(r["lambda"]) for r in rows]),
            "mean_parking": np.array([float(r["mean_parking"]) for r in rows]),
            "p": np.array([float(r["p"]) for r in rows]),
            "log_lik": np.array([float(r["log_lik"]) for r in rows]),
        }

    if hasattr(file, "read"):
        return _read(file)
    with open(file, newline="") as fh:
        return _read(fh)
