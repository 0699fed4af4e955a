"""Independent reference implementations used to validate the package.

Everything here is deliberately written with different algorithms and data
structures than the library (event heaps instead of recursions, linear-space
sums instead of log-space, sort-and-scan instead of vectorized searches) so
agreement is meaningful.
"""

import heapq
import math


class EventSim:
    """Event-driven FCFS multi-server simulator.

    Maintains a free-space pool keyed by (time it freed, space index) and a
    FIFO waiting line. An arriving driver takes the space that has been free
    the longest (lowest index on ties); if none is free they queue and take
    the next space to free, in arrival order.
    """

    def __init__(self, num_spaces, origin=0.0):
        self.num_spaces = num_spaces
        self.origin = origin

    def run(self, inter_arrivals, service_times):
        n = len(inter_arrivals)
        arrivals = []
        t = self.origin
        for a in inter_arrivals:
            t = t + a
            arrivals.append(t)

        # free pool: heap of (time space became free, space index)
        free_pool = [(self.origin, i) for i in range(1, self.num_spaces + 1)]
        heapq.heapify(free_pool)
        # busy heap: (departure time, space index)
        busy = []
        waiting = []  # FIFO indices of arrived-but-unparked drivers

        starts = [0.0] * n
        deps = [0.0] * n
        spaces = [0] * n

        def release_until(now):
            while busy and busy[0][0] <= now:
                dep_time, space = heapq.heappop(busy)
                heapq.heappush(free_pool, (dep_time, space))
                # a freed space goes to the head of the line immediately
                if waiting:
                    j = waiting.pop(0)
                    freed_at, s = heapq.heappop(free_pool)
                    starts[j] = max(arrivals[j], freed_at)
                    deps[j] = starts[j] + service_times[j]
                    spaces[j] = s
                    heapq.heappush(busy, (deps[j], s))

        for j in range(n):
            release_until(arrivals[j])
            if free_pool and not waiting:
                freed_at, s = heapq.heappop(free_pool)
                starts[j] = arrivals[j]
                deps[j] = starts[j] + service_times[j]
                spaces[j] = s
                heapq.heappush(busy, (deps[j], s))
            else:
                waiting.append(j)
                # drain departures until this driver has parked
                while j in waiting:
                    if not busy:
                        raise RuntimeError("deadlock: waiting driver with no busy space")
                    release_until(busy[0][0])

        return arrivals, starts, deps, spaces

    def in_service_count(self, starts, deps, t):
        return sum(1 for u, d in zip(starts, deps) if u <= t < d)

    def waiting_count(self, arrivals, starts, t):
        return sum(1 for a, u in zip(arrivals, starts) if a <= t < u)


def fold_meter(amounts, times, start_balance=0.0, start_time=0.0):
    """Step-by-step meter recomputation: max(m + beta - elapsed, 0)."""
    m, t_prev = start_balance, start_time
    out = []
    for beta, t in zip(amounts, times):
        m = max(m + beta - (t - t_prev), 0.0)
        t_prev = t
        out.append(m)
    return out


def sum_log_exponential(values, rate):
    """Naive per-term exponential log-density sum."""
    total = 0.0
    for v in values:
        if v <= 0:
            return -math.inf
        total += math.log(rate) - rate * v
    return total


def linear_abc_weight(obs_tau, obs_m, pseudo_taus, pseudo_ms, eps_tau, eps_m):
    """Eq.-style ABC weight evaluated directly in linear space."""
    h = len(pseudo_taus)
    total = 0.0
    for pt, pm in zip(pseudo_taus, pseudo_ms):
        k1 = math.exp(-0.5 * ((obs_tau - pt) / eps_tau) ** 2) / math.sqrt(2 * math.pi)
        k2 = math.exp(-0.5 * ((obs_m - pm) / eps_m) ** 2) / math.sqrt(2 * math.pi)
        total += k1 * k2
    return total / (h * eps_tau * eps_m)


def scan_weighted_quantile(values, weights, q):
    """Sort-and-scan left-continuous inverse CDF."""
    pairs = sorted(zip(values, weights))
    acc = 0.0
    for v, w in pairs:
        acc += w
        if acc >= q - 1e-12:
            return v
    return pairs[-1][0]


def transition_log_density(d_j, compliance, alphas, nus, rate_arrival, rate_service):
    """Term-by-term f_theta recomputation under exponential primitives."""
    if d_j < 1:
        return -math.inf
    if compliance >= 1.0:
        geo = -math.inf if d_j > 1 else 0.0
    else:
        geo = (d_j - 1) * math.log(1 - compliance) + math.log(compliance)
    return (geo + sum_log_exponential(alphas, rate_arrival)
            + sum_log_exponential(nus, rate_service))


def nb_pmf(failures, k, success_prob):
    """Negative-binomial pmf for number of non-payers before the k-th payer."""
    return (math.comb(k + failures - 1, failures)
            * success_prob ** k * (1 - success_prob) ** failures)
