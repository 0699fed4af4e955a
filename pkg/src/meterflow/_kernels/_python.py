"""Pure-numpy kernel fallback.

Mirrors the compiled core operation for operation. Path extension performs
identical elementwise float arithmetic (bit-equal results); the weight
kernel's reductions (std, log-sum-exp) may differ from the compiled ones in
the last ulps.
"""

import math

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


def extend_paths(counts, a_last, space_busy, arr_a, arr_u, arr_d, arr_space,
                 incr, offsets, alphas, nus):
    """Append `incr[n]` arrivals to each particle's path, in place.

    Draw layout: particle n consumes alphas/nus[offsets[n] : offsets[n]+incr[n]]
    in order, so both backends see identical primitives.
    """
    if len(counts) == 0:
        return
    max_rounds = int(incr.max())
    all_rows = np.arange(len(counts))
    for r in range(max_rounds):
        rows = all_rows[incr > r]
        if rows.size == 0:
            break
        i_star = np.argmin(space_busy[rows], axis=1)  # first occurrence on ties
        c = space_busy[rows, i_star]
        draw = offsets[rows] + r
        a_new = a_last[rows] + alphas[draw]
        u_new = np.maximum(a_new, c)
        d_new = u_new + nus[draw]
        j = counts[rows]
        arr_a[rows, j] = a_new
        arr_u[rows, j] = u_new
        arr_d[rows, j] = d_new
        arr_space[rows, j] = i_star + 1
        space_busy[rows, i_star] = d_new
        a_last[rows] = a_new
        counts[rows] = j + 1


def step_log_weights(arr_u, arr_d, counts, m_prev, t_prev, pseudo_std_exp,
                     tau_obs, m_obs, eps_tau, bw_factor, eps_m_floor,
                     eps_m_fixed):
    """ABC log weight of each particle for one observed payment.

    The pseudo pay time is the newest arrival's service start (shared by all
    H pseudo draws); pseudo balances fold a conditioned-nonzero exponential
    payment through the meter recursion from the observed previous state.
    Negative elapsed time (particle clock behind the observations) is clamped
    to zero; such particles are crushed by the tau kernel factor anyway.
    """
    n = len(counts)
    rows = np.arange(n)
    j = counts - 1
    u = arr_u[rows, j]
    nu = arr_d[rows, j] - u
    elapsed = np.maximum(u - t_prev, 0.0)
    m_tilde = np.maximum(m_prev + nu[:, None] * pseudo_std_exp - elapsed[:, None], 0.0)
    if eps_m_fixed > 0:
        eps_m = np.full(n, eps_m_fixed)
    else:
        eps_m = np.maximum(bw_factor * m_tilde.std(axis=1), eps_m_floor)
    z = -0.5 * np.square((m_obs - m_tilde) / eps_m[:, None])
    lse = logsumexp(z, axis=1)
    num_pseudo = pseudo_std_exp.shape[1]
    return (
        -0.5 * np.square((tau_obs - u) / eps_tau)
        - LOG_2PI
        - math.log(eps_tau)
        - np.log(eps_m)
        - math.log(num_pseudo)
        + lse
    )


def occupancy_counts(arr_u, arr_d, counts, times):
    """Parked-car count of every particle at every time: out[n, t]."""
    n = len(counts)
    times = np.asarray(times, dtype=float)
    out = np.zeros((n, len(times)), dtype=np.int64)
    if n == 0 or len(times) == 0:
        return out
    max_count = int(counts.max())
    # chunk over arrivals to bound the broadcast temporaries
    valid = np.arange(max_count)[None, :] < counts[:, None]
    for t_idx, t in enumerate(times):
        parked = (arr_u[:, :max_count] <= t) & (t < arr_d[:, :max_count]) & valid
        out[:, t_idx] = np.count_nonzero(parked, axis=1)
    return out
