# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot-loop kernels; see _python.py for the reference semantics."""

from libc.math cimport exp, log, sqrt, INFINITY
import numpy as np

cdef double LOG_2PI = log(2.0 * 3.14159265358979323846)


def extend_paths(long long[::1] counts, double[::1] a_last,
                 double[:, ::1] space_busy,
                 double[:, ::1] arr_a, double[:, ::1] arr_u,
                 double[:, ::1] arr_d, long long[:, ::1] arr_space,
                 long long[::1] incr, long long[::1] offsets,
                 double[::1] alphas, double[::1] nus):
    cdef Py_ssize_t n_particles = counts.shape[0]
    cdef Py_ssize_t n_spaces = space_busy.shape[1]
    cdef Py_ssize_t n, r, j, i, i_star
    cdef long long base
    cdef double a_new, u_new, d_new, c, best

    for n in range(n_particles):
        base = offsets[n]
        for r in range(incr[n]):
            a_new = a_last[n] + alphas[base + r]
            best = space_busy[n, 0]
            i_star = 0
            for i in range(1, n_spaces):
                if space_busy[n, i] < best:
                    best = space_busy[n, i]
                    i_star = i
            c = best
            u_new = a_new if a_new > c else c
            d_new = u_new + nus[base + r]
            j = counts[n]
            arr_a[n, j] = a_new
            arr_u[n, j] = u_new
            arr_d[n, j] = d_new
            arr_space[n, j] = i_star + 1
            space_busy[n, i_star] = d_new
            a_last[n] = a_new
            counts[n] = j + 1


def step_log_weights(double[:, ::1] arr_u, double[:, ::1] arr_d,
                     long long[::1] counts,
                     double m_prev, double t_prev,
                     double[:, ::1] pseudo_std_exp,
                     double tau_obs, double m_obs,
                     double eps_tau, double bw_factor, double eps_m_floor,
                     double eps_m_fixed):
    cdef Py_ssize_t n_particles = counts.shape[0]
    cdef Py_ssize_t n_pseudo = pseudo_std_exp.shape[1]
    cdef Py_ssize_t n, h, j
    cdef double u, nu, elapsed, m_h, mean, var, dev, eps_m
    cdef double zmax, acc, z, dt

    out_np = np.empty(n_particles, dtype=np.float64)
    scratch_np = np.empty(n_pseudo, dtype=np.float64)
    cdef double[::1] out = out_np
    cdef double[::1] scratch = scratch_np

    for n in range(n_particles):
        j = counts[n] - 1
        u = arr_u[n, j]
        nu = arr_d[n, j] - u
        elapsed = u - t_prev
        if elapsed < 0:
            elapsed = 0
        mean = 0
        for h in range(n_pseudo):
            m_h = m_prev + nu * pseudo_std_exp[n, h] - elapsed
            if m_h < 0:
                m_h = 0
            scratch[h] = m_h
            mean += m_h
        mean /= n_pseudo
        if eps_m_fixed > 0:
            eps_m = eps_m_fixed
        else:
            var = 0
            for h in range(n_pseudo):
                dev = scratch[h] - mean
                var += dev * dev
            eps_m = bw_factor * sqrt(var / n_pseudo)
            if eps_m < eps_m_floor:
                eps_m = eps_m_floor
        zmax = -INFINITY
        for h in range(n_pseudo):
            dev = (m_obs - scratch[h]) / eps_m
            z = -0.5 * dev * dev
            scratch[h] = z
            if z > zmax:
                zmax = z
        acc = 0
        for h in range(n_pseudo):
            acc += exp(scratch[h] - zmax)
        dt = (tau_obs - u) / eps_tau
        out[n] = (-0.5 * dt * dt - LOG_2PI - log(eps_tau) - log(eps_m)
                  - log(<double> n_pseudo) + zmax + log(acc))
    return out_np


def occupancy_counts(double[:, ::1] arr_u, double[:, ::1] arr_d,
                     long long[::1] counts, double[::1] times):
    cdef Py_ssize_t n_particles = counts.shape[0]
    cdef Py_ssize_t n_times = times.shape[0]
    cdef Py_ssize_t n, t, j
    cdef double tv
    cdef long long acc

    out_np = np.zeros((n_particles, n_times), dtype=np.int64)
    cdef long long[:, ::1] out = out_np
    for n in range(n_particles):
        for t in range(n_times):
            tv = times[t]
            acc = 0
            for j in range(counts[n]):
                if arr_u[n, j] <= tv and tv < arr_d[n, j]:
                    acc += 1
            out[n, t] = acc
    return out_np
