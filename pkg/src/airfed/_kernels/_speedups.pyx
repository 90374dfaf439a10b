# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled core for the hot kernels; see _py.py for the contract."""

import numpy as np

from libc.math cimport exp


def sample_grad(double[::1] a, double b, double lam, double[::1] theta, double[::1] out):
    cdef Py_ssize_t k, d = a.shape[0]
    cdef double z = 0.0, t, e, s, coef
    for k in range(d):
        z += a[k] * theta[k]
    t = b * z
    if t >= 0.0:
        e = exp(-t)
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + exp(t))
    coef = -b * s
    for k in range(d):
        out[k] = a[k] * coef + lam * theta[k]
    return z


def saga_merge(double[:, ::1] table, double[::1] avg, Py_ssize_t idx,
               double[::1] fresh, double[::1] out):
    cdef Py_ssize_t k, d = avg.shape[0]
    cdef Py_ssize_t m = table.shape[0]
    cdef double minv = 1.0 / (<double> m)
    cdef double delta
    if idx < 0 or idx >= m:
        raise IndexError(f"sample index {idx} out of range for table of {m}")
    # same per-element order as the numpy path: out, then avg, then table
    for k in range(d):
        delta = fresh[k] - table[idx, k]
        out[k] = delta + avg[k]
        avg[k] = avg[k] + delta * minv
        table[idx, k] = fresh[k]
    return np.asarray(out)


def aircomp_receive(double[:, ::1] theta_half, Py_ssize_t[::1] nbr_idx, double[::1] w_nbr,
                    double complex[::1] h, double sqrt_p, double w_self,
                    double[::1] own, noise, double power, double[::1] out):
    cdef Py_ssize_t k, t, j
    cdef Py_ssize_t d = out.shape[0]
    cdef Py_ssize_t m = nbr_idx.shape[0]
    cdef double hre, him, abs2, s, cre, cim, v, xre, xim
    cdef double px, max_px = 0.0
    cdef double ptol = power * (1.0 + 1e-12)
    cdef double[::1] yre = np.zeros(d)
    cdef double[::1] noise_v
    for t in range(m):
        hre = h[t].real
        him = h[t].imag
        abs2 = hre * hre + him * him
        if abs2 == 0.0:
            raise ValueError("zero channel coefficient")
        s = sqrt_p * w_nbr[t]
        cre = (s * hre) / abs2
        cim = (s * -him) / abs2
        j = nbr_idx[t]
        px = 0.0
        for k in range(d):
            v = theta_half[j, k]
            xre = cre * v
            xim = cim * v
            px += xre * xre + xim * xim
            # imaginary part of the superposition is discarded by the decoder
            yre[k] += hre * xre - him * xim
        if px > ptol:
            raise RuntimeError(f"peak power constraint violated: {px} > {power}")
        if px > max_px:
            max_px = px
    for k in range(d):
        out[k] = w_self * own[k] + yre[k] / sqrt_p
    if noise is not None:
        noise_v = noise
        for k in range(d):
            out[k] += noise_v[k]
    return max_px
