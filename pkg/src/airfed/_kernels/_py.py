"""Numpy reference implementation of the hot kernels.

Semantics here define the contract; the compiled module in _speedups.pyx
mirrors the per-element operation order so both backends agree to floating-
point roundoff (bitwise wherever no reduction is involved).
"""

import numpy as np


def sample_grad(a, b, lam, theta, out):
    """Gradient of log(1+exp(-b a.theta)) + (lam/2)||theta||^2, written to out.

    Returns the logit a.theta.  Stable for margins up to ~700.
    """
    z = float(a @ theta)
    t = b * z
    if t >= 0.0:
        e = np.exp(-t)
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + np.exp(t))
    np.multiply(a, -b * s, out=out)
    out += lam * theta
    return z


def saga_merge(table, avg, idx, fresh, out):
    """SAGA combine-and-replace for one drawn sample.

    out <- fresh - table[idx] + avg   (avg is the pre-update table mean)
    then avg and table[idx] are updated in place.  `fresh` must not alias
    `out` or rows of `table`.
    """
    m = table.shape[0]
    if not 0 <= idx < m:
        raise IndexError(f"sample index {idx} out of range for table of {m}")
    delta = fresh - table[idx]
    np.add(delta, avg, out=out)
    avg += delta / m
    table[idx] = fresh
    return out


def aircomp_receive(theta_half, nbr_idx, w_nbr, h, sqrt_p, w_self, own, noise, power, out):
    """One receiver's full AirComp block: precode, superpose, decode.

    Every neighbor j transmits x_j = sqrt_p * w_j * conj(h_j)/|h_j|^2 * theta_j;
    the receiver sees sum_j h_j x_j, divides by sqrt_p, takes the real part and
    adds its own self-weighted model plus the decoded-noise vector (pass None
    for a noiseless block).  The peak power constraint ||x_j||^2 <= P is
    asserted for every transmission.  Returns the largest transmit energy.
    """
    d = out.shape[0]
    y = np.zeros(d, dtype=np.complex128)
    ptol = power * (1.0 + 1e-12)
    max_px = 0.0
    for t in range(len(nbr_idx)):
        ht = h[t]
        abs2 = ht.real * ht.real + ht.imag * ht.imag
        if abs2 == 0.0:
            raise ValueError("zero channel coefficient")
        c = sqrt_p * w_nbr[t] * np.conj(ht) / abs2
        x = c * theta_half[nbr_idx[t]]
        px = float(np.sum(x.real * x.real + x.imag * x.imag))
        if px > ptol:
            raise RuntimeError(f"peak power constraint violated: {px} > {power}")
        if px > max_px:
            max_px = px
        y += ht * x
    np.multiply(own, w_self, out=out)
    out += y.real / sqrt_p
    if noise is not None:
        out += noise
    return max_px
