"""
Compiled Kernels

Per-sample loops over CSR arrays, compiled with numba and released from the
GIL so they can also run inside worker threads. The scalar helpers (coupling,
estimator entry, logistic derivative) are shared by the serial epochs, the
asynchronous workers and the perturbed-iterate simulator, so all of them
produce the same floating point results for the same inputs.

@version 0.1.0
@date October 2026
"""

import math

from numba import njit


@njit(nogil=True, cache=True)
def logistic_derivative(t, b):
    """Derivative of log(1 + exp(-b t)) with respect to t, i.e. -b * sigmoid(-b t)."""
    u = -b * t
    if u >= 0.0:
        s = 1.0 / (1.0 + math.exp(-u))
    else:
        e = math.exp(u)
        s = e / (1.0 + e)
    return -b * s


@njit(nogil=True, cache=True)
def couple(z_v, x_snap_v, dg_v, theta, phi):
    """y = theta z + (1 - theta) x_snap - phi D g_snap, one coordinate."""
    return theta * z_v + (1.0 - theta) * x_snap_v - phi * dg_v


@njit(nogil=True, cache=True)
def estimator_entry(coef, a_v, reg_v, y_v, x_snap_v, dg_v):
    """One coordinate of grad f_i(y) - grad f_i(x_snap) + D_i g_snap on T_i."""
    return coef * a_v + reg_v * (y_v - x_snap_v) + dg_v


@njit(nogil=True, cache=True)
def saga_entry(diff, a_v, d_v, average_v, reg_v, x_v):
    """One coordinate of (l'_i(x) - alpha_i) a_i + D_i avg + mu D_i x on T_i."""
    return diff * a_v + d_v * average_v + reg_v * x_v


@njit(nogil=True, cache=True)
def margins_and_derivatives(indptr, indices, data, labels, x, start, end, margins, derivatives):
    """Fill <a_i, x> and l'_i(<a_i, x>) for samples start..end-1."""
    for i in range(start, end):
        p = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            p += data[jj] * x[indices[jj]]
        margins[i] = p
        derivatives[i] = logistic_derivative(p, labels[i])


@njit(nogil=True, cache=True)
def accumulate_gradient(indptr, indices, data, weights, start, end, out):
    """out += sum_{i in [start, end)} weights[i] * a_i."""
    for i in range(start, end):
        w = weights[i]
        for jj in range(indptr[i], indptr[i + 1]):
            out[indices[jj]] += w * data[jj]


@njit(nogil=True, cache=True)
def acc_svrg_epoch(indptr, indices, data, labels, reg, z, x_snap, dg, lp_snap,
                   samples, theta, phi, eta, t_snap, y_snap, ybuf,
                   average, z_sum, last_seen):
    """
    One inner loop of the sparse accelerated SVRG epoch, updating z in place.

    At iteration t_snap the full coupled point y_t is written to y_snap before
    the update. With average set, z_sum receives sum_k z_k (lazily, per
    coordinate) for the averaged-snapshot variant. theta = 1, phi = 0 gives
    plain sparse SVRG.
    """
    m = samples.shape[0]
    d = z.shape[0]
    for k in range(m):
        i = samples[k]
        if k == t_snap:
            for v in range(d):
                y_snap[v] = couple(z[v], x_snap[v], dg[v], theta, phi)
        lo = indptr[i]
        hi = indptr[i + 1]
        # y is only formed on the support of sample i
        margin = 0.0
        for jj in range(lo, hi):
            v = indices[jj]
            y_v = couple(z[v], x_snap[v], dg[v], theta, phi)
            ybuf[jj - lo] = y_v
            margin += data[jj] * y_v
        coef = logistic_derivative(margin, labels[i]) - lp_snap[i]
        for jj in range(lo, hi):
            v = indices[jj]
            g = estimator_entry(coef, data[jj], reg[v], ybuf[jj - lo], x_snap[v], dg[v])
            if average:
                # z[v] held its value since last_seen[v]
                z_sum[v] += z[v] * (k - last_seen[v] + 1)
                last_seen[v] = k + 1
            z[v] = z[v] + (-eta * g)
    if average:
        for v in range(d):
            z_sum[v] += z[v] * (m - last_seen[v])


@njit(nogil=True, cache=True)
def saga_segment(indptr, indices, data, labels, reg, d_diag, x, memory, average,
                 samples, step, inv_n):
    """Run len(samples) sparse SAGA iterations in place on x, memory and average."""
    for k in range(samples.shape[0]):
        i = samples[k]
        lo = indptr[i]
        hi = indptr[i + 1]
        margin = 0.0
        for jj in range(lo, hi):
            margin += data[jj] * x[indices[jj]]
        lp = logistic_derivative(margin, labels[i])
        diff = lp - memory[i]
        # average stays equal to the mean of memory[i] * a_i
        for jj in range(lo, hi):
            v = indices[jj]
            g = saga_entry(diff, data[jj], d_diag[v], average[v], reg[v], x[v])
            x[v] = x[v] + (-step * g)
            average[v] = average[v] + diff * data[jj] * inv_n
        memory[i] = lp
