# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: cyclic Jacobi sweeps and the batched GRU recurrence.

Signatures mirror :mod:`sggru._kernels._pykernels` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, fabs

cnp.import_array()

cdef enum:
    SIGMOID = 0
    TANH = 1


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


cdef double _off_norm(double[:, ::1] a, Py_ssize_t n) nogil:
    cdef Py_ssize_t p, q
    cdef double s = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            s += a[p, q] * a[p, q]
    return sqrt(2.0 * s)


def jacobi_sweeps(double[:, ::1] a_in, double tol, int max_sweeps):
    """Diagonalise a symmetric matrix in place on a copy.

    Returns ``(diagonal, rotations, sweeps, converged)`` with ``a = V diag(d) V^T``.
    """
    cdef Py_ssize_t n = a_in.shape[0]
    a_np = np.array(a_in, dtype=np.float64, order="C", copy=True)
    v_np = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_np
    cdef double[:, ::1] v = v_np
    cdef Py_ssize_t p, q, r
    cdef double apq, app, aqq, theta, t, c, s, arp, arq, vrp, vrq
    cdef int sweep = 0
    cdef bint converged = False

    with nogil:
        while sweep < max_sweeps:
            if _off_norm(a, n) <= tol:
                converged = True
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    app = a[p, p]
                    aqq = a[q, q]
                    theta = (aqq - app) / (2.0 * apq)
                    if fabs(theta) > 1e150:
                        t = 0.5 / theta
                    elif theta >= 0.0:
                        t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for r in range(n):
                        if r == p or r == q:
                            continue
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = c * arp - s * arq
                        a[p, r] = a[r, p]
                        a[r, q] = s * arp + c * arq
                        a[q, r] = a[r, q]
                    a[p, p] = app - t * apq
                    a[q, q] = aqq + t * apq
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for r in range(n):
                        vrp = v[r, p]
                        vrq = v[r, q]
                        v[r, p] = c * vrp - s * vrq
                        v[r, q] = s * vrp + c * vrq
            sweep += 1
        if not converged and _off_norm(a, n) <= tol:
            converged = True

    return np.diagonal(a_np).copy(), v_np, sweep, bool(converged)


def gru_forward(double[:, :, ::1] x, double[:, ::1] h0,
                double[:, ::1] w_q, double[:, ::1] v_q, double[::1] b_q,
                double[:, ::1] w_r, double[:, ::1] v_r, double[::1] b_r,
                double[:, ::1] w_c, double[:, ::1] v_c, double[::1] b_c,
                int activation):
    """Run the gated recurrence over ``x`` of shape (steps, batch, inputs).

    Returns hidden states (steps+1, batch, hidden) and the gates q, r, c.
    """
    cdef Py_ssize_t steps = x.shape[0], batch = x.shape[1], n_in = x.shape[2]
    cdef Py_ssize_t d = h0.shape[1]
    hs_np = np.empty((steps + 1, batch, d))
    qs_np = np.empty((steps, batch, d))
    rs_np = np.empty((steps, batch, d))
    cs_np = np.empty((steps, batch, d))
    hr_np = np.empty(d)
    cdef double[:, :, ::1] hs = hs_np
    cdef double[:, :, ::1] qs = qs_np
    cdef double[:, :, ::1] rs = rs_np
    cdef double[:, :, ::1] cs = cs_np
    cdef double[::1] hr = hr_np
    cdef Py_ssize_t t, b, i, j
    cdef double aq, ar, ac, hp

    hs[0, :, :] = h0
    with nogil:
        for t in range(steps):
            for b in range(batch):
                for i in range(d):
                    aq = b_q[i]
                    ar = b_r[i]
                    for j in range(n_in):
                        aq = aq + w_q[i, j] * x[t, b, j]
                        ar = ar + w_r[i, j] * x[t, b, j]
                    for j in range(d):
                        aq = aq + v_q[i, j] * hs[t, b, j]
                        ar = ar + v_r[i, j] * hs[t, b, j]
                    qs[t, b, i] = _sigmoid(aq)
                    rs[t, b, i] = _sigmoid(ar)
                for j in range(d):
                    hr[j] = hs[t, b, j] * rs[t, b, j]
                for i in range(d):
                    ac = b_c[i]
                    for j in range(n_in):
                        ac = ac + w_c[i, j] * x[t, b, j]
                    for j in range(d):
                        ac = ac + v_c[i, j] * hr[j]
                    if activation == TANH:
                        cs[t, b, i] = tanh(ac)
                    else:
                        cs[t, b, i] = _sigmoid(ac)
                    hp = hs[t, b, i]
                    hs[t + 1, b, i] = qs[t, b, i] * cs[t, b, i] + (1.0 - qs[t, b, i]) * hp
    return hs_np, qs_np, rs_np, cs_np


def gru_backward(double[:, :, ::1] x, double[:, :, ::1] hs,
                 double[:, :, ::1] qs, double[:, :, ::1] rs, double[:, :, ::1] cs,
                 double[:, :, ::1] dh_out,
                 double[:, ::1] w_q, double[:, ::1] v_q,
                 double[:, ::1] w_r, double[:, ::1] v_r,
                 double[:, ::1] w_c, double[:, ::1] v_c,
                 int activation):
    """Backpropagation through time for :func:`gru_forward`.

    ``dh_out[t]`` is the upstream gradient on ``hs[t + 1]``. Returns
    ``(dx, dh0, grads)`` where grads is a dict keyed like the parameters.
    """
    cdef Py_ssize_t steps = x.shape[0], batch = x.shape[1], n_in = x.shape[2]
    cdef Py_ssize_t d = hs.shape[2]
    dx_np = np.zeros((steps, batch, n_in))
    dh_np = np.zeros((batch, d))
    g = {name: np.zeros((d, n_in)) for name in ("w_q", "w_r", "w_c")}
    g.update({name: np.zeros((d, d)) for name in ("v_q", "v_r", "v_c")})
    g.update({name: np.zeros(d) for name in ("b_q", "b_r", "b_c")})
    cdef double[:, :, ::1] dx = dx_np
    cdef double[:, ::1] dh = dh_np
    cdef double[:, ::1] gwq = g["w_q"], gwr = g["w_r"], gwc = g["w_c"]
    cdef double[:, ::1] gvq = g["v_q"], gvr = g["v_r"], gvc = g["v_c"]
    cdef double[::1] gbq = g["b_q"], gbr = g["b_r"], gbc = g["b_c"]
    dac_np = np.empty(d)
    daq_np = np.empty(d)
    dar_np = np.empty(d)
    dhr_np = np.empty(d)
    dnext_np = np.empty(d)
    cdef double[::1] dac = dac_np, daq = daq_np, dar = dar_np, dhr = dhr_np, dnext = dnext_np
    cdef Py_ssize_t t, b, i, j
    cdef double dht, q, c, r, hp, acc

    with nogil:
        for t in range(steps - 1, -1, -1):
            for b in range(batch):
                for i in range(d):
                    dh[b, i] = dh[b, i] + dh_out[t, b, i]
                for i in range(d):
                    dht = dh[b, i]
                    q = qs[t, b, i]
                    c = cs[t, b, i]
                    hp = hs[t, b, i]
                    daq[i] = dht * (c - hp) * q * (1.0 - q)
                    if activation == TANH:
                        dac[i] = dht * q * (1.0 - c * c)
                    else:
                        dac[i] = dht * q * c * (1.0 - c)
                    dnext[i] = dht * (1.0 - q)
                # candidate: a_c = W_c x + V_c (h*r) + b_c
                for j in range(d):
                    acc = 0.0
                    for i in range(d):
                        acc = acc + v_c[i, j] * dac[i]
                    dhr[j] = acc
                for i in range(d):
                    r = rs[t, b, i]
                    dar[i] = dhr[i] * hs[t, b, i] * r * (1.0 - r)
                    dnext[i] = dnext[i] + dhr[i] * r
                for i in range(d):
                    gbq[i] = gbq[i] + daq[i]
                    gbr[i] = gbr[i] + dar[i]
                    gbc[i] = gbc[i] + dac[i]
                    for j in range(n_in):
                        gwq[i, j] = gwq[i, j] + daq[i] * x[t, b, j]
                        gwr[i, j] = gwr[i, j] + dar[i] * x[t, b, j]
                        gwc[i, j] = gwc[i, j] + dac[i] * x[t, b, j]
                    for j in range(d):
                        gvq[i, j] = gvq[i, j] + daq[i] * hs[t, b, j]
                        gvr[i, j] = gvr[i, j] + dar[i] * hs[t, b, j]
                        gvc[i, j] = gvc[i, j] + dac[i] * hs[t, b, j] * rs[t, b, j]
                for j in range(n_in):
                    acc = 0.0
                    for i in range(d):
                        acc = acc + w_q[i, j] * daq[i] + w_r[i, j] * dar[i] + w_c[i, j] * dac[i]
                    dx[t, b, j] = acc
                for j in range(d):
                    acc = dnext[j]
                    for i in range(d):
                        acc = acc + v_q[i, j] * daq[i] + v_r[i, j] * dar[i]
                    dh[b, j] = acc
    return dx_np, dh_np, g
