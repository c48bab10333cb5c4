"""Pure numpy implementations of the compiled kernels.

Used when the extension is not built, or when ``SGGRU_PURE_PYTHON=1``.
"""

import numpy as np

SIGMOID = 0
TANH = 1


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _off_norm(a):
    return np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))


def jacobi_sweeps(a_in, tol, max_sweeps):
    a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    v = np.eye(n)
    sweep = 0
    converged = False
    while sweep < max_sweeps:
        if _off_norm(a) <= tol:
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
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = c * col_p - s * col_q
                new_q = s * col_p + c * col_q
                a[:, p] = new_p
                a[p, :] = new_p
                a[:, q] = new_q
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweep += 1
    if not converged and _off_norm(a) <= tol:
        converged = True
    return np.diagonal(a).copy(), v, sweep, converged


def gru_forward(x, h0, w_q, v_q, b_q, w_r, v_r, b_r, w_c, v_c, b_c, activation):
    steps, batch, _ = x.shape
    d = h0.shape[1]
    hs = np.empty((steps + 1, batch, d))
    qs = np.empty((steps, batch, d))
    rs = np.empty((steps, batch, d))
    cs = np.empty((steps, batch, d))
    hs[0] = h0
    for t in range(steps):
        h = hs[t]
        xt = x[t]
        q = _sigmoid(xt @ w_q.T + h @ v_q.T + b_q)
        r = _sigmoid(xt @ w_r.T + h @ v_r.T + b_r)
        a_c = xt @ w_c.T + (h * r) @ v_c.T + b_c
        c = np.tanh(a_c) if activation == TANH else _sigmoid(a_c)
        hs[t + 1] = q * c + (1.0 - q) * h
        qs[t], rs[t], cs[t] = q, r, c
    return hs, qs, rs, cs


def gru_backward(x, hs, qs, rs, cs, dh_out, w_q, v_q, w_r, v_r, w_c, v_c, activation):
    steps, batch, n_in = x.shape
    d = hs.shape[2]
    dx = np.zeros((steps, batch, n_in))
    dh = np.zeros((batch, d))
    g = {name: np.zeros((d, n_in)) for name in ("w_q", "w_r", "w_c")}
    g.update({name: np.zeros((d, d)) for name in ("v_q", "v_r", "v_c")})
    g.update({name: np.zeros(d) for name in ("b_q", "b_r", "b_c")})
    for t in range(steps - 1, -1, -1):
        dh = dh + dh_out[t]
        h, q, r, c, xt = hs[t], qs[t], rs[t], cs[t], x[t]
        da_q = dh * (c - h) * q * (1.0 - q)
        if activation == TANH:
            da_c = dh * q * (1.0 - c * c)
        else:
            da_c = dh * q * c * (1.0 - c)
        d_hr = da_c @ v_c
        da_r = d_hr * h * r * (1.0 - r)
        g["b_q"] += da_q.sum(axis=0)
        g["b_r"] += da_r.sum(axis=0)
        g["b_c"] += da_c.sum(axis=0)
        g["w_q"] += da_q.T @ xt
        g["w_r"] += da_r.T @ xt
        g["w_c"] += da_c.T @ xt
        g["v_q"] += da_q.T @ h
        g["v_r"] += da_r.T @ h
        g["v_c"] += da_c.T @ (h * r)
        dx[t] = da_q @ w_q + da_r @ w_r + da_c @ w_c
        dh = dh * (1.0 - q) + d_hr * r + da_q @ v_q + da_r @ v_r
    return dx, dh, g
