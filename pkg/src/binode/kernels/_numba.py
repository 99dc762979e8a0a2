"""Numba kernels: per-sample loops over tiny dense networks.

Accumulation order is fixed (bias first, then inputs left to right; process
sum left to right, fixed terms last) so that these kernels reproduce the
numpy fallback and the scalar tape to the last bit or within a few ulp.
"""
import math

import numpy as np
from numba import njit

# arch columns
D_IN, N_HIDDEN, WIDTH, HID_ACT, OUT_ACT, THETA_OFF, IN_OFF, ANY_MONO = range(8)


@njit(cache=True)
def _act(code, z):
    if code == 0:
        return z
    if code == 1:
        return z if z > 0.0 else 0.0
    if code == 2:
        return z if z >= 0.0 else math.expm1(z)
    if z > 30.0:
        return z
    if z < -30.0:
        return math.exp(z)
    return math.log1p(math.exp(z))


@njit(cache=True)
def _dact(code, z):
    if code == 0:
        return 1.0
    if code == 1:
        return 1.0 if z > 0.0 else 0.0
    if code == 2:
        return 1.0 if z >= 0.0 else math.exp(z)
    if z > 30.0:
        return 1.0
    if z < -30.0:
        return math.exp(z)
    return 1.0 / (1.0 + math.exp(-z))


@njit(cache=True)
def _mlp_forward(theta, arch_row, mono, xin, pre, post):
    d_in = arch_row[D_IN]
    n_hidden = arch_row[N_HIDDEN]
    width = arch_row[WIDTH]
    any_mono = arch_row[ANY_MONO]
    p = arch_row[THETA_OFF]
    in_off = arch_row[IN_OFF]
    for i in range(d_in):
        post[0, i] = xin[i]
    n_prev = d_in
    for layer in range(n_hidden + 1):
        n_out = width if layer < n_hidden else 1
        code = arch_row[HID_ACT] if layer < n_hidden else arch_row[OUT_ACT]
        for o in range(n_out):
            acc = theta[p + n_out * n_prev + o]
            for i in range(n_prev):
                w = theta[p + o * n_prev + i]
                if (layer == 0 and mono[in_off + i] != 0) or (layer > 0 and any_mono != 0):
                    w = w * w
                acc += w * post[layer, i]
            pre[layer + 1, o] = acc
            post[layer + 1, o] = _act(code, acc)
        p += n_out * n_prev + n_out
        n_prev = n_out
    return post[n_hidden + 1, 0]


@njit(cache=True)
def _mlp_backward(theta, arch_row, mono, pre, post, gout, gtheta, gin, delta, gprev):
    """Accumulate parameter gradients into gtheta and input gradients into gin."""
    d_in = arch_row[D_IN]
    n_hidden = arch_row[N_HIDDEN]
    width = arch_row[WIDTH]
    any_mono = arch_row[ANY_MONO]
    in_off = arch_row[IN_OFF]
    offs = np.empty(n_hidden + 1, dtype=np.int64)
    p = arch_row[THETA_OFF]
    n_prev = d_in
    for layer in range(n_hidden + 1):
        offs[layer] = p
        n_out = width if layer < n_hidden else 1
        p += n_out * n_prev + n_out
        n_prev = n_out
    delta[0] = gout * _dact(arch_row[OUT_ACT], pre[n_hidden + 1, 0])
    for layer in range(n_hidden, -1, -1):
        n_out = width if layer < n_hidden else 1
        n_prev = width if layer > 0 else d_in
        p = offs[layer]
        for i in range(n_prev):
            gprev[i] = 0.0
        for o in range(n_out):
            d = delta[o]
            gtheta[p + n_out * n_prev + o] += d
            for i in range(n_prev):
                raw = theta[p + o * n_prev + i]
                if (layer == 0 and mono[in_off + i] != 0) or (layer > 0 and any_mono != 0):
                    gtheta[p + o * n_prev + i] += d * post[layer, i] * 2.0 * raw
                    gprev[i] += d * (raw * raw)
                else:
                    gtheta[p + o * n_prev + i] += d * post[layer, i]
                    gprev[i] += d * raw
        if layer > 0:
            for i in range(n_prev):
                delta[i] = gprev[i] * _dact(arch_row[HID_ACT], pre[layer, i])
        else:
            for i in range(n_prev):
                gin[i] += gprev[i]


# fixed terms -----------------------------------------------------------

@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _meal_input(par, t):
    k = par[7]
    n_meals = int(par[21])
    total = 0.0
    for j in range(n_meals):
        ti = par[22 + 2 * j]
        qi = par[23 + 2 * j]
        if ti <= t:
            total += qi * k * math.exp(-k * (t - ti))
    return total


@njit(cache=True)
def _hill_switch(s, beta):
    # 1 / (1 + s^-beta) and its derivative in s, zero for s <= 0
    if s <= 0.0:
        return 0.0, 0.0
    sb = math.exp(beta * math.log(s))
    h = sb / (1.0 + sb)
    dh = beta * sb / (s * (1.0 + sb) * (1.0 + sb))
    return h, dh


@njit(cache=True)
def _fixed_eval(kind, par, n, x, t, out):
    if kind == 1:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += par[i * n + j] * x[j]
            out[i] += acc
    elif kind == 2:
        V1, V2, V3, E, t1, t2, td = par[0], par[1], par[2], par[3], par[4], par[5], par[6]
        Rm, a1, C1, C2, C3, C4, C5 = par[8], par[9], par[10], par[11], par[12], par[13], par[14]
        Ub, U0, Um, Rg, alpha, beta = par[15], par[16], par[17], par[18], par[19], par[20]
        kappa = (1.0 / C4) * (1.0 / V2 + 1.0 / (E * t2))
        f1 = Rm * _sigmoid(x[2] / (V3 * C1) - a1)
        f2 = Ub * (-math.expm1(-x[2] / (C2 * V3)))
        h, _ = _hill_switch(kappa * x[1], beta)
        f3 = (U0 + Um * h) / (C3 * V3)
        f4 = Rg * _sigmoid(-alpha * (x[5] / (C5 * V1) - 1.0))
        out[0] += f1
        out[2] += f4 + _meal_input(par, t) - f2 - f3 * x[2]
        out[3] += (x[0] - x[3]) / td
        out[4] += (x[3] - x[4]) / td
        out[5] += (x[4] - x[5]) / td


@njit(cache=True)
def _fixed_vjp(kind, par, n, x, t, g, xbar):
    if kind == 1:
        for i in range(n):
            for j in range(n):
                xbar[j] += par[i * n + j] * g[i]
    elif kind == 2:
        V1, V2, V3, E, t2, td = par[0], par[1], par[2], par[3], par[5], par[6]
        Rm, a1, C1, C2, C3, C4, C5 = par[8], par[9], par[10], par[11], par[12], par[13], par[14]
        Ub, U0, Um, Rg, alpha, beta = par[15], par[16], par[17], par[18], par[19], par[20]
        kappa = (1.0 / C4) * (1.0 / V2 + 1.0 / (E * t2))
        s1 = _sigmoid(x[2] / (V3 * C1) - a1)
        df1 = Rm * s1 * (1.0 - s1) / (V3 * C1)
        df2 = Ub * math.exp(-x[2] / (C2 * V3)) / (C2 * V3)
        h, dh = _hill_switch(kappa * x[1], beta)
        f3 = (U0 + Um * h) / (C3 * V3)
        df3 = Um * dh * kappa / (C3 * V3)
        s4 = _sigmoid(-alpha * (x[5] / (C5 * V1) - 1.0))
        df4 = -Rg * s4 * (1.0 - s4) * alpha / (C5 * V1)
        xbar[2] += g[0] * df1
        xbar[5] += g[2] * df4
        xbar[2] += g[2] * (-df2 - f3)
        xbar[1] += g[2] * (-df3 * x[2])
        xbar[0] += g[3] / td
        xbar[3] += (g[4] - g[3]) / td
        xbar[4] += (g[5] - g[4]) / td
        xbar[5] += -g[5] / td


# vector field ----------------------------------------------------------

@njit(cache=True)
def _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, out, v, xin, pre, post):
    n = w_eff.shape[0]
    k = w_eff.shape[1]
    for p in range(k):
        off = arch[p, IN_OFF]
        for i in range(arch[p, D_IN]):
            xin[i] = x[in_idx[off + i]] / in_scale[off + i]
        v[p] = _mlp_forward(theta, arch[p], mono, xin, pre[p], post[p])
    for i in range(n):
        acc = 0.0
        for j in range(k):
            acc += w_eff[i, j] * v[j]
        out[i] = acc
    _fixed_eval(fkind, fpar, n, x, t, out)


@njit(cache=True)
def _field_vjp(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, g,
               xbar, gtheta, gw, v, xin, pre, post, gin, delta, gprev, tmp):
    n = w_eff.shape[0]
    k = w_eff.shape[1]
    _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, tmp, v, xin, pre, post)
    for p in range(k):
        vb = 0.0
        for i in range(n):
            gw[i, p] += g[i] * v[p]
            vb += w_eff[i, p] * g[i]
        d_in = arch[p, D_IN]
        for i in range(d_in):
            gin[i] = 0.0
        _mlp_backward(theta, arch[p], mono, pre[p], post[p], vb, gtheta, gin, delta, gprev)
        off = arch[p, IN_OFF]
        for i in range(d_in):
            xbar[in_idx[off + i]] += gin[i] / in_scale[off + i]
    _fixed_vjp(fkind, fpar, n, x, t, g, xbar)


@njit(cache=True)
def _buffers(arch, k, n):
    lmax = 0
    maxw = 1
    for p in range(k):
        lmax = max(lmax, arch[p, N_HIDDEN])
        maxw = max(maxw, arch[p, WIDTH], arch[p, D_IN])
    pre = np.zeros((k, lmax + 2, maxw))
    post = np.zeros((k, lmax + 2, maxw))
    return pre, post, np.zeros(k), np.zeros(maxw), np.zeros(maxw), np.zeros(maxw), np.zeros(maxw)


@njit(cache=True)
def _rk4_step(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, dt, xn,
              k1, k2, k3, k4, z, v, xin, pre, post):
    n = x.shape[0]
    half = 0.5 * dt
    _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, k1, v, xin, pre, post)
    for i in range(n):
        z[i] = x[i] + half * k1[i]
    _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, k2, v, xin, pre, post)
    for i in range(n):
        z[i] = x[i] + half * k2[i]
    _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, k3, v, xin, pre, post)
    for i in range(n):
        z[i] = x[i] + dt * k3[i]
    _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + dt, k4, v, xin, pre, post)
    c = dt / 6.0
    for i in range(n):
        xn[i] = x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X, t):
    B, n = X.shape
    k = w_eff.shape[1]
    pre, post, v, xin, _, _, _ = _buffers(arch, k, n)
    out = np.empty((B, n))
    for b in range(B):
        _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X[b], t, out[b], v, xin, pre, post)
    return out


@njit(cache=True)
def process_rates(arch, in_idx, in_scale, mono, theta, X):
    B = X.shape[0]
    k = arch.shape[0]
    pre, post, v, xin, _, _, _ = _buffers(arch, k, X.shape[1])
    out = np.empty((B, k))
    for b in range(B):
        for p in range(k):
            off = arch[p, IN_OFF]
            for i in range(arch[p, D_IN]):
                xin[i] = X[b, in_idx[off + i]] / in_scale[off + i]
            out[b, p] = _mlp_forward(theta, arch[p], mono, xin, pre[p], post[p])
    return out


@njit(cache=True)
def rollout(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X0, T0, nsteps, dt):
    """States on the grid t0 + s*dt, s = 0..nsteps, for every start state."""
    B, n = X0.shape
    k = w_eff.shape[1]
    pre, post, v, xin, _, _, _ = _buffers(arch, k, n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    z = np.empty(n)
    out = np.empty((B, nsteps + 1, n))
    for b in range(B):
        out[b, 0] = X0[b]
        for s in range(nsteps):
            t = T0[b] + s * dt
            _rk4_step(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, out[b, s], t, dt,
                      out[b, s + 1], k1, k2, k3, k4, z, v, xin, pre, post)
    return out


@njit(cache=True)
def rollout_loss_grad(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X0, T0, targets, m, dt):
    """Mean squared rollout error and its gradient w.r.t. theta and w_eff.

    targets[b, h] is compared with the state after (h + 1) * m steps.
    """
    B, n = X0.shape
    H = targets.shape[1]
    k = w_eff.shape[1]
    nsteps = H * m
    pre, post, v, xin, gin, delta, gprev = _buffers(arch, k, n)
    gtheta = np.zeros(theta.shape[0])
    gw = np.zeros((n, k))
    xs = np.empty((nsteps + 1, n))
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    z = np.empty(n)
    tmp = np.empty(n)
    xb = np.zeros(n)
    xb_new = np.zeros(n)
    kb1 = np.zeros(n)
    kb2 = np.zeros(n)
    kb3 = np.zeros(n)
    kb4 = np.zeros(n)
    zb = np.zeros(n)
    scale = 1.0 / (B * H)
    half = 0.5 * dt
    c = dt / 6.0
    total = 0.0
    for b in range(B):
        xs[0] = X0[b]
        for s in range(nsteps):
            _rk4_step(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, xs[s], T0[b] + s * dt, dt,
                      xs[s + 1], k1, k2, k3, k4, z, v, xin, pre, post)
        for h in range(H):
            for i in range(n):
                d = xs[(h + 1) * m, i] - targets[b, h, i]
                total += d * d
        for i in range(n):
            xb[i] = 0.0
        for s in range(nsteps - 1, -1, -1):
            if (s + 1) % m == 0:
                h = (s + 1) // m - 1
                for i in range(n):
                    xb[i] += 2.0 * scale * (xs[s + 1, i] - targets[b, h, i])
            t = T0[b] + s * dt
            x = xs[s]
            # recompute stages
            _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, k1, v, xin, pre, post)
            for i in range(n):
                z[i] = x[i] + half * k1[i]
            _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, k2, v, xin, pre, post)
            for i in range(n):
                z[i] = x[i] + half * k2[i]
            _field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, k3, v, xin, pre, post)
            for i in range(n):
                xb_new[i] = xb[i]
                kb1[i] = c * xb[i]
                kb2[i] = 2.0 * c * xb[i]
                kb3[i] = 2.0 * c * xb[i]
                kb4[i] = c * xb[i]
            # stage 4 at x + dt*k3
            for i in range(n):
                z[i] = x[i] + dt * k3[i]
                zb[i] = 0.0
            _field_vjp(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + dt, kb4,
                       zb, gtheta, gw, v, xin, pre, post, gin, delta, gprev, tmp)
            for i in range(n):
                xb_new[i] += zb[i]
                kb3[i] += dt * zb[i]
            # stage 3 at x + dt/2*k2
            for i in range(n):
                z[i] = x[i] + half * k2[i]
                zb[i] = 0.0
            _field_vjp(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, kb3,
                       zb, gtheta, gw, v, xin, pre, post, gin, delta, gprev, tmp)
            for i in range(n):
                xb_new[i] += zb[i]
                kb2[i] += half * zb[i]
            # stage 2 at x + dt/2*k1
            for i in range(n):
                z[i] = x[i] + half * k1[i]
                zb[i] = 0.0
            _field_vjp(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, z, t + half, kb2,
                       zb, gtheta, gw, v, xin, pre, post, gin, delta, gprev, tmp)
            for i in range(n):
                xb_new[i] += zb[i]
                kb1[i] += half * zb[i]
            for i in range(n):
                zb[i] = 0.0
            _field_vjp(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, x, t, kb1,
                       zb, gtheta, gw, v, xin, pre, post, gin, delta, gprev, tmp)
            for i in range(n):
                xb[i] = xb_new[i] + zb[i]
    return total * scale, gtheta, gw


@njit(cache=True, fastmath={"reassoc", "contract"})
def mlp_loss_grad(theta, arch_row, mono, X, y):
    """Mean squared error of a single network on (X, y) and its gradient.

    Layer-major layout (feature, sample) so the sample loops vectorize. The
    sample reductions may be reassociated, so results match the other paths
    to rounding, not bit for bit.
    """
    N, d_in = X.shape
    n_hidden = arch_row[N_HIDDEN]
    width = arch_row[WIDTH]
    any_mono = arch_row[ANY_MONO]
    in_off = arch_row[IN_OFF]
    hid, out_code = arch_row[HID_ACT], arch_row[OUT_ACT]
    n_layers = n_hidden + 1
    wmax = max(width, d_in)
    pre = np.empty((n_layers + 1, wmax, N))
    post = np.empty((n_layers + 1, wmax, N))
    for i in range(d_in):
        for s in range(N):
            post[0, i, s] = X[s, i]

    offs = np.empty(n_layers, dtype=np.int64)
    eff = theta.copy()
    p = arch_row[THETA_OFF]
    n_prev = d_in
    for layer in range(n_layers):
        offs[layer] = p
        n_out = width if layer < n_hidden else 1
        for o in range(n_out):
            for i in range(n_prev):
                if (layer == 0 and mono[in_off + i] != 0) or (layer > 0 and any_mono != 0):
                    eff[p + o * n_prev + i] = theta[p + o * n_prev + i] ** 2
        p += n_out * n_prev + n_out
        n_prev = n_out

    n_prev = d_in
    for layer in range(n_layers):
        n_out = width if layer < n_hidden else 1
        code = hid if layer < n_hidden else out_code
        p = offs[layer]
        for o in range(n_out):
            z = pre[layer + 1, o]
            b = theta[p + n_out * n_prev + o]
            for s in range(N):
                z[s] = b
            for i in range(n_prev):
                w = eff[p + o * n_prev + i]
                h = post[layer, i]
                for s in range(N):
                    z[s] += w * h[s]
            a = post[layer + 1, o]
            for s in range(N):
                a[s] = _act(code, z[s])
        n_prev = n_out

    g = np.zeros(theta.shape[0])
    delta = np.empty((wmax, N))
    gprev = np.empty((wmax, N))
    total = 0.0
    for s in range(N):
        r = post[n_layers, 0, s] - y[s]
        total += r * r
        delta[0, s] = (2.0 * r / N) * _dact(out_code, pre[n_layers, 0, s])
    for layer in range(n_layers - 1, -1, -1):
        n_out = width if layer < n_hidden else 1
        n_prev = width if layer > 0 else d_in
        p = offs[layer]
        for o in range(n_out):
            acc = 0.0
            for s in range(N):
                acc += delta[o, s]
            g[p + n_out * n_prev + o] += acc
            for i in range(n_prev):
                h = post[layer, i]
                acc = 0.0
                for s in range(N):
                    acc += delta[o, s] * h[s]
                if (layer == 0 and mono[in_off + i] != 0) or (layer > 0 and any_mono != 0):
                    acc = acc * 2.0 * theta[p + o * n_prev + i]
                g[p + o * n_prev + i] += acc
        if layer > 0:
            for i in range(n_prev):
                gp = gprev[i]
                for s in range(N):
                    gp[s] = 0.0
                for o in range(n_out):
                    w = eff[p + o * n_prev + i]
                    for s in range(N):
                        gp[s] += w * delta[o, s]
            for i in range(n_prev):
                for s in range(N):
                    z = pre[layer, i, s]
                    if hid == 2:  # elu' = elu + 1 below zero, saves an exp
                        delta[i, s] = gprev[i, s] * (1.0 if z >= 0.0 else post[layer, i, s] + 1.0)
                    else:
                        delta[i, s] = gprev[i, s] * _dact(hid, z)
    return total / N, g
