"""Pure-numpy fallback kernels, vectorized over the batch axis.

Same signatures and the same accumulation order as the numba kernels.
"""
import numpy as np

D_IN, N_HIDDEN, WIDTH, HID_ACT, OUT_ACT, THETA_OFF, IN_OFF, ANY_MONO = range(8)


def _act(code, z):
    if code == 0:
        return z.copy()
    if code == 1:
        return np.where(z > 0.0, z, 0.0)
    if code == 2:
        return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))
    zc = np.clip(z, -30.0, 30.0)
    mid = np.log1p(np.exp(zc))
    return np.where(z > 30.0, z, np.where(z < -30.0, np.exp(np.minimum(z, 0.0)), mid))


def _dact(code, z):
    if code == 0:
        return np.ones_like(z)
    if code == 1:
        return np.where(z > 0.0, 1.0, 0.0)
    if code == 2:
        return np.where(z >= 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
    zc = np.clip(z, -30.0, 30.0)
    mid = 1.0 / (1.0 + np.exp(-zc))
    return np.where(z > 30.0, 1.0, np.where(z < -30.0, np.exp(np.minimum(z, 0.0)), mid))


def _layers(theta, arch_row, mono):
    """Yield (raw W, effective W, bias, squared flags, activation) per layer."""
    d_in, n_hidden, width = arch_row[D_IN], arch_row[N_HIDDEN], arch_row[WIDTH]
    in_off, any_mono = arch_row[IN_OFF], arch_row[ANY_MONO]
    p = arch_row[THETA_OFF]
    n_prev = d_in
    out = []
    for layer in range(n_hidden + 1):
        n_out = width if layer < n_hidden else 1
        code = arch_row[HID_ACT] if layer < n_hidden else arch_row[OUT_ACT]
        raw = theta[p:p + n_out * n_prev].reshape(n_out, n_prev)
        bias = theta[p + n_out * n_prev:p + n_out * n_prev + n_out]
        if layer == 0:
            sq = np.broadcast_to(mono[in_off:in_off + d_in] != 0, raw.shape)
        else:
            sq = np.full(raw.shape, any_mono != 0)
        eff = np.where(sq, raw * raw, raw)
        out.append((p, raw, eff, bias, sq, code))
        p += n_out * n_prev + n_out
        n_prev = n_out
    return out


def _mlp_forward(layers, xin):
    """xin (B, d_in) -> (output (B,), pre list, post list)."""
    post = [xin]
    pre = [None]
    h = xin
    for _, _, eff, bias, _, code in layers:
        z = np.broadcast_to(bias, (h.shape[0], bias.shape[0])).copy()
        for i in range(h.shape[1]):
            z += eff[:, i] * h[:, i:i + 1]
        pre.append(z)
        h = _act(code, z)
        post.append(h)
    return h[:, 0], pre, post


def _mlp_backward(layers, pre, post, gout, gtheta):
    """gout (B,) -> input gradient (B, d_in); accumulates into gtheta."""
    n_layers = len(layers)
    delta = (gout * _dact(layers[-1][5], pre[-1][:, 0]))[:, None]
    for layer in range(n_layers - 1, -1, -1):
        p, raw, eff, bias, sq, _ = layers[layer]
        n_out, n_prev = raw.shape
        gW = delta.T @ post[layer]
        gtheta[p:p + n_out * n_prev] += np.where(sq, gW * 2.0 * raw, gW).ravel()
        gtheta[p + n_out * n_prev:p + n_out * n_prev + n_out] += delta.sum(axis=0)
        gprev = delta @ eff
        if layer > 0:
            delta = gprev * _dact(layers[layer - 1][5], pre[layer])
    return gprev


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _meal_input(par, t):
    # t is a scalar or one time per row
    k = par[7]
    t = np.asarray(t, dtype=float)
    total = np.zeros(t.shape)
    for j in range(int(par[21])):
        ti, qi = par[22 + 2 * j], par[23 + 2 * j]
        total = total + np.where(ti <= t, qi * k * np.exp(-k * np.maximum(t - ti, 0.0)), 0.0)
    return total


def _hill_switch(s, beta):
    pos = s > 0.0
    sp = np.where(pos, s, 1.0)
    sb = np.exp(beta * np.log(sp))
    h = np.where(pos, sb / (1.0 + sb), 0.0)
    dh = np.where(pos, beta * sb / (sp * (1.0 + sb) * (1.0 + sb)), 0.0)
    return h, dh


def _ultradian_consts(par):
    V1, V2, V3, E, t1, t2, td, _, Rm, a1, C1, C2, C3, C4, C5, Ub, U0, Um, Rg, alpha, beta = par[:21]
    kappa = (1.0 / C4) * (1.0 / V2 + 1.0 / (E * t2))
    return V1, V3, td, Rm, a1, C1, C2, C3, C5, Ub, U0, Um, Rg, alpha, beta, kappa


def _fixed_eval(kind, par, X, t, out):
    n = X.shape[1]
    if kind == 1:
        A = par.reshape(n, n)
        acc = np.zeros_like(X)
        for j in range(n):
            acc += A[:, j] * X[:, j:j + 1]
        out += acc
    elif kind == 2:
        V1, V3, td, Rm, a1, C1, C2, C3, C5, Ub, U0, Um, Rg, alpha, beta, kappa = _ultradian_consts(par)
        x1, x2, x3, x4, x5, x6 = (X[:, i] for i in range(6))
        f1 = Rm * _sigmoid(x3 / (V3 * C1) - a1)
        f2 = Ub * (-np.expm1(-x3 / (C2 * V3)))
        h, _ = _hill_switch(kappa * x2, beta)
        f3 = (U0 + Um * h) / (C3 * V3)
        f4 = Rg * _sigmoid(-alpha * (x6 / (C5 * V1) - 1.0))
        out[:, 0] += f1
        out[:, 2] += f4 + _meal_input(par, t) - f2 - f3 * x3
        out[:, 3] += (x1 - x4) / td
        out[:, 4] += (x4 - x5) / td
        out[:, 5] += (x5 - x6) / td


def _fixed_vjp(kind, par, X, t, G, Xbar):
    n = X.shape[1]
    if kind == 1:
        Xbar += G @ par.reshape(n, n)
    elif kind == 2:
        V1, V3, td, Rm, a1, C1, C2, C3, C5, Ub, U0, Um, Rg, alpha, beta, kappa = _ultradian_consts(par)
        x2, x3, x6 = X[:, 1], X[:, 2], X[:, 5]
        s1 = _sigmoid(x3 / (V3 * C1) - a1)
        df1 = Rm * s1 * (1.0 - s1) / (V3 * C1)
        df2 = Ub * np.exp(-x3 / (C2 * V3)) / (C2 * V3)
        h, dh = _hill_switch(kappa * x2, beta)
        f3 = (U0 + Um * h) / (C3 * V3)
        df3 = Um * dh * kappa / (C3 * V3)
        s4 = _sigmoid(-alpha * (x6 / (C5 * V1) - 1.0))
        df4 = -Rg * s4 * (1.0 - s4) * alpha / (C5 * V1)
        g1, g3, g4, g5, g6 = G[:, 0], G[:, 2], G[:, 3], G[:, 4], G[:, 5]
        Xbar[:, 2] += g1 * df1
        Xbar[:, 5] += g3 * df4
        Xbar[:, 2] += g3 * (-df2 - f3)
        Xbar[:, 1] += g3 * (-df3 * x3)
        Xbar[:, 0] += g4 / td
        Xbar[:, 3] += (g5 - g4) / td
        Xbar[:, 4] += (g6 - g5) / td
        Xbar[:, 5] += -g6 / td


class _Model:
    """Per-call view of the packed arrays with layer tables prebuilt."""

    def __init__(self, arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar):
        self.arch, self.in_idx, self.in_scale = arch, in_idx, in_scale
        self.theta, self.w_eff, self.fkind, self.fpar = theta, w_eff, fkind, fpar
        self.layers = [_layers(theta, arch[p], mono) for p in range(arch.shape[0])]
        self.inputs = []
        for p in range(arch.shape[0]):
            off, d = arch[p, IN_OFF], arch[p, D_IN]
            self.inputs.append((in_idx[off:off + d], in_scale[off:off + d]))

    def rates(self, X):
        v = np.empty((X.shape[0], len(self.layers)))
        caches = []
        for p, layers in enumerate(self.layers):
            idx, sc = self.inputs[p]
            v[:, p], pre, post = _mlp_forward(layers, X[:, idx] / sc)
            caches.append((pre, post))
        return v, caches

    def field(self, X, t):
        v, caches = self.rates(X)
        n, k = self.w_eff.shape
        out = np.zeros_like(X)
        for i in range(n):
            acc = np.zeros(X.shape[0])
            for j in range(k):
                acc += self.w_eff[i, j] * v[:, j]
            out[:, i] = acc
        _fixed_eval(self.fkind, self.fpar, X, t, out)
        return out, v, caches

    def field_vjp(self, X, t, G, gtheta, gw):
        _, v, caches = self.field(X, t)
        Xbar = np.zeros_like(X)
        gw += G.T @ v
        Vbar = G @ self.w_eff
        for p, layers in enumerate(self.layers):
            pre, post = caches[p]
            gin = _mlp_backward(layers, pre, post, Vbar[:, p], gtheta)
            idx, sc = self.inputs[p]
            for i in range(idx.shape[0]):
                Xbar[:, idx[i]] += gin[:, i] / sc[i]
        _fixed_vjp(self.fkind, self.fpar, X, t, G, Xbar)
        return Xbar


def _stages(model, X, t, dt):
    half = 0.5 * dt
    k1 = model.field(X, t)[0]
    k2 = model.field(X + half * k1, t + half)[0]
    k3 = model.field(X + half * k2, t + half)[0]
    k4 = model.field(X + dt * k3, t + dt)[0]
    return k1, k2, k3, k4


def _rk4_step(model, X, T, dt):
    # T holds one start time per row
    k1, k2, k3, k4 = _stages(model, X, T, dt)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def field(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X, t):
    return _Model(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar).field(X, t)[0]


def process_rates(arch, in_idx, in_scale, mono, theta, X):
    k = arch.shape[0]
    model = _Model(arch, in_idx, in_scale, mono, theta, np.zeros((1, k)), 0, np.zeros(0))
    return model.rates(X)[0]


def rollout(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X0, T0, nsteps, dt):
    model = _Model(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar)
    out = np.empty((X0.shape[0], nsteps + 1, X0.shape[1]))
    out[:, 0] = X0
    for s in range(nsteps):
        out[:, s + 1] = _rk4_step(model, out[:, s], T0 + s * dt, dt)
    return out


def rollout_loss_grad(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar, X0, T0, targets, m, dt):
    model = _Model(arch, in_idx, in_scale, mono, theta, w_eff, fkind, fpar)
    B, H, n = targets.shape
    nsteps = H * m
    xs = np.empty((nsteps + 1, B, n))
    xs[0] = X0
    for s in range(nsteps):
        xs[s + 1] = _rk4_step(model, xs[s], T0 + s * dt, dt)
    pred = xs[m::m].transpose(1, 0, 2)
    scale = 1.0 / (B * H)
    loss = float(np.sum((pred - targets) ** 2)) * scale

    gtheta = np.zeros(theta.shape[0])
    gw = np.zeros_like(w_eff)
    half = 0.5 * dt
    c = dt / 6.0
    xb = np.zeros((B, n))
    for s in range(nsteps - 1, -1, -1):
        if (s + 1) % m == 0:
            h = (s + 1) // m - 1
            xb = xb + 2.0 * scale * (xs[s + 1] - targets[:, h])
        T = T0 + s * dt
        x, g = xs[s], xb
        new = xb.copy()
        k1, k2, k3, _ = _stages(model, x, T, dt)
        kb1, kb2, kb3, kb4 = c * g, 2.0 * c * g, 2.0 * c * g, c * g
        zb = model.field_vjp(x + dt * k3, T + dt, kb4, gtheta, gw)
        new += zb
        kb3 = kb3 + dt * zb
        zb = model.field_vjp(x + half * k2, T + half, kb3, gtheta, gw)
        new += zb
        kb2 = kb2 + half * zb
        zb = model.field_vjp(x + half * k1, T + half, kb2, gtheta, gw)
        new += zb
        kb1 = kb1 + half * zb
        new += model.field_vjp(x, T, kb1, gtheta, gw)
        xb = new
    return loss, gtheta, gw


def mlp_loss_grad(theta, arch_row, mono, X, y):
    layers = _layers(theta, arch_row, mono)
    out, pre, post = _mlp_forward(layers, X)
    N = X.shape[0]
    d = out - y
    g = np.zeros(theta.shape[0])
    _mlp_backward(layers, pre, post, 2.0 * d / N, g)
    return float(np.sum(d * d)) / N, g
