"""Compiled closed-loop right-hand side and integration loop.

Everything the kernel needs is packed by :mod:`adaptsync.engine` into flat
arrays; see ``engine.ClosedLoop`` for the meaning of each column.  The
formulas mirror :mod:`adaptsync.observer` and :mod:`adaptsync.control`
term by term, and the test suite checks the two against each other.
"""

import math

import numpy as np
from numba import njit

# global parameter slots (array ``G``)
G_N, G_NN, G_MU1, G_MU2, G_MUV, G_STATE, G_DR, G_EPS, G_RMAX, G_VOFF, G_SOFF, G_LOFF = range(12)
# per-agent integer metadata (array ``meta``)
M_R, M_X, M_TH, M_M, M_D, M_F, M_LAM, M_ROW = range(8)
# per-agent float parameters (array ``fpar``)
P_K, P_DBOUND, P_SMOOTH_D, P_AMP, P_FREQ, P_PHASE = range(6)
# auxiliary outputs per agent (array ``aux``); fw[k] follows from column A_FW
A_S, A_P, A_PD, A_U, A_D, A_FW = range(6)

STATUS_OK = 0
STATUS_EXPR = 1
STATUS_DIVERGED = 2
DIVERGENCE_LIMIT = 1e12


@njit(cache=True)
def eval_program(ops, args, start, stop, y, xoff, t, stack):
    """Postfix evaluation; NaN signals a guarded or non-finite operation."""
    sp = 0
    for pc in range(start, stop):
        op = ops[pc]
        if op == 0:
            stack[sp] = args[pc]
            sp += 1
            continue
        if op == 1:
            stack[sp] = y[xoff + int(args[pc])]
            sp += 1
            continue
        if op == 2:
            stack[sp] = t
            sp += 1
            continue
        if op == 3:
            r = -stack[sp - 1]
        elif op <= 8:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 4:
                r = a + b
            elif op == 5:
                r = a - b
            elif op == 6:
                r = a * b
            elif op == 7:
                r = a / b if b != 0.0 else np.nan
            else:
                if a < 0.0 and b != math.floor(b):
                    r = np.nan
                elif a == 0.0 and b < 0.0:
                    r = np.nan
                else:
                    r = math.pow(a, b)
        else:
            a = stack[sp - 1]
            if op == 9:
                r = math.sin(a)
            elif op == 10:
                r = math.cos(a)
            elif op == 11:
                r = math.tanh(a)
            elif op == 12:
                r = math.exp(a) if a < 709.0 else np.inf
            elif op == 13:
                r = abs(a)
            else:
                r = math.sqrt(a) if a >= 0.0 else np.nan
        if not math.isfinite(r):
            return np.nan
        stack[sp - 1] = r
    return stack[0]


@njit(cache=True)
def rhs(t, y, g, d_held, sg, use_held, G, meta, fpar, gam, S0, F, L0, B, H,
        theta, laminv, ops, args, rstarts, dy, fbuf, stack, aux):
    """Closed-loop derivative into ``dy``; returns ``-1`` or the failing agent."""
    n = int(G[G_N])
    N = int(G[G_NN])
    mu1 = G[G_MU1]
    mu2 = G[G_MU2]
    muv = G[G_MUV]
    state_based = G[G_STATE] != 0.0
    dr = G[G_DR] != 0.0
    eps = G[G_EPS]
    voff = int(G[G_VOFF])
    soff = int(G[G_SOFF])
    loff = int(G[G_LOFF])

    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += S0[a, b] * y[b]
        dy[a] = acc

    dvs = np.empty(n)
    ev = np.empty(n)
    dSs = np.empty((n, n))
    w = np.empty(n)
    w2 = np.empty(n)
    e = np.empty(n)
    c = np.empty(n)
    tmp = np.empty(n)
    rmax = int(G[G_RMAX])
    fw = np.empty(rmax + 1)
    fe = np.empty(rmax)

    for i in range(N):
        vi = voff + i * n
        Si = soff + i * n * n
        Li = loff + i * n
        bi = B[g, i]
        # neighbor sums: b_i z_0 - (H z)_i
        for a in range(n):
            dvs[a] = bi * y[a]
            for q in range(n):
                dSs[a, q] = bi * S0[a, q]
        dLs = np.zeros(n)
        for a in range(n):
            dLs[a] = bi * L0[a]
        for j in range(N):
            hij = H[g, i, j]
            if hij == 0.0:
                continue
            vj = voff + j * n
            Sj = soff + j * n * n
            Lj = loff + j * n
            for a in range(n):
                dvs[a] -= hij * y[vj + a]
                dLs[a] -= hij * y[Lj + a]
                for q in range(n):
                    dSs[a, q] -= hij * y[Sj + a * n + q]
        if state_based:
            for a in range(n):
                ev[a] = muv * dvs[a]
                dy[Li + a] = 0.0
        else:
            innov = 0.0
            for a in range(n):
                innov += F[a] * dvs[a]
            for a in range(n):
                ev[a] = y[Li + a] * innov
                dy[Li + a] = mu2 * dLs[a]
        for a in range(n):
            acc = 0.0
            for q in range(n):
                acc += y[Si + a * n + q] * y[vi + q]
                dy[Si + a * n + q] = mu1 * dSs[a, q]
            dy[vi + a] = acc + ev[a]

        # fw[k] = F S_i^k v_i, fe[k] = F e_k with the product-rule recursion
        # e_(k+1) = S_i e_k + e_S S_i^k v_i
        r = meta[i, M_R]
        for a in range(n):
            w[a] = y[vi + a]
            e[a] = ev[a]
        acc = 0.0
        for a in range(n):
            acc += F[a] * w[a]
        fw[0] = acc
        for k in range(r):
            acc = 0.0
            for a in range(n):
                acc += F[a] * e[a]
            fe[k] = acc
            for a in range(n):
                acc = 0.0
                acc2 = 0.0
                for q in range(n):
                    acc += y[Si + a * n + q] * w[q]
                    acc2 += mu1 * dSs[a, q] * w[q]
                w2[a] = acc
                c[a] = acc2
            acc = 0.0
            for a in range(n):
                w[a] = w2[a]
                acc += F[a] * w[a]
            fw[k + 1] = acc
            if k + 1 < r:
                for a in range(n):
                    acc = 0.0
                    for q in range(n):
                        acc += y[Si + a * n + q] * e[q]
                    tmp[a] = acc + c[a]
                for a in range(n):
                    e[a] = tmp[a]

        xo = meta[i, M_X]
        p = 0.0
        pd = 0.0
        for k in range(r):
            gk = gam[i, k]
            p += gk * fw[k]
            pd += gk * (fw[k + 1] + fe[k])
        for k in range(r - 1):
            gk = gam[i, k]
            p -= gk * y[xo + k]
            pd -= gk * y[xo + k + 1]
        s = y[xo + r - 1] - p

        m = meta[i, M_M]
        fo = meta[i, M_F]
        row = meta[i, M_ROW]
        for q in range(m):
            val = eval_program(ops, args, rstarts[row + q], rstarts[row + q + 1], y, xo, t, stack)
            if not math.isfinite(val):
                return i
            fbuf[fo + q] = val
        tho = meta[i, M_TH]
        fth = 0.0
        ftrue = 0.0
        for q in range(m):
            fth += fbuf[fo + q] * y[tho + q]
            ftrue += fbuf[fo + q] * theta[fo + q]
        u = fth - fpar[i, P_K] * s + pd
        if fpar[i, P_SMOOTH_D] != 0.0:
            d = fpar[i, P_AMP] * math.sin(2.0 * math.pi * fpar[i, P_FREQ] * t + fpar[i, P_PHASE])
        else:
            d = d_held[i]
        do = meta[i, M_D]
        if dr:
            if eps > 0.0:
                sgv = s / max(abs(s), eps)
            elif use_held:
                sgv = sg[i]
            else:
                sgv = 1.0 if s > 0.0 else (-1.0 if s < 0.0 else 0.0)
                sg[i] = sgv
            u -= sgv * y[do]
            dy[do] = sgv * s
        else:
            dy[do] = 0.0
        for k in range(r - 1):
            dy[xo + k] = y[xo + k + 1]
        dy[xo + r - 1] = u + d - ftrue
        lo = meta[i, M_LAM]
        for a in range(m):
            acc = 0.0
            for q in range(m):
                acc += laminv[lo + a * m + q] * fbuf[fo + q]
            dy[tho + a] = -acc * s

        aux[i, A_S] = s
        aux[i, A_P] = p
        aux[i, A_PD] = pd
        aux[i, A_U] = u
        aux[i, A_D] = d
        for k in range(r + 1):
            aux[i, A_FW + k] = fw[k]
    return -1


@njit(cache=True)
def lyapunov(y, aux, G, meta, fpar, theta, lam):
    N = int(G[G_NN])
    dr = G[G_DR] != 0.0
    total = 0.0
    for i in range(N):
        s = aux[i, A_S]
        total += s * s
        m = meta[i, M_M]
        tho = meta[i, M_TH]
        fo = meta[i, M_F]
        lo = meta[i, M_LAM]
        for a in range(m):
            ta = y[tho + a] - theta[fo + a]
            for q in range(m):
                total += ta * lam[lo + a * m + q] * (y[tho + q] - theta[fo + q])
        if dr:
            dt = y[meta[i, M_D]] - fpar[i, P_DBOUND]
            total += dt * dt
    return 0.5 * total


@njit(cache=True)
def step(t, h, y, g, d_held, euler, G, meta, fpar, gam, S0, F, L0, B, H, theta, laminv,
         ops, args, rstarts, fbuf, stack, aux, k1, out, bad):
    """One RK4 (or Euler) step into ``out``; stage-1 diagnostics land in ``aux``.

    Returns ``-1`` on success or the index of the agent whose regressor
    failed; the failing stage state is copied to ``bad``.
    """
    N = int(G[G_NN])
    sg = np.zeros(N)
    hold = G[G_DR] != 0.0 and G[G_EPS] <= 0.0
    status = rhs(t, y, g, d_held, sg, False, G, meta, fpar, gam, S0, F, L0, B, H,
                 theta, laminv, ops, args, rstarts, k1, fbuf, stack, aux)
    if status >= 0:
        bad[:] = y
        return status
    if euler:
        for a in range(y.size):
            out[a] = y[a] + h * k1[a]
        return -1
    scratch = np.empty((N, aux.shape[1]))
    ys = np.empty(y.size)
    k2 = np.empty(y.size)
    k3 = np.empty(y.size)
    k4 = np.empty(y.size)
    for a in range(y.size):
        ys[a] = y[a] + 0.5 * h * k1[a]
    status = rhs(t + 0.5 * h, ys, g, d_held, sg, hold, G, meta, fpar, gam, S0, F, L0, B, H,
                 theta, laminv, ops, args, rstarts, k2, fbuf, stack, scratch)
    if status >= 0:
        bad[:] = ys
        return status
    for a in range(y.size):
        ys[a] = y[a] + 0.5 * h * k2[a]
    status = rhs(t + 0.5 * h, ys, g, d_held, sg, hold, G, meta, fpar, gam, S0, F, L0, B, H,
                 theta, laminv, ops, args, rstarts, k3, fbuf, stack, scratch)
    if status >= 0:
        bad[:] = ys
        return status
    for a in range(y.size):
        ys[a] = y[a] + h * k3[a]
    status = rhs(t + h, ys, g, d_held, sg, hold, G, meta, fpar, gam, S0, F, L0, B, H,
                 theta, laminv, ops, args, rstarts, k4, fbuf, stack, scratch)
    if status >= 0:
        bad[:] = ys
        return status
    for a in range(y.size):
        out[a] = y[a] + (h / 6.0) * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
    return -1


@njit(cache=True)
def integrate(y0, h, steps, stride, gtab, dtab, euler, v_tol_rel, G, meta, fpar, gam, S0, F,
              L0, B, H, theta, laminv, lam, ops, args, rstarts, stack, Yrec, Arec, VWrec, bad):
    """Full fixed-step run with on-the-fly V and W bookkeeping.

    Returns ``(status, step, info, rows, violations, worst_increase, V0, W)``
    where ``status`` is one of the ``STATUS_*`` codes and ``info`` is the
    failing agent (expression) or flat state index (divergence).
    """
    N = int(G[G_NN])
    y = y0.copy()
    ynext = np.empty(y.size)
    k1 = np.empty(y.size)
    fbuf = np.zeros(max(theta.size, 1))
    aux = np.zeros((N, Arec.shape[2]))
    row = 0
    W = 0.0
    q_prev = 0.0
    V_prev = 0.0
    V0 = 0.0
    v_tol = 0.0
    violations = 0
    worst = -np.inf
    for j in range(steps + 1):
        t = j * h
        if j < steps:
            status = step(t, h, y, gtab[j], dtab[j], euler, G, meta, fpar, gam, S0, F, L0, B, H,
                          theta, laminv, ops, args, rstarts, fbuf, stack, aux, k1, ynext, bad)
        else:
            sg = np.zeros(N)
            status = rhs(t, y, gtab[j], dtab[j], sg, False, G, meta, fpar, gam, S0, F, L0, B,
                         H, theta, laminv, ops, args, rstarts, k1, fbuf, stack, aux)
            if status >= 0:
                bad[:] = y
        if status >= 0:
            return STATUS_EXPR, j, status, row, violations, worst, V0, W
        q = 0.0
        for i in range(N):
            q += fpar[i, P_K] * aux[i, A_S] * aux[i, A_S]
        V = lyapunov(y, aux, G, meta, fpar, theta, lam)
        if j == 0:
            V0 = V
            v_tol = v_tol_rel * (1.0 + V0)
        else:
            W += 0.5 * h * (q_prev + q)
            inc = V - V_prev
            if inc > v_tol:
                violations += 1
            if inc > worst:
                worst = inc
        q_prev = q
        V_prev = V
        if j % stride == 0 or j == steps:
            Yrec[row, :] = y
            Arec[row, :, :] = aux
            VWrec[row, 0] = V
            VWrec[row, 1] = W
            row += 1
        if j == steps:
            break
        for a in range(y.size):
            if not math.isfinite(ynext[a]) or abs(ynext[a]) > DIVERGENCE_LIMIT:
                bad[:] = ynext
                return STATUS_DIVERGED, j + 1, a, row, violations, worst, V0, W
        y, ynext = ynext, y
    return STATUS_OK, steps, -1, row, violations, worst, V0, W
