# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused rollout kernel: exchange-economy game, affine policy heads.

One call runs, for every batch element, the on-policy rollout plus one
unilateral-deviation rollout per player, and back-propagates the sampled
cumulative-regret objective through the unrolled trajectories by hand.
The math mirrors the tape path in economy.py/projections.py exactly
(same smooth maps, same clamp branches, same parameter layout), so the two
backends agree to floating-point reassociation error.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, tanh

cnp.import_array()


cdef inline double _sigmoid(double z) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * z))


cdef inline double _softplus(double z) noexcept nogil:
    if z > 35.0:
        return z
    if z < -35.0:
        return exp(z)
    return log1p(exp(z))


cdef inline double _spos(double z, double eps) noexcept nogil:
    # eps * softplus(z / eps) >= max(0, z); floored like the Python twin so
    # it stays a safe denominator where the softplus underflows
    cdef double v = eps * _softplus(z / eps)
    cdef double floor = eps * 1e-15
    return v if v > floor else floor


cdef inline double _dspos(double z, double eps) noexcept nogil:
    return _sigmoid(z / eps)


cdef inline double _sm1(double r, double eps) noexcept nogil:
    # r / (1 + eps*softplus((r-1)/eps)) <= min(1, r) for r >= 0
    return r / (1.0 + eps * _softplus((r - 1.0) / eps))


cdef inline double _dsm1(double r, double eps) noexcept nogil:
    cdef double D = 1.0 + eps * _softplus((r - 1.0) / eps)
    cdef double s = _sigmoid((r - 1.0) / eps)
    return (1.0 - r * s / D) / D


def regret_grad(
    int n, int m, int k, int W, int F,
    double[:, :, ::1] returns,      # (W, k, m)
    int util_kind, double leps, double cd_floor,
    double box_scale, double b_max, double q_max, double tau_scale,
    double bang_scale, double p_floor,
    double eps_sm, double eps_pos,
    double[::1] theta, double[::1] phi,
    double[:, ::1] s0,              # (B, 1 + 2nm)
    double[:, :, ::1] shocks,       # (T, B, 1 + nm)
    double[:, ::1] weights,         # (B, T)
    int need_gt, int need_gp,
):
    cdef int B = s0.shape[0]
    cdef int T = shocks.shape[0]
    cdef int nm = n * m
    cdef int out = m + k
    cdef int n_players = n + 1
    cdef int Fc = F + 2 * m + k          # consumer head: [f, p, q/qmax, bang]
    cdef int Fdev = F + n * out          # auctioneer deviation head
    cdef int Fdc = Fdev + m              # consumer deviation head: + bang

    per_sample_arr = np.zeros(B)
    g_theta_arr = np.zeros(theta.shape[0])
    g_phi_arr = np.zeros(phi.shape[0])
    payoff_on_arr = np.zeros((B, n_players))
    cdef double[::1] per_sample = per_sample_arr
    cdef double[::1] g_theta = g_theta_arr
    cdef double[::1] g_phi = g_phi_arr
    cdef double[:, ::1] payoff_on = payoff_on_arr

    # per-trajectory saves (reused across batch elements and rollouts)
    cdef double[:, :, ::1] sv_e = np.zeros((T, n, m))
    cdef long[::1] sv_omega = np.zeros(T, dtype=np.int64)
    cdef double[:, :, ::1] sv_sx = np.zeros((T, n, m))
    cdef double[:, :, ::1] sv_th = np.zeros((T, n, max(k, 1)))
    cdef double[:, ::1] sv_p = np.zeros((T, m))
    cdef double[:, ::1] sv_sq = np.zeros((T, max(k, 1)))
    cdef double[:, ::1] sv_X = np.zeros((T, m))
    cdef double[:, ::1] sv_w = np.zeros((T, n))
    cdef double[:, ::1] sv_cost = np.zeros((T, n))
    cdef double[:, ::1] sv_alpha = np.zeros((T, n))
    cdef double[:, ::1] sv_S = np.zeros((T, max(k, 1)))
    cdef double[:, :, ::1] sv_xf = np.zeros((T, n, m))
    cdef double[:, :, ::1] sv_bf = np.zeros((T, n, max(k, 1)))
    # deviation saves
    cdef double[:, ::1] sv_dsx = np.zeros((T, m))
    cdef double[:, ::1] sv_dth = np.zeros((T, max(k, 1)))
    cdef double[:, ::1] sv_dresid = np.zeros((T, m))   # pre-clamp residual supply
    cdef double[::1] sv_dw = np.zeros(T)
    cdef double[::1] sv_dcost = np.zeros(T)
    cdef double[::1] sv_dalpha = np.zeros(T)
    cdef double[:, ::1] sv_dxf = np.zeros((T, m))      # deviator consumption
    cdef double[:, ::1] sv_dbh = np.zeros((T, max(k, 1)))  # pre-shift portfolio
    cdef double[:, ::1] sv_dbf = np.zeros((T, max(k, 1)))  # final portfolio
    cdef double[:, ::1] sv_dp = np.zeros((T, m))       # auctioneer deviation prices
    cdef double[:, ::1] sv_dsq = np.zeros((T, max(k, 1)))

    # work arrays
    cdef double[::1] f = np.zeros(F)
    cdef double[::1] fc = np.zeros(Fc)
    cdef double[::1] fdev = np.zeros(Fdc)
    cdef double[::1] raw = np.zeros(out)
    cdef double[:, ::1] tau = np.zeros((n, m))
    cdef double[::1] E = np.zeros(m)
    cdef double[::1] beta = np.zeros(m)
    cdef double[:, ::1] d_x = np.zeros((n, m))
    cdef double[:, ::1] d_b = np.zeros((n, max(k, 1)))
    cdef double[::1] d_p = np.zeros(m)
    cdef double[::1] d_q = np.zeros(max(k, 1))
    cdef double[:, ::1] d_xt = np.zeros((n, m))
    cdef double[:, ::1] d_bt = np.zeros((n, max(k, 1)))
    cdef double[:, ::1] d_xh = np.zeros((n, m))
    cdef double[:, ::1] d_bh = np.zeros((n, max(k, 1)))
    cdef double[::1] d_up = np.zeros(m)
    cdef double[::1] d_f = np.zeros(F)
    cdef double[::1] d_fc = np.zeros(Fc)
    cdef double[::1] d_fdev = np.zeros(Fdc)
    cdef double[::1] d_sqx = np.zeros(max(k, 1))
    cdef double[::1] d_rawdev = np.zeros(out)
    cdef double[::1] d_xdev = np.zeros(m)
    cdef double[::1] d_bdev = np.zeros(max(k, 1))
    cdef double[::1] d_xtd = np.zeros(m)
    cdef double[::1] d_btd = np.zeros(max(k, 1))
    cdef double[:, ::1] dLde = np.zeros((n, m))
    cdef double[:, ::1] dLde_next = np.zeros((n, m))
    cdef double[::1] uwork = np.zeros(m)
    cdef double[::1] xfac = np.zeros(n)
    cdef double[::1] uwork2 = np.zeros(n)
    cdef double TW

    cdef int r, b, t, i, j, a, l, fi, o, off, idx, omg
    cdef int dev
    cdef double seed, wt, acc, z_j, tot, mx, se, u_val, g_arg, d1, d2
    cdef double cp, wv, cv, alpha_v, rr, shift_s, dshift, ds, dcap, dw_v
    cdef double dcost, dcp, Xp, gj, dE_j, dXp, dX_j, dot_pe, sgn
    cdef double dev_pay, on_sum

    for b in range(B):
        for i in range(n):
            for j in range(m):
                tau[i, j] = s0[b, 1 + nm + i * m + j]

        on_sum = 0.0
        for r in range(n_players + 1):
            dev = r - 1  # -1: on-policy

            # ---------------- forward ----------------
            for i in range(n):
                for j in range(m):
                    sv_e[0, i, j] = s0[b, 1 + i * m + j]
            sv_omega[0] = <long> (s0[b, 0] + 0.5)
            dev_pay = 0.0

            for t in range(T):
                omg = sv_omega[t]
                # features [1, onehot(w), e, tau/scale]
                for fi in range(F):
                    f[fi] = 0.0
                f[0] = 1.0
                f[1 + omg] = 1.0
                for i in range(n):
                    for j in range(m):
                        f[1 + W + i * m + j] = sv_e[t, i, j]
                        f[1 + W + nm + i * m + j] = tau[i, j] / tau_scale

                # auctioneer head -> p (softmax), q (scaled sigmoid)
                off = n * Fc * out
                for o in range(out):
                    acc = 0.0
                    for fi in range(F):
                        acc += f[fi] * theta[off + fi * out + o]
                    raw[o] = acc
                mx = raw[0]
                for j in range(1, m):
                    if raw[j] > mx:
                        mx = raw[j]
                tot = 0.0
                for j in range(m):
                    sv_p[t, j] = exp(raw[j] - mx)
                    tot += sv_p[t, j]
                for j in range(m):
                    sv_p[t, j] /= tot
                for a in range(k):
                    sv_sq[t, a] = _sigmoid(raw[m + a])

                # per-state demand box: c * n * (wealth share) * supply
                for j in range(m):
                    E[j] = 0.0
                    for i in range(n):
                        E[j] += sv_e[t, i, j]
                TW = 0.0
                for i in range(n):
                    wv = 0.0
                    for j in range(m):
                        wv += sv_e[t, i, j] * sv_p[t, j]
                    if wv < 0.0:
                        wv = 0.0
                    sv_w[t, i] = wv
                    TW += wv
                if TW < 1e-12:
                    TW = 1e-12
                for i in range(n):
                    xfac[i] = box_scale * n * sv_w[t, i] / TW

                # consumer heads: [f, p, q/qmax, bang_i] -> box maps
                for fi in range(F):
                    fc[fi] = f[fi]
                for j in range(m):
                    fc[F + j] = sv_p[t, j]
                for a in range(k):
                    fc[F + m + a] = sv_sq[t, a]
                for j in range(m):
                    sv_X[t, j] = 0.0
                for i in range(n):
                    for j in range(m):
                        fc[F + m + k + j] = tau[i, j] / (bang_scale * (sv_p[t, j] + p_floor))
                    off = i * Fc * out
                    for o in range(out):
                        acc = 0.0
                        for fi in range(Fc):
                            acc += fc[fi] * theta[off + fi * out + o]
                        raw[o] = acc
                    for j in range(m):
                        sv_sx[t, i, j] = _sigmoid(raw[j])
                        sv_X[t, j] += xfac[i] * E[j] * sv_sx[t, i, j]
                    for a in range(k):
                        sv_th[t, i, a] = tanh(raw[m + a])

                # shared aggregate-demand scale
                for j in range(m):
                    beta[j] = _sm1(E[j] / _spos(sv_X[t, j], eps_pos), eps_sm)

                # per-consumer budget scale
                for a in range(k):
                    sv_S[t, a] = 0.0
                for i in range(n):
                    wv = sv_w[t, i]
                    cv = 0.0
                    for j in range(m):
                        cv += beta[j] * xfac[i] * E[j] * sv_sx[t, i, j] * sv_p[t, j]
                    for a in range(k):
                        cv += b_max * sv_th[t, i, a] * q_max * sv_sq[t, a]
                    sv_cost[t, i] = cv
                    alpha_v = _sm1(wv / _spos(cv, eps_pos), eps_sm)
                    sv_alpha[t, i] = alpha_v
                    for j in range(m):
                        sv_xf[t, i, j] = alpha_v * beta[j] * xfac[i] * E[j] * sv_sx[t, i, j]
                    for a in range(k):
                        sv_bf[t, i, a] = alpha_v * b_max * sv_th[t, i, a]
                        sv_S[t, a] += sv_bf[t, i, a]

                # net-asset clearing shift
                for a in range(k):
                    shift_s = _spos(sv_S[t, a], eps_pos) / n
                    for i in range(n):
                        sv_bf[t, i, a] -= shift_s

                # ------- deviation stage -------
                if dev >= 0 and dev < n:
                    # features [f, a_-dev in player order]
                    for fi in range(F):
                        fdev[fi] = f[fi]
                    idx = F
                    for l in range(n):
                        if l == dev:
                            continue
                        for j in range(m):
                            fdev[idx] = sv_xf[t, l, j]
                            idx += 1
                        for a in range(k):
                            fdev[idx] = sv_bf[t, l, a]
                            idx += 1
                    for j in range(m):
                        fdev[idx] = sv_p[t, j]
                        idx += 1
                    for a in range(k):
                        fdev[idx] = q_max * sv_sq[t, a]
                        idx += 1
                    for j in range(m):
                        fdev[idx] = tau[dev, j] / (bang_scale * (sv_p[t, j] + p_floor))
                        idx += 1
                    off = dev * Fdc * out
                    for o in range(out):
                        acc = 0.0
                        for fi in range(Fdc):
                            acc += fdev[fi] * phi[off + fi * out + o]
                        raw[o] = acc
                    for j in range(m):
                        sv_dsx[t, j] = _sigmoid(raw[j])
                    for a in range(k):
                        sv_dth[t, a] = tanh(raw[m + a])
                    # residual-supply cap, then budget scale, then asset cap
                    wv = 0.0
                    cv = 0.0
                    for j in range(m):
                        acc = E[j]
                        for l in range(n):
                            if l != dev:
                                acc -= sv_xf[t, l, j]
                        sv_dresid[t, j] = acc
                        if acc < 0.0:
                            acc = 0.0
                        z_j = box_scale * acc * sv_dsx[t, j]
                        gj = _sm1(acc / _spos(z_j, eps_pos), eps_sm)
                        uwork[j] = gj * z_j          # xh_dev
                        wv += sv_e[t, dev, j] * sv_p[t, j]
                        cv += uwork[j] * sv_p[t, j]
                    for a in range(k):
                        cv += b_max * sv_dth[t, a] * q_max * sv_sq[t, a]
                    if wv < 0.0:
                        wv = 0.0
                    sv_dw[t] = wv
                    sv_dcost[t] = cv
                    alpha_v = _sm1(wv / _spos(cv, eps_pos), eps_sm)
                    sv_dalpha[t] = alpha_v
                    for j in range(m):
                        sv_dxf[t, j] = alpha_v * uwork[j]
                    for a in range(k):
                        sv_dbh[t, a] = alpha_v * b_max * sv_dth[t, a]
                        acc = 0.0   # cap_a = -sum_{l != dev} b_l
                        for l in range(n):
                            if l != dev:
                                acc -= sv_bf[t, l, a]
                        sv_dbf[t, a] = sv_dbh[t, a] - _spos(sv_dbh[t, a] - acc, eps_pos)
                elif dev == n:
                    for fi in range(F):
                        fdev[fi] = f[fi]
                    idx = F
                    for l in range(n):
                        for j in range(m):
                            fdev[idx] = sv_xf[t, l, j]
                            idx += 1
                        for a in range(k):
                            fdev[idx] = sv_bf[t, l, a]
                            idx += 1
                    off = n * Fdc * out
                    for o in range(out):
                        acc = 0.0
                        for fi in range(Fdev):
                            acc += fdev[fi] * phi[off + fi * out + o]
                        raw[o] = acc
                    mx = raw[0]
                    for j in range(1, m):
                        if raw[j] > mx:
                            mx = raw[j]
                    tot = 0.0
                    for j in range(m):
                        sv_dp[t, j] = exp(raw[j] - mx)
                        tot += sv_dp[t, j]
                    for j in range(m):
                        sv_dp[t, j] /= tot
                    for a in range(k):
                        sv_dsq[t, a] = _sigmoid(raw[m + a])

                # ------- rewards -------
                wt = weights[b, t]
                if r == 0:
                    for i in range(n):
                        payoff_on[b, i] += wt * _utility(
                            sv_xf[t, i, :], tau[i, :], m, util_kind, leps, cd_floor
                        )
                    acc = 0.0
                    for j in range(m):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_xf[t, i, j] - sv_e[t, i, j]
                        acc += sv_p[t, j] * tot
                    for a in range(k):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_bf[t, i, a]
                        acc += q_max * sv_sq[t, a] * tot
                    payoff_on[b, n] += wt * acc
                elif dev < n:
                    dev_pay += wt * _utility(
                        sv_dxf[t, :], tau[dev, :], m, util_kind, leps, cd_floor
                    )
                else:
                    acc = 0.0
                    for j in range(m):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_xf[t, i, j] - sv_e[t, i, j]
                        acc += sv_dp[t, j] * tot
                    for a in range(k):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_bf[t, i, a]
                        acc += q_max * sv_dsq[t, a] * tot
                    dev_pay += wt * acc

                # ------- transition -------
                if t < T - 1:
                    omg = <long> (shocks[t, b, 0] + 0.5)
                    sv_omega[t + 1] = omg
                    for i in range(n):
                        for j in range(m):
                            acc = shocks[t, b, 1 + i * m + j]
                            for a in range(k):
                                if dev == i:
                                    acc += sv_dbf[t, a] * returns[omg, a, j]
                                else:
                                    acc += sv_bf[t, i, a] * returns[omg, a, j]
                            sv_e[t + 1, i, j] = acc

            if r > 0:
                per_sample[b] += dev_pay

            # ---------------- backward ----------------
            if need_gt == 0 and need_gp == 0:
                continue
            if r == 0 and need_gt == 0:
                continue
            for i in range(n):
                for j in range(m):
                    dLde_next[i, j] = 0.0

            for t in range(T - 1, -1, -1):
                wt = weights[b, t]
                seed = (-wt / B) if r == 0 else (wt / B)
                omg = sv_omega[t]
                # recompute step quantities
                for j in range(m):
                    E[j] = 0.0
                    for i in range(n):
                        E[j] += sv_e[t, i, j]
                    beta[j] = _sm1(E[j] / _spos(sv_X[t, j], eps_pos), eps_sm)
                TW = 0.0
                for i in range(n):
                    TW += sv_w[t, i]
                if TW < 1e-12:
                    TW = 1e-12
                for i in range(n):
                    xfac[i] = box_scale * n * sv_w[t, i] / TW

                # zero step gradients
                for i in range(n):
                    for j in range(m):
                        d_x[i, j] = 0.0
                        d_xt[i, j] = 0.0
                        d_xh[i, j] = 0.0
                    for a in range(k):
                        d_b[i, a] = 0.0
                        d_bt[i, a] = 0.0
                        d_bh[i, a] = 0.0
                for j in range(m):
                    d_p[j] = 0.0
                for a in range(k):
                    d_q[a] = 0.0
                for fi in range(F):
                    d_f[fi] = 0.0
                for a in range(k):
                    d_sqx[a] = 0.0
                for j in range(m):
                    d_xdev[j] = 0.0
                    d_xtd[j] = 0.0
                for a in range(k):
                    d_bdev[a] = 0.0
                    d_btd[a] = 0.0
                for i in range(n):
                    for j in range(m):
                        dLde[i, j] = 0.0

                # transition backward: e_{t+1} = ebase + B_t R[w_{t+1}]
                if t < T - 1:
                    for i in range(n):
                        for a in range(k):
                            acc = 0.0
                            for j in range(m):
                                acc += returns[sv_omega[t + 1], a, j] * dLde_next[i, j]
                            if dev == i:
                                d_bdev[a] += acc
                            else:
                                d_b[i, a] += acc

                # reward backward
                if r == 0:
                    for i in range(n):
                        _utility_grad(
                            sv_xf[t, i, :], tau[i, :], m, util_kind, leps,
                            cd_floor, seed, d_x[i, :],
                        )
                    # auctioneer reward
                    for j in range(m):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_xf[t, i, j] - sv_e[t, i, j]
                        d_p[j] += seed * tot
                        for i in range(n):
                            d_x[i, j] += seed * sv_p[t, j]
                            dLde[i, j] -= seed * sv_p[t, j]
                    for a in range(k):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_bf[t, i, a]
                        d_q[a] += seed * tot
                        for i in range(n):
                            d_b[i, a] += seed * q_max * sv_sq[t, a]
                elif dev < n:
                    _utility_grad(
                        sv_dxf[t, :], tau[dev, :], m, util_kind, leps,
                        cd_floor, seed, d_xdev,
                    )
                else:
                    # deviated auctioneer payoff
                    for j in range(m):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_xf[t, i, j] - sv_e[t, i, j]
                        d_up[j] = seed * tot      # dL/dp'
                        for i in range(n):
                            d_x[i, j] += seed * sv_dp[t, j]
                            dLde[i, j] -= seed * sv_dp[t, j]
                    for a in range(k):
                        tot = 0.0
                        for i in range(n):
                            tot += sv_bf[t, i, a]
                        d_btd[a] = seed * tot     # dL/dq' staging
                        for i in range(n):
                            d_b[i, a] += seed * q_max * sv_dsq[t, a]

                # ------- deviation-stage backward -------
                if dev >= 0 and dev < n:
                    # final shift: b_dev = bh - spos(bh - cap)
                    for a in range(k):
                        acc = 0.0   # cap
                        for l in range(n):
                            if l != dev:
                                acc -= sv_bf[t, l, a]
                        ds = _dspos(sv_dbh[t, a] - acc, eps_pos)
                        d_btd[a] = d_bdev[a] * (1.0 - ds)   # -> dL/dbh_dev
                        dcap = d_bdev[a] * ds               # dL/dcap
                        for l in range(n):
                            if l != dev:
                                d_b[l, a] -= dcap           # cap = -sum_{l!=dev} b_l
                    # (x_dev, bh_dev) = alpha * (xh_dev, bt_dev)
                    alpha_v = sv_dalpha[t]
                    cv = sv_dcost[t]
                    wv = sv_dw[t]
                    cp = _spos(cv, eps_pos)
                    rr = wv / cp
                    d1 = 0.0
                    for j in range(m):
                        acc = sv_dresid[t, j]
                        if acc < 0.0:
                            acc = 0.0
                        z_j = box_scale * acc * sv_dsx[t, j]
                        gj = _sm1(acc / _spos(z_j, eps_pos), eps_sm)
                        uwork[j] = gj * z_j          # xh_dev
                        d1 += d_xdev[j] * uwork[j]
                    for a in range(k):
                        d1 += d_btd[a] * b_max * sv_dth[t, a]
                    # d1 = dL/dalpha
                    d2 = d1 * _dsm1(rr, eps_sm)
                    dw_v = d2 / cp
                    dcost = -d2 * rr / cp * _dspos(cv, eps_pos)
                    # xh/bt receive alpha-scaled seeds plus cost terms
                    for j in range(m):
                        acc = alpha_v * d_xdev[j] + dcost * sv_p[t, j]  # dL/dxh_dev_j
                        d_p[j] += dcost * uwork[j]
                        # z = c*resid+*s ; beta_d = sm1(resid+/spos(z)) ; xh = beta_d*z
                        tot = sv_dresid[t, j]
                        if tot < 0.0:
                            tot = 0.0
                        se = sv_dsx[t, j]
                        z_j = box_scale * tot * se
                        Xp = _spos(z_j, eps_pos)
                        gj = tot / Xp
                        dE_j = acc * z_j * _dsm1(gj, eps_sm)            # dL/dg
                        u_val = acc * _sm1(gj, eps_sm) \
                            - dE_j * gj * _dspos(z_j, eps_pos) / Xp     # dL/dz
                        d_xtd[j] = u_val * box_scale * tot              # dL/d(sigmoid out)
                        if sv_dresid[t, j] > 0.0:
                            dXp = dE_j / Xp + u_val * box_scale * se    # dL/dresid
                            for i in range(n):
                                dLde[i, j] += dXp
                            for l in range(n):
                                if l != dev:
                                    d_x[l, j] -= dXp
                    for a in range(k):
                        d_btd[a] = alpha_v * d_btd[a] + dcost * q_max * sv_sq[t, a]
                        d_q[a] += dcost * b_max * sv_dth[t, a]
                    if wv > 0.0:
                        for j in range(m):
                            dLde[dev, j] += dw_v * sv_p[t, j]
                            d_p[j] += dw_v * sv_e[t, dev, j]
                    # box maps -> raw head
                    for j in range(m):
                        se = sv_dsx[t, j]
                        raw[j] = d_xtd[j] * se * (1.0 - se)
                    for a in range(k):
                        raw[m + a] = d_btd[a] * b_max * (1.0 - sv_dth[t, a] * sv_dth[t, a])
                    # head backward into phi and fdev
                    for fi in range(F):
                        fdev[fi] = f_rebuild(fi, F, W, nm, m, omg, sv_e[t], tau, tau_scale)
                    idx = F
                    for l in range(n):
                        if l == dev:
                            continue
                        for j in range(m):
                            fdev[idx] = sv_xf[t, l, j]
                            idx += 1
                        for a in range(k):
                            fdev[idx] = sv_bf[t, l, a]
                            idx += 1
                    for j in range(m):
                        fdev[idx] = sv_p[t, j]
                        idx += 1
                    for a in range(k):
                        fdev[idx] = q_max * sv_sq[t, a]
                        idx += 1
                    for j in range(m):
                        fdev[idx] = tau[dev, j] / (bang_scale * (sv_p[t, j] + p_floor))
                        idx += 1
                    off = dev * Fdc * out
                    for fi in range(Fdc):
                        d_fdev[fi] = 0.0
                    for o in range(out):
                        if raw[o] != 0.0:
                            for fi in range(Fdc):
                                if need_gp:
                                    g_phi[off + fi * out + o] += fdev[fi] * raw[o]
                                d_fdev[fi] += phi[off + fi * out + o] * raw[o]
                    # scatter d_fdev
                    for fi in range(F):
                        d_f[fi] += d_fdev[fi]
                    idx = F
                    for l in range(n):
                        if l == dev:
                            continue
                        for j in range(m):
                            d_x[l, j] += d_fdev[idx]
                            idx += 1
                        for a in range(k):
                            d_b[l, a] += d_fdev[idx]
                            idx += 1
                    for j in range(m):
                        d_p[j] += d_fdev[idx]
                        idx += 1
                    for a in range(k):
                        d_q[a] += d_fdev[idx]   # gradient w.r.t. the q value
                        idx += 1
                    for j in range(m):
                        se = sv_p[t, j] + p_floor
                        d_p[j] -= d_fdev[idx] * tau[dev, j] / (bang_scale * se * se)
                        idx += 1
                elif dev == n:
                    # softmax/sigmoid backward for (p', q')
                    acc = 0.0
                    for j in range(m):
                        acc += d_up[j] * sv_dp[t, j]
                    for j in range(m):
                        raw[j] = sv_dp[t, j] * (d_up[j] - acc)
                    for a in range(k):
                        se = sv_dsq[t, a]
                        raw[m + a] = d_btd[a] * q_max * se * (1.0 - se)
                    for fi in range(F):
                        fdev[fi] = f_rebuild(fi, F, W, nm, m, omg, sv_e[t], tau, tau_scale)
                    idx = F
                    for l in range(n):
                        for j in range(m):
                            fdev[idx] = sv_xf[t, l, j]
                            idx += 1
                        for a in range(k):
                            fdev[idx] = sv_bf[t, l, a]
                            idx += 1
                    off = n * Fdc * out
                    for fi in range(Fdev):
                        d_fdev[fi] = 0.0
                    for o in range(out):
                        if raw[o] != 0.0:
                            for fi in range(Fdev):
                                if need_gp:
                                    g_phi[off + fi * out + o] += fdev[fi] * raw[o]
                                d_fdev[fi] += phi[off + fi * out + o] * raw[o]
                    for fi in range(F):
                        d_f[fi] += d_fdev[fi]
                    idx = F
                    for l in range(n):
                        for j in range(m):
                            d_x[l, j] += d_fdev[idx]
                            idx += 1
                        for a in range(k):
                            d_b[l, a] += d_fdev[idx]
                            idx += 1

                # ------- base pipeline backward (always needed: it carries
                # the state chain that feeds earlier steps' phi gradients) --
                if True:
                    # asset clearing shift
                    for a in range(k):
                        acc = 0.0
                        for l in range(n):
                            acc += d_b[l, a]
                        dshift = -acc / n * _dspos(sv_S[t, a], eps_pos)
                        for i in range(n):
                            d_bh[i, a] = d_b[i, a] + dshift
                    # budget scale
                    for i in range(n):
                        alpha_v = sv_alpha[t, i]
                        cv = sv_cost[t, i]
                        wv = sv_w[t, i]
                        cp = _spos(cv, eps_pos)
                        rr = wv / cp
                        d1 = 0.0
                        for j in range(m):
                            d1 += d_x[i, j] * beta[j] * xfac[i] * E[j] * sv_sx[t, i, j]
                        for a in range(k):
                            d1 += d_bh[i, a] * b_max * sv_th[t, i, a]
                        d2 = d1 * _dsm1(rr, eps_sm)
                        dw_v = d2 / cp
                        dcost = -d2 * rr / cp * _dspos(cv, eps_pos)
                        for j in range(m):
                            d_xh[i, j] = alpha_v * d_x[i, j] + dcost * sv_p[t, j]
                            d_p[j] += dcost * beta[j] * xfac[i] * E[j] * sv_sx[t, i, j]
                        for a in range(k):
                            d_bt[i, a] = alpha_v * d_bh[i, a] + dcost * q_max * sv_sq[t, a]
                            d_q[a] += dcost * b_max * sv_th[t, i, a]
                        if wv > 0.0:
                            for j in range(m):
                                dLde[i, j] += dw_v * sv_p[t, j]
                                d_p[j] += dw_v * sv_e[t, i, j]
                    # aggregate scale (the demand box is c*E, so E feeds both
                    # the cap ratio and the box itself)
                    for j in range(m):
                        acc = 0.0
                        for i in range(n):
                            acc += d_xh[i, j] * xfac[i] * E[j] * sv_sx[t, i, j]
                        Xp = _spos(sv_X[t, j], eps_pos)
                        gj = E[j] / Xp
                        d2 = acc * _dsm1(gj, eps_sm)
                        dE_j = d2 / Xp
                        dX_j = -d2 * gj / Xp * _dspos(sv_X[t, j], eps_pos)
                        for i in range(n):
                            dLde[i, j] += dE_j
                            d_xt[i, j] = beta[j] * d_xh[i, j] + dX_j
                        acc = 0.0
                        for i in range(n):
                            acc += d_xt[i, j] * xfac[i] * sv_sx[t, i, j]
                        for i in range(n):
                            dLde[i, j] += acc
                    # wealth-share chain of the demand boxes:
                    # xfac_i = C w_i / sum_l w_l with C = box_scale * n
                    if TW > 1e-12:
                        acc = 0.0      # sum_i dL/dxfac_i * wsh_i
                        for i in range(n):
                            d1 = 0.0   # dL/dxfac_i
                            for j in range(m):
                                d1 += d_xt[i, j] * E[j] * sv_sx[t, i, j]
                            uwork2[i] = d1
                            acc += d1 * sv_w[t, i] / TW
                        for i in range(n):
                            dw_v = box_scale * n / TW * (uwork2[i] - acc)
                            if sv_w[t, i] > 0.0:
                                for j in range(m):
                                    dLde[i, j] += dw_v * sv_p[t, j]
                                    d_p[j] += dw_v * sv_e[t, i, j]
                    # box maps
                    for i in range(n):
                        for j in range(m):
                            se = sv_sx[t, i, j]
                            d_xt[i, j] = d_xt[i, j] * xfac[i] * E[j] * se * (1.0 - se)
                        for a in range(k):
                            d_bt[i, a] = d_bt[i, a] * b_max * (1.0 - sv_th[t, i, a] * sv_th[t, i, a])
                    # heads backward into theta and features
                    for fi in range(F):
                        f[fi] = f_rebuild(fi, F, W, nm, m, omg, sv_e[t], tau, tau_scale)
                        fc[fi] = f[fi]
                    for j in range(m):
                        fc[F + j] = sv_p[t, j]
                    for a in range(k):
                        fc[F + m + a] = sv_sq[t, a]
                    for fi in range(Fc):
                        d_fc[fi] = 0.0
                    for i in range(n):
                        for j in range(m):
                            fc[F + m + k + j] = tau[i, j] / (bang_scale * (sv_p[t, j] + p_floor))
                        off = i * Fc * out
                        for o in range(out):
                            acc = d_xt[i, o] if o < m else d_bt[i, o - m]
                            if acc != 0.0:
                                for fi in range(Fc):
                                    if need_gt:
                                        g_theta[off + fi * out + o] += fc[fi] * acc
                                    d_fc[fi] += theta[off + fi * out + o] * acc
                        # bang features feed back into prices (per consumer)
                        for j in range(m):
                            se = sv_p[t, j] + p_floor
                            d_p[j] -= d_fc[F + m + k + j] * tau[i, j] / (bang_scale * se * se)
                            d_fc[F + m + k + j] = 0.0
                    for fi in range(F):
                        d_f[fi] += d_fc[fi]
                    for j in range(m):
                        d_p[j] += d_fc[F + j]
                    for a in range(k):
                        d_sqx[a] += d_fc[F + m + a]
                    # softmax backward once every price consumer has contributed
                    acc = 0.0
                    for j in range(m):
                        acc += d_p[j] * sv_p[t, j]
                    for j in range(m):
                        d_up[j] = sv_p[t, j] * (d_p[j] - acc)
                    off = n * Fc * out
                    for o in range(out):
                        if o < m:
                            acc = d_up[o]
                        else:
                            se = sv_sq[t, o - m]
                            acc = (d_q[o - m] * q_max + d_sqx[o - m]) * se * (1.0 - se)
                        if acc != 0.0:
                            for fi in range(F):
                                if need_gt:
                                    g_theta[off + fi * out + o] += f[fi] * acc
                                d_f[fi] += theta[off + fi * out + o] * acc
                    # feature backward into endowments
                    for i in range(n):
                        for j in range(m):
                            dLde[i, j] += d_f[1 + W + i * m + j]

                for i in range(n):
                    for j in range(m):
                        dLde_next[i, j] = dLde[i, j]

        for i in range(n_players):
            per_sample[b] -= payoff_on[b, i]

    return per_sample_arr, g_theta_arr, g_phi_arr, payoff_on_arr.mean(axis=0)


cdef double _utility(double[:] x, double[:] tau_row, int m, int kind,
                     double leps, double floor) noexcept nogil:
    cdef int j
    cdef double acc, zmin, z
    if kind == 0:       # linear
        acc = 0.0
        for j in range(m):
            acc += tau_row[j] * x[j]
        return acc
    if kind == 1:       # cobb-douglas, exponents normalized to sum 1
        zmin = 0.0
        for j in range(m):
            zmin += tau_row[j]
        acc = 0.0
        for j in range(m):
            z = x[j]
            if z < floor:
                z = floor
            acc += tau_row[j] / zmin * log(z)
        return exp(acc)
    # smoothed leontief: -eps log sum exp(-(x/tau)/eps)
    zmin = x[0] / tau_row[0]
    for j in range(1, m):
        z = x[j] / tau_row[j]
        if z < zmin:
            zmin = z
    acc = 0.0
    for j in range(m):
        acc += exp(-((x[j] / tau_row[j]) - zmin) / leps)
    return zmin - leps * log(acc)


cdef void _utility_grad(double[:] x, double[:] tau_row, int m, int kind,
                        double leps, double floor, double seed,
                        double[:] out_grad) noexcept nogil:
    cdef int j
    cdef double acc, zmin, z, u
    if kind == 0:
        for j in range(m):
            out_grad[j] += seed * tau_row[j]
        return
    if kind == 1:
        zmin = 0.0
        for j in range(m):
            zmin += tau_row[j]
        acc = 0.0
        for j in range(m):
            z = x[j]
            if z < floor:
                z = floor
            acc += tau_row[j] / zmin * log(z)
        u = exp(acc)
        for j in range(m):
            if x[j] > floor:
                out_grad[j] += seed * u * tau_row[j] / (zmin * x[j])
        return
    zmin = x[0] / tau_row[0]
    for j in range(1, m):
        z = x[j] / tau_row[j]
        if z < zmin:
            zmin = z
    acc = 0.0
    for j in range(m):
        acc += exp(-((x[j] / tau_row[j]) - zmin) / leps)
    for j in range(m):
        z = exp(-((x[j] / tau_row[j]) - zmin) / leps) / acc
        out_grad[j] += seed * z / tau_row[j]


cdef inline double f_rebuild(int fi, int F, int W, int nm, int m, int omg,
                             double[:, :] e_t, double[:, :] tau,
                             double tau_scale) noexcept nogil:
    cdef int rel
    if fi == 0:
        return 1.0
    if fi < 1 + W:
        return 1.0 if (fi - 1) == omg else 0.0
    if fi < 1 + W + nm:
        rel = fi - 1 - W
        return e_t[rel // m, rel % m]
    rel = fi - 1 - W - nm
    return tau[rel // m, rel % m] / tau_scale
