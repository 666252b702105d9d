"""Compiled per-path stepping loop used by :mod:`simplexma.sim`.

Mirrors the array engine in ``sim._run_numpy`` step for step; the two are
cross-checked in the tests. Each path is advanced independently through one
block of pre-drawn normals.
"""
from __future__ import annotations

import numpy as np
from numba import njit

ALDOUS, LOGISTIC, LIFT = 0, 1, 2
CENSORED = -1


# Helpers keep a single exit: an early return blocks LLVM inlining, and the
# out-of-line call then pays array refcounting on every argument.

@njit(cache=True, inline="always")
def _interp(y, n, lut, table, out):
    """Multilinear interpolation of ``table`` rows; ``lut`` is -1 off the interior."""
    d = y.size
    m = n + 1
    flat = 0
    ok = True
    for a in range(d):
        b = int(np.floor(y[a] * n))
        if b < 0 or b >= n:
            ok = False
            b = 0
        flat = flat * m + b
    for j in range(out.size):
        out[j] = 0.0
    if ok:
        for c in range(1 << d):
            off = 0
            for a in range(d):
                off = off * m + ((c >> (d - 1 - a)) & 1)
            if lut[flat + off] < 0:
                ok = False
    if ok:
        for c in range(1 << d):
            off = 0
            wgt = 1.0
            for a in range(d):
                bit = (c >> (d - 1 - a)) & 1
                off = off * m + bit
                s = y[a] * n
                fr = s - np.floor(s)
                wgt *= fr if bit == 1 else 1.0 - fr
            node = lut[flat + off]
            for j in range(out.size):
                out[j] += wgt * table[node, j]
    return ok


@njit(cache=True, inline="always")
def _exact1d(y, out):
    x = y[0]
    ok = 0.0 < x < 1.0
    if ok:
        s = np.sin(np.pi * x)
        out[0] = np.log(np.pi**2 / s**2)
        out[1] = -2.0 * np.pi * np.cos(np.pi * x) / s
        out[2] = 2.0 * np.pi**2 / s**2
    return ok


@njit(cache=True, inline="always")
def _barrier_w(y):
    s = 1.0
    w = 0.0
    inside = True
    for a in range(y.size):
        if y[a] <= 0.0:
            inside = False
        else:
            w -= 2.0 * np.log(y[a])
        s -= y[a]
    if s <= 0.0:
        inside = False
    return w - 2.0 * np.log(s) if inside else np.inf


@njit(cache=True, inline="always")
def _ratio(y):
    s = 1.0
    r = 0.0
    for a in range(y.size):
        s -= y[a]
        r += y[a] ** 2
    return r + s * s


@njit(cache=True, inline="always")
def _barrier_cov(y, A):
    d = y.size
    s = 1.0
    den = 0.0
    for i in range(d):
        s -= y[i]
        den += y[i] * y[i]
    den += s * s
    for i in range(d):
        qi = y[i] * y[i]
        for j in range(d):
            A[i, j] = -0.5 * qi * y[j] * y[j] / den
        A[i, i] = 0.5 * qi * (den - qi) / den


@njit(cache=True, inline="always")
def _inv_logdet(H, A):
    """``A = H^{-1}``; returns ``log det H`` (nan if not SPD)."""
    d = H.shape[0]
    out = np.nan
    if d == 1:
        if H[0, 0] > 0.0:
            A[0, 0] = 1.0 / H[0, 0]
            out = np.log(H[0, 0])
    elif d == 2:
        a, b, c = H[0, 0], 0.5 * (H[0, 1] + H[1, 0]), H[1, 1]
        det = a * c - b * b
        if a > 0.0 and det > 0.0:
            A[0, 0] = c / det
            A[1, 1] = a / det
            A[0, 1] = -b / det
            A[1, 0] = -b / det
            out = np.log(det)
    else:
        lam, V = np.linalg.eigh(H)
        if lam.min() > 0.0:
            A[:, :] = (V / lam) @ V.T
            out = np.log(lam).sum()
    return out


@njit(cache=True, inline="always")
def _logdet_spd(A):
    d = A.shape[0]
    if d == 1:
        out = np.log(A[0, 0])
    elif d == 2:
        out = np.log(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    else:
        out = np.log(np.linalg.eigvalsh(A)).sum()
    return out


@njit(cache=True, inline="always")
def _sqrtm(A, S):
    d = A.shape[0]
    if d == 1:
        S[0, 0] = np.sqrt(A[0, 0])
    elif d == 2:
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        s = np.sqrt(max(det, 0.0))
        tau = np.sqrt(A[0, 0] + A[1, 1] + 2.0 * s)
        S[0, 0] = (A[0, 0] + s) / tau
        S[1, 1] = (A[1, 1] + s) / tau
        S[0, 1] = A[0, 1] / tau
        S[1, 0] = A[1, 0] / tau
    else:
        lam, V = np.linalg.eigh(A)
        S[:, :] = (V * np.sqrt(np.maximum(lam, 0.0))) @ V.T


@njit(cache=True, inline="always")
def _nearest(y):
    # distance to e_0 = 0 first, then e_1..e_d; ties to the lowest index
    d = y.size
    acc = 0.0
    for a in range(d):
        acc += y[a] * y[a]
    best = acc
    idx = 0
    for i in range(d):
        acc = 0.0
        for a in range(d):
            diff = y[a] - (1.0 if a == i else 0.0)
            acc += diff * diff
        if acc < best:
            best = acc
            idx = i + 1
    return idx, np.sqrt(best)


@njit(cache=True, inline="always")
def _admissible(kind, z, eps):
    ok = True
    if kind == LIFT:
        for a in range(z.size):
            if z[a] <= eps or z[a] >= 1.0 - eps:
                ok = False
    else:
        s = 0.0
        for a in range(z.size):
            if z[a] <= eps:
                ok = False
            s += z[a]
        ok = ok and s < 1.0 - eps
    return ok


@njit(cache=True, inline="always")
def _to_y(kind, z, y):
    if kind == LIFT:
        y[0] = z[0] * z[1]
        y[1] = z[0] * (1.0 - z[1])
    else:
        for a in range(y.size):
            y[a] = z[a]


@njit(cache=True)
def advance(kind, Z, k_now, alive, frozen, obj, trunc, intcov, L, L_frozen, test_k,
            u_stop, Y_stop, label, tail, trust_k,
            normals, active, nsteps, h, tgrid, max_steps, g_stop, trust, cont, scale, absorb_r, r_snap, eps,
            fld_kind, fld_n, lut, table,
            rec_slot, rec_u, rec_Y, rec_S, rec_len):
    """Advance every path in ``active`` by up to ``nsteps`` steps."""
    d = Z.shape[1]
    sqh = np.sqrt(h)
    ncol = 1 + d + d * d
    row = np.empty(ncol)
    H = np.empty((d, d))
    A = np.empty((d, d))
    S = np.empty((d, d))
    y = np.empty(d)
    prop = np.empty(d)
    step = np.empty(d)
    z = np.empty(d)
    aldous = kind == ALDOUS
    log_scale = np.log(scale)
    log2 = np.log(2.0)
    for a_i in range(active.size):
        p = active[a_i]
        slot = rec_slot[p]
        for r in range(d):
            z[r] = Z[p, r]
        for j in range(nsteps):
            k = k_now[p]
            _to_y(kind, z, y)
            t_k = tgrid[k]
            t_next = tgrid[k + 1]
            lg = -0.5 * k * h  # log(1 - t_k)
            # covariance rate A (u-time), its log det and the stopping statistic
            ok = False
            g = np.nan
            ldA = np.nan
            stat = np.inf
            trusted = False
            if aldous:
                if fld_kind == 1:
                    ok = _exact1d(y, row)
                else:
                    ok = _interp(y, fld_n, lut, table, row)
                if ok:
                    g = row[0]
                    for r in range(d):
                        for c in range(d):
                            H[r, c] = row[1 + d + r * d + c]
                    ldA = _inv_logdet(H, A)
                    if np.isnan(ldA):
                        ok = False
                    else:
                        for r in range(d):
                            for c in range(d):
                                A[r, c] *= scale
                        ldA = d * log_scale - ldA
                        stat = g
                if not ok:
                    if cont:
                        _barrier_cov(y, A)
                        for r in range(d):
                            for c in range(d):
                                A[r, c] *= scale
                        ldA = _logdet_spd(A)
                        stat = _barrier_w(y)
                    else:
                        ldA = np.nan
                        stat = np.inf
                trusted = ok and g < trust
            elif kind == LOGISTIC:
                m = z[0]
                A[0, 0] = (m * (1.0 - m)) ** 2
                ldA = np.log(A[0, 0])
                stat = _barrier_w(y)
                trusted = False
            else:
                m, x = z[0], z[1]
                aM = (m * (1.0 - m)) ** 2
                aX = (x * (1.0 - x)) ** 2
                v0, v1 = x, 1.0 - x
                A[0, 0] = aM * v0 * v0 + m * m * aX
                A[1, 1] = aM * v1 * v1 + m * m * aX
                A[0, 1] = aM * v0 * v1 - m * m * aX
                A[1, 0] = A[0, 1]
                ldA = np.log(aM) + 2.0 * np.log(m) + np.log(aX)
                stat = _barrier_w(y)
                trusted = False

            vidx, vdist = _nearest(y)
            stop = k >= max_steps or not np.isfinite(ldA)
            if stat >= g_stop and (absorb_r <= 0.0 or vdist <= absorb_r):
                stop = True

            if aldous and not frozen[p] and ((not trusted) or stop):
                gg = g if ok else _barrier_w(y) + np.log(_ratio(y))
                tl = d * (1.0 - t_k) * lg + (1.0 - t_k) * gg
                obj[p] += tl
                for r in range(d):
                    for c in range(d):
                        intcov[p, r, c] += (y[r] if r == c else 0.0) - y[r] * y[c]
                L_frozen[p] = -d * lg - gg
                frozen[p] = True
                tail[p] = tl
                trust_k[p] = k
            if aldous and not frozen[p]:
                for jj in range(test_k.size):
                    if test_k[jj] == k:
                        L[p, jj] = -d * lg - g

            if stop:
                u_stop[p] = k * h
                Y_stop[p] = y
                label[p] = vidx if vdist <= r_snap else CENSORED
                if not aldous:
                    integrand = d * lg - d * log2 - ldA
                    trunc[p] = (1.0 - t_k) * abs(integrand) if np.isfinite(integrand) else 0.0
                    for r in range(d):
                        for c in range(d):
                            intcov[p, r, c] += (y[r] if r == c else 0.0) - y[r] * y[c]
                if slot >= 0:
                    n_ = rec_len[slot]
                    rec_u[slot, n_] = k * h
                    rec_Y[slot, n_] = y
                    rec_S[slot, n_] = np.nan
                    rec_len[slot] = n_ + 1
                alive[p] = False
                break

            if not (aldous and frozen[p]):
                obj[p] += -(d * log2 - d * lg + ldA) * (t_next - t_k)

            # proposal with bisection of the Gaussian increment
            if kind == LIFT:
                step[0] = sqh * np.sqrt((z[0] * (1.0 - z[0])) ** 2) * normals[a_i, j, 0]
                step[1] = sqh * np.sqrt((z[1] * (1.0 - z[1])) ** 2) * normals[a_i, j, 1]
            else:
                _sqrtm(A, S)
                for r in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc += S[r, c] * normals[a_i, j, c]
                    step[r] = sqh * acc
            sc = 1.0
            for r in range(d):
                prop[r] = z[r] + step[r]
            good = _admissible(kind, prop, eps)
            if good and aldous and not cont:
                if fld_kind == 1:
                    good = _exact1d(prop, row)
                else:
                    good = _interp(prop, fld_n, lut, table, row)
            tries = 0
            while not good and tries < 20:
                sc *= 0.5
                for r in range(d):
                    prop[r] = z[r] + sc * step[r]
                good = _admissible(kind, prop, eps)
                if good and aldous and not cont:
                    if fld_kind == 1:
                        good = _exact1d(prop, row)
                    else:
                        good = _interp(prop, fld_n, lut, table, row)
                tries += 1
            if not good:
                u_stop[p] = k * h
                Y_stop[p] = y
                label[p] = vidx if vdist <= r_snap else CENSORED
                if aldous:
                    if not frozen[p]:
                        gg = g if ok else _barrier_w(y) + np.log(_ratio(y))
                        tl = d * (1.0 - t_k) * lg + (1.0 - t_k) * gg
                        obj[p] += tl
                        L_frozen[p] = -d * lg - gg
                        frozen[p] = True
                        tail[p] = tl
                        trust_k[p] = k
                        for r in range(d):
                            for c in range(d):
                                intcov[p, r, c] += (y[r] if r == c else 0.0) - y[r] * y[c]
                else:
                    for r in range(d):
                        for c in range(d):
                            intcov[p, r, c] += (y[r] if r == c else 0.0) - y[r] * y[c]
                if slot >= 0:
                    n_ = rec_len[slot]
                    rec_u[slot, n_] = k * h
                    rec_Y[slot, n_] = y
                    rec_S[slot, n_] = np.nan
                    rec_len[slot] = n_ + 1
                alive[p] = False
                break

            if not (aldous and frozen[p]):
                for r in range(d):
                    for c in range(d):
                        intcov[p, r, c] += sc * sc * A[r, c] * h
            if slot >= 0:
                n_ = rec_len[slot]
                rec_u[slot, n_] = k * h
                rec_Y[slot, n_] = y
                for r in range(d):
                    for c in range(d):
                        rec_S[slot, n_, r, c] = 2.0 * A[r, c] / (1.0 - t_k)
                rec_len[slot] = n_ + 1
            for r in range(d):
                z[r] = prop[r]
                Z[p, r] = prop[r]
            k_now[p] = k + 1
