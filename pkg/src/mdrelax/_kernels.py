"""Compiled twin of the HBPC stepping loop for the built-in problems.

The Python path in ``hbpc``/``relaxation`` is the reference implementation;
this module repeats the same arithmetic in numba so that long convergence
sweeps (10**5 steps per run on Kepler) finish in seconds.  Both paths are
cross-checked in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PROB_OSCILLATOR = 0
PROB_KEPLER = 1
FUNC_DEFAULT = 0
FUNC_HAMILTONIAN = 1

# step status codes
OK = 0
STAGE_FAILED = 1
ROOT_NOT_FOUND = 2
SINGULAR = 3

# stage solve status codes
NEWTON_OK = 0
NEWTON_DIVERGED = 1
NEWTON_SINGULAR_JAC = 2
NEWTON_UNDEFINED = 3

MIN_DAMPING = 2.0**-30
SQRT_EPS = math.sqrt(np.finfo(np.float64).eps)
EPS = np.finfo(np.float64).eps


@njit(cache=True)
def towers(prob, w, m, out):
    """Fill ``out[d-1] = F_d(w)``; returns False at a singular state."""
    if prob == PROB_OSCILLATOR:
        x, y = w[0], w[1]
        rho = x * x + y * y
        if rho == 0.0:
            return False
        r = rho
        out[0, 0] = -y / r
        out[0, 1] = x / r
        if m > 1:
            r = r * rho
            out[1, 0] = -x / r
            out[1, 1] = -y / r
        if m > 2:
            r = r * rho
            out[2, 0] = y / r
            out[2, 1] = -x / r
        return True
    q0, q1, p0, p1 = w[0], w[1], w[2], w[3]
    r2 = q0 * q0 + q1 * q1
    if r2 == 0.0:
        return False
    r = math.sqrt(r2)
    r3 = r2 * r
    a0 = -q0 / r3
    a1 = -q1 / r3
    out[0, 0] = p0
    out[0, 1] = p1
    out[0, 2] = a0
    out[0, 3] = a1
    if m == 1:
        return True
    s = q0 * p0 + q1 * p1
    r5 = r3 * r2
    j0 = -p0 / r3 + 3.0 * s * q0 / r5
    j1 = -p1 / r3 + 3.0 * s * q1 / r5
    out[1, 0] = a0
    out[1, 1] = a1
    out[1, 2] = j0
    out[1, 3] = j1
    if m == 2:
        return True
    pp = p0 * p0 + p1 * p1
    r6 = r3 * r3
    r7 = r5 * r2
    out[2, 0] = j0
    out[2, 1] = j1
    out[2, 2] = -2.0 * q0 / r6 + 6.0 * s * p0 / r5 + 3.0 * pp * q0 / r5 - 15.0 * s * s * q0 / r7
    out[2, 3] = -2.0 * q1 / r6 + 6.0 * s * p1 / r5 + 3.0 * pp * q1 / r5 - 15.0 * s * s * q1 / r7
    return True


@njit(cache=True)
def eta(prob, func, w):
    if prob == PROB_OSCILLATOR:
        return w[0] * w[0] + w[1] * w[1]
    if func == FUNC_DEFAULT:
        return w[0] * w[3] - w[1] * w[2]
    return 0.5 * (w[2] * w[2] + w[3] * w[3]) - 1.0 / math.sqrt(w[0] * w[0] + w[1] * w[1])


@njit(cache=True)
def eta_dir(prob, func, w, d):
    """Directional derivative of eta at ``w`` along ``d``."""
    if prob == PROB_OSCILLATOR:
        return 2.0 * (w[0] * d[0] + w[1] * d[1])
    if func == FUNC_DEFAULT:
        return w[3] * d[0] - w[2] * d[1] - w[1] * d[2] + w[0] * d[3]
    r3 = (w[0] * w[0] + w[1] * w[1]) ** 1.5
    return (w[0] * d[0] + w[1] * d[1]) / r3 + w[2] * d[2] + w[3] * d[3]


@njit(cache=True)
def _residual(prob, rhs, coeffs, x, tw, out):
    m = coeffs.shape[0]
    if not towers(prob, x, m, tw):
        return math.inf
    nr = 0.0
    for i in range(x.shape[0]):
        v = x[i] - rhs[i]
        acc = 0.0
        for d in range(m):
            acc += coeffs[d] * tw[d, i]
        v -= acc
        out[i] = v
        nr += v * v
    nr = math.sqrt(nr)
    if not math.isfinite(nr):
        return math.inf
    return nr


@njit(cache=True)
def _lu_solve(A, b, x):
    """Dense LU with partial pivoting; returns False if A is singular."""
    n = b.shape[0]
    M = A.copy()
    for i in range(n):
        x[i] = b[i]
    for k in range(n):
        piv = k
        big = abs(M[k, k])
        for i in range(k + 1, n):
            if abs(M[i, k]) > big:
                big = abs(M[i, k])
                piv = i
        if big == 0.0 or not math.isfinite(big):
            return False
        if piv != k:
            for j in range(n):
                M[k, j], M[piv, j] = M[piv, j], M[k, j]
            x[k], x[piv] = x[piv], x[k]
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            if f != 0.0:
                for j in range(k, n):
                    M[i, j] -= f * M[k, j]
                x[i] -= f * x[k]
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for j in range(k + 1, n):
            acc -= M[k, j] * x[j]
        x[k] = acc / M[k, k]
    return True


@njit(cache=True)
def taylor_newton(prob, rhs, coeffs, x, tol, max_iter):
    """Damped Newton for ``x - sum_d coeffs[d] F_d(x) = rhs``, in place.

    Returns ``(status, iterations)``; on divergence ``x`` holds the last
    accepted iterate.  Mirrors ``solvers.damped_newton`` with a central
    finite-difference Jacobian.
    """
    n = x.shape[0]
    m = coeffs.shape[0]
    tw = np.empty((m, n))
    r = np.empty(n)
    rt = np.empty(n)
    rp = np.empty(n)
    rm = np.empty(n)
    xt = np.empty(n)
    dx = np.empty(n)
    J = np.empty((n, n))
    nr = _residual(prob, rhs, coeffs, x, tw, r)
    if nr == math.inf:
        return NEWTON_UNDEFINED, 0
    for it in range(max_iter):
        if nr <= tol:
            return NEWTON_OK, it
        xn = 0.0
        for i in range(n):
            xn += x[i] * x[i]
        h = SQRT_EPS * (1.0 + math.sqrt(xn))
        for j in range(n):
            for i in range(n):
                xt[i] = x[i]
            xt[j] = x[j] + h
            _residual(prob, rhs, coeffs, xt, tw, rp)
            xt[j] = x[j] - h
            _residual(prob, rhs, coeffs, xt, tw, rm)
            for i in range(n):
                J[i, j] = (rp[i] - rm[i]) / (2.0 * h)
        for i in range(n):
            rt[i] = -r[i]
        if not _lu_solve(J, rt, dx):
            return NEWTON_SINGULAR_JAC, it
        lam = 1.0
        while True:
            for i in range(n):
                xt[i] = x[i] + lam * dx[i]
            nrt = _residual(prob, rhs, coeffs, xt, tw, rt)
            if nrt < nr:
                break
            lam *= 0.5
            if lam < MIN_DAMPING:
                return NEWTON_DIVERGED, it + 1
        for i in range(n):
            x[i] = xt[i]
            r[i] = rt[i]
        nr = nrt
    if nr <= tol:
        return NEWTON_OK, max_iter
    return NEWTON_DIVERGED, max_iter


@njit(cache=True)
def _g(prob, func, w_n, d, gamma, eta_n, tmp):
    for i in range(w_n.shape[0]):
        tmp[i] = w_n[i] + gamma * d[i]
    return eta(prob, func, tmp) - eta_n


@njit(cache=True)
def solve_gamma(prob, func, w_n, d, tol, max_iter, lo, hi, gamma_min):
    """Relaxation root nearest one; returns ``(gamma, found)``.

    Same algorithm as ``solvers.solve_gamma``.
    """
    tmp = np.empty(w_n.shape[0])
    eta_n = eta(prob, func, w_n)
    gamma = 1.0
    ok = True
    for _ in range(max_iter):
        gv = _g(prob, func, w_n, d, gamma, eta_n, tmp)
        dg = eta_dir(prob, func, tmp, d)
        if gv == 0.0:
            break
        if dg == 0.0 or not math.isfinite(dg) or not math.isfinite(gv):
            ok = False
            break
        step = gv / dg
        new = gamma - step
        if not (lo <= new <= hi):
            ok = False
            break
        converged = abs(step) <= 4.0 * EPS * max(1.0, abs(new))
        gamma = new
        if converged:
            break
    if ok and abs(_g(prob, func, w_n, d, gamma, eta_n, tmp)) <= tol and gamma > gamma_min:
        return gamma, True

    npts = 65
    grid = np.linspace(lo, hi, npts)
    vals = np.empty(npts)
    for i in range(npts):
        vals[i] = _g(prob, func, w_n, d, grid[i], eta_n, tmp)
    # candidate brackets ordered by distance to one
    keys = np.full(npts, math.inf)
    for i in range(npts - 1):
        if vals[i] == 0.0 or (vals[i] > 0.0) != (vals[i + 1] > 0.0):
            keys[i] = min(abs(grid[i] - 1.0), abs(grid[i + 1] - 1.0))
            if vals[i] == 0.0:
                keys[i] = abs(grid[i] - 1.0)
    if vals[npts - 1] == 0.0:
        keys[npts - 1] = abs(hi - 1.0)
    order = np.argsort(keys, kind="mergesort")
    for idx in order:
        if keys[idx] == math.inf:
            break
        a = grid[idx]
        ga = vals[idx]
        if ga == 0.0:
            root, groot = a, 0.0
        else:
            b = grid[idx + 1]
            root, groot = a, ga
            glo = ga
            for _ in range(200):
                mid = 0.5 * (a + b)
                if mid <= a or mid >= b:
                    break
                gm = _g(prob, func, w_n, d, mid, eta_n, tmp)
                if abs(gm) < abs(groot):
                    root, groot = mid, gm
                if gm == 0.0:
                    break
                if (gm > 0.0) == (glo > 0.0):
                    a, glo = mid, gm
                else:
                    b = mid
        if abs(groot) <= tol and root > gamma_min:
            return root, True
    return 1.0, False


@njit(cache=True)
def _taylor_coeffs(theta, m, out):
    fact = 1.0
    pw = 1.0
    for d in range(1, m + 1):
        fact *= d
        pw *= theta
        sign = 1.0 if d % 2 == 1 else -1.0
        out[d - 1] = sign * pw / fact


@njit(cache=True)
def hbpc_step(prob, w_n, dt, c, B, b, stiff, kmax, per_stage, serial, tol, max_iter,
              accept, w_out):
    """One HBPC step into ``w_out``; returns ``(status, newton_iters, failures)``."""
    m, s, _ = B.shape
    n = w_n.shape[0]
    coeffs = np.empty(m)
    dtp = np.empty(m)
    for d in range(m):
        dtp[d] = dt ** (d + 1)
    st = np.empty((s, n))
    tw = np.empty((m, s, n))
    st_new = np.empty((s, n))
    tw_new = np.empty((m, s, n))
    tmp = np.empty((m, n))
    rhs = np.empty(n)
    x = np.empty(n)
    iters = 0
    fails = 0
    # predictor
    for l in range(s):
        if c[l] == 0.0:
            for i in range(n):
                st[l, i] = w_n[i]
        else:
            _taylor_coeffs(c[l] * dt, m, coeffs)
            for i in range(n):
                x[i] = w_n[i]
            status, it = taylor_newton(prob, w_n, coeffs, x, tol, max_iter)
            iters += it
            if status != NEWTON_OK:
                if status != NEWTON_DIVERGED or not accept:
                    return STAGE_FAILED, iters, fails
                fails += 1
            for i in range(n):
                st[l, i] = x[i]
        if not towers(prob, st[l], m, tmp):
            return SINGULAR, iters, fails
        for d in range(m):
            for i in range(n):
                tw[d, l, i] = tmp[d, i]
    # correctors
    for k in range(kmax):
        for d in range(m):
            for l in range(s):
                for i in range(n):
                    tw_new[d, l, i] = tw[d, l, i]
        for l in range(s):
            theta = c[l] * dt if per_stage else dt
            _taylor_coeffs(theta, m, coeffs)
            for i in range(n):
                acc = w_n[i]
                for d in range(m):
                    q = 0.0
                    for j in range(s):
                        q += B[d, l, j] * (tw_new[d, j, i] if serial else tw[d, j, i])
                    acc += dtp[d] * q - coeffs[d] * tw[d, l, i]
                rhs[i] = acc
                x[i] = st[l, i]
            status, it = taylor_newton(prob, rhs, coeffs, x, tol, max_iter)
            iters += it
            if status != NEWTON_OK:
                if status != NEWTON_DIVERGED or not accept:
                    return STAGE_FAILED, iters, fails
                fails += 1
            for i in range(n):
                st_new[l, i] = x[i]
            if not towers(prob, x, m, tmp):
                return SINGULAR, iters, fails
            for d in range(m):
                for i in range(n):
                    tw_new[d, l, i] = tmp[d, i]
        if k == kmax - 1 and not stiff:
            # keep level kmax-1 towers in tw_new's place for the update below
            for l in range(s):
                for i in range(n):
                    st[l, i] = st_new[l, i]
            break
        for l in range(s):
            for i in range(n):
                st[l, i] = st_new[l, i]
        for d in range(m):
            for l in range(s):
                for i in range(n):
                    tw[d, l, i] = tw_new[d, l, i]
    if stiff:
        for i in range(n):
            w_out[i] = st[s - 1, i]
        return OK, iters, fails
    # general update: difference over the last stage plus b-quadrature of the
    # previous level (tw); at kmax = 0 the difference vanishes
    theta = c[s - 1] * dt if per_stage else dt
    _taylor_coeffs(theta, m, coeffs)
    for i in range(n):
        acc = w_n[i]
        for d in range(m):
            q = 0.0
            for j in range(s):
                q += b[d, j] * tw[d, j, i]
            acc += dtp[d] * q
            if kmax > 0:
                acc += coeffs[d] * (tw_new[d, s - 1, i] - tw[d, s - 1, i])
        w_out[i] = acc
    return OK, iters, fails


@njit(cache=True)
def integrate(prob, func, w0, c, B, b, stiff, kmax, per_stage, serial, tol, max_iter, accept,
              relaxed, rtol, rmax_iter, lo, hi, gamma_min, dt, T_end, end_tol,
              ts, ws, etas, gammas, iters_out, fails_out):
    """March to ``T_end``; fills the record arrays, returns ``(count, status, t_fail)``."""
    n = w0.shape[0]
    w = w0.copy()
    w_next = np.empty(n)
    d = np.empty(n)
    t = 0.0
    count = 0
    cap = ts.shape[0]
    while t < T_end - end_tol:
        if count >= cap:
            return count, STAGE_FAILED, t
        h = min(dt, T_end - t)
        last = h < dt or t + h >= T_end - end_tol
        status, it, fl = hbpc_step(prob, w, h, c, B, b, stiff, kmax, per_stage, serial,
                                   tol, max_iter, accept, w_next)
        if status != OK:
            return count, status, t
        gamma = 1.0
        if relaxed:
            nz = False
            for i in range(n):
                d[i] = w_next[i] - w[i]
                if d[i] != 0.0:
                    nz = True
            if nz:
                gamma, found = solve_gamma(prob, func, w, d, rtol, rmax_iter, lo, hi, gamma_min)
                if not found:
                    return count, ROOT_NOT_FOUND, t
                for i in range(n):
                    w_next[i] = w[i] + gamma * d[i]
            t_new = t + gamma * h
        else:
            t_new = T_end if last else t + h
        for i in range(n):
            w[i] = w_next[i]
            ws[count, i] = w[i]
        ts[count] = t_new
        etas[count] = eta(prob, func, w)
        gammas[count] = gamma
        iters_out[count] = it
        fails_out[count] = fl
        count += 1
        t = t_new
        if last:
            break
    return count, OK, t
