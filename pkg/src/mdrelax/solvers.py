"""Damped Newton for stage equations and a safeguarded scalar root finder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import MDRelaxError, NewtonDiverged, RelaxationRootNotFound, SingularJacobian
from .problems import fd_jacobian

MIN_DAMPING = 2.0**-30


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-14
    max_iter: int = 1000
    jacobian_mode: str = "finite-difference"  # or "analytic"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.jacobian_mode not in ("finite-difference", "analytic"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass(frozen=True)
class RootSettings:
    tol: float = 1e-14
    max_iter: int = 100
    bracket: tuple[float, float] = (0.5, 1.5)
    gamma_min: float = 0.1

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo < 1.0 < hi:
            raise ValueError("bracket must contain 1")
        if not self.gamma_min < lo:
            raise ValueError("gamma_min must lie below the bracket")


def _norm(r):
    return math.sqrt(float(np.dot(r, r)))


def _safe_residual(residual, x):
    try:
        r = np.asarray(residual(x), dtype=float)
    except (MDRelaxError, ArithmeticError, FloatingPointError):
        return None, math.inf
    nr = _norm(r)
    return r, (nr if math.isfinite(nr) else math.inf)


def damped_newton(residual: Callable, x0, settings: NewtonSettings = NewtonSettings(),
                  jacobian: Callable | None = None, vectorized: bool = False):
    """Solve ``residual(x) = 0`` from ``x0``.

    Each Newton direction is scaled by the largest ``2**-i`` that lowers the
    Euclidean residual norm.  Without ``jacobian`` (or in finite-difference
    mode) a central-difference Jacobian is used; ``vectorized`` declares that
    ``residual`` accepts a batch of states stacked along axis 0.

    Returns ``(x, iterations)``.
    """
    x = np.array(x0, dtype=float)
    r, nr = _safe_residual(residual, x)
    if r is None:
        raise NewtonDiverged("residual undefined at the initial guess", x, nr, 0)
    use_analytic = jacobian is not None and settings.jacobian_mode == "analytic"
    for it in range(settings.max_iter):
        if nr <= settings.tol:
            return x, it
        J = jacobian(x) if use_analytic else fd_jacobian(residual, x, vectorized=vectorized)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        lam = 1.0
        while True:
            xt = x + lam * dx
            rt, nrt = _safe_residual(residual, xt)
            if nrt < nr:
                break
            lam *= 0.5
            if lam < MIN_DAMPING:
                raise NewtonDiverged(
                    f"damping underflow at iteration {it + 1}, |r| = {nr:.3e}", x, nr, it + 1)
        x, r, nr = xt, rt, nrt
    if nr <= settings.tol:
        return x, settings.max_iter
    raise NewtonDiverged(
        f"no convergence in {settings.max_iter} iterations, |r| = {nr:.3e}",
        x, nr, settings.max_iter)


def _bisect(g, lo, hi, glo, settings):
    """Bisection on a sign-change bracket down to adjacent floats."""
    best, gbest = (lo, glo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if abs(gm) < abs(gbest):
            best, gbest = mid, gm
        if gm == 0:
            break
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return best, gbest


def solve_gamma(g: Callable[[float], float], g_prime: Callable[[float], float],
                settings: RootSettings = RootSettings()) -> float:
    """Root of the relaxation equation ``g`` closest to one.

    Newton starts from 1 and is iterated until the update stalls, so the
    result is accurate well below ``settings.tol`` when ``g'`` is small.  If
    Newton leaves the bracket, the bracket is scanned for sign changes and
    the one nearest 1 is bisected.
    """
    lo, hi = settings.bracket
    gamma = 1.0
    for _ in range(settings.max_iter):
        gv = g(gamma)
        dg = g_prime(gamma)
        if gv == 0:
            break
        if dg == 0 or not math.isfinite(dg) or not math.isfinite(gv):
            gamma = None
            break
        step = gv / dg
        new = gamma - step
        if not lo <= new <= hi:
            gamma = None
            break
        converged = abs(step) <= 4 * np.finfo(float).eps * max(1.0, abs(new))
        gamma = new
        if converged:
            break
    if gamma is not None and abs(g(gamma)) <= settings.tol and gamma > settings.gamma_min:
        return float(gamma)

    grid = np.linspace(lo, hi, 65)
    vals = [g(x) for x in grid]
    candidates = []
    for a, b, ga, gb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if ga == 0:
            candidates.append((abs(a - 1.0), a, a, ga))
        elif (ga > 0) != (gb > 0):
            candidates.append((min(abs(a - 1.0), abs(b - 1.0)), a, b, ga))
    if vals[-1] == 0:
        candidates.append((abs(hi - 1.0), hi, hi, 0.0))
    for _, a, b, ga in sorted(candidates):
        root, groot = (a, ga) if a == b else _bisect(g, a, b, ga, settings)
        if abs(groot) <= settings.tol and root > settings.gamma_min:
            return float(root)
    raise RelaxationRootNotFound(
        f"no root of the relaxation equation in [{lo}, {hi}] (g(1) = {g(1.0):.3e})")
