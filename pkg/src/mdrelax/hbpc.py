"""Hermite-Birkhoff predictor-corrector (HBPC) steps.

One step from ``w_n`` proceeds as

* predict: every stage solves an implicit Taylor equation of order ``m``
  centred at its own node ``c_l``;
* correct (``kmax`` sweeps): every stage solves the same implicit Taylor
  operator, now driven by the difference to the previous iterate plus the
  Hermite-Birkhoff quadrature of the previous iterate;
* update: explicit, and simply the last stage for stiffly accurate tableaux.

The sweeps converge to the fully implicit multiderivative Runge-Kutta
scheme, which ``background_rk_step`` solves directly.  It is not used by the
integrator itself, only as a test oracle and reference generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BackgroundSolveFailed, CorrectorFailed, NewtonDiverged,
                     PredictorFailed, SingularJacobian)
from .problems import IVP
from .solvers import NewtonSettings, damped_newton
from .tableau import MDTableau

CORRECTOR_SCALINGS = ("global", "per-stage")
QUADRATURE_SOURCES = ("iterate-k", "serial-sweep")
NEWTON_FAILURE_POLICIES = ("accept", "raise")


@dataclass(frozen=True)
class HBPCConfig:
    tableau: MDTableau
    kmax: int = 4
    corrector_scaling: str = "global"
    quadrature_source: str = "iterate-k"
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    # "accept" keeps the best Newton iterate of a non-converged stage solve
    # and counts the event; "raise" aborts the step
    on_newton_failure: str = "accept"

    def __post_init__(self):
        if self.kmax < 0:
            raise ValueError("kmax must be >= 0")
        if self.on_newton_failure not in NEWTON_FAILURE_POLICIES:
            raise ValueError(f"on_newton_failure must be one of {NEWTON_FAILURE_POLICIES}")
        if self.corrector_scaling not in CORRECTOR_SCALINGS:
            raise ValueError(f"corrector_scaling must be one of {CORRECTOR_SCALINGS}")
        if self.quadrature_source not in QUADRATURE_SOURCES:
            raise ValueError(f"quadrature_source must be one of {QUADRATURE_SOURCES}")

    @property
    def order(self) -> int:
        """Expected convergence order ``min(kmax + m, q)``."""
        return min(self.kmax + self.tableau.m, self.tableau.q)

    @property
    def label(self) -> str:
        t = self.tableau
        return f"HBPC({t.m},{t.q},{self.kmax})"


@dataclass
class StageBlock:
    k: int
    stages: np.ndarray  # (s, dim)
    towers: np.ndarray  # (m, s, dim); towers[d-1, l] = F_d(stages[l])
    newton_iters: int = 0
    newton_failures: int = 0


@dataclass
class RunRecord:
    t: float
    w: np.ndarray
    eta: float
    gamma: float = 1.0
    newton_iters: int = 0
    error: float | None = None
    phase_iters: tuple = ()
    newton_failures: int = 0


def taylor_coefficients(theta: float, m: int) -> np.ndarray:
    """Coefficients ``(-1)**(d-1) * theta**d / d!`` for d = 1..m."""
    return np.array([(-1) ** (d - 1) * theta**d / math.factorial(d) for d in range(1, m + 1)])


def _dt_powers(dt, m):
    return dt ** np.arange(1, m + 1)


def _implicit_taylor_solve(ivp: IVP, rhs, coeffs, guess, newton: NewtonSettings):
    """Solve ``w - sum_d coeffs[d] F_d(w) = rhs`` for ``w``."""
    m = len(coeffs)

    def residual(w):
        return w - rhs - np.tensordot(coeffs, ivp.towers(w, m), axes=1)

    jac = None
    if ivp.tower_jacobian is not None and newton.jacobian_mode == "analytic":
        eye = np.eye(ivp.dim)

        def jac(w):
            return eye - sum(c * ivp.tower_jacobian(d, w) for d, c in enumerate(coeffs, 1))

    return damped_newton(residual, guess, newton, jacobian=jac, vectorized=True)


def _stage_solve(ivp, rhs, coeffs, guess, cfg, make_error):
    """Returns ``(w, iterations, failed)``; raises ``make_error(exc)`` in "raise" mode."""
    try:
        w, it = _implicit_taylor_solve(ivp, rhs, coeffs, guess, cfg.newton)
        return w, it, False
    except NewtonDiverged as exc:
        if cfg.on_newton_failure == "raise" or exc.x is None:
            raise make_error(exc) from exc
        return exc.x, exc.iterations, True
    except SingularJacobian as exc:
        raise make_error(exc) from exc


def _block(ivp, k, stages, m, iters, fails=0):
    return StageBlock(k, stages, ivp.towers(stages, m), iters, fails)


def predict(ivp: IVP, w_n, dt: float, cfg: HBPCConfig) -> StageBlock:
    tab = cfg.tableau
    if dt <= 0:
        raise ValueError("dt must be positive")
    w_n = np.asarray(w_n, dtype=float)
    stages = np.empty((tab.s, ivp.dim))
    iters = fails = 0
    for l, cl in enumerate(tab.c):
        if cl == 0:
            stages[l] = w_n
            continue
        coeffs = taylor_coefficients(cl * dt, tab.m)
        stages[l], it, failed = _stage_solve(
            ivp, w_n, coeffs, w_n, cfg, lambda exc: PredictorFailed(l + 1, exc))
        iters += it
        fails += failed
    return _block(ivp, 0, stages, tab.m, iters, fails)


def quadrature(block: StageBlock, dt: float, tableau: MDTableau, l: int | None = None):
    """``sum_d dt**d sum_j B[d][l, j] F_d(w_j)`` for stage ``l`` (0-based), or all stages."""
    dtp = _dt_powers(dt, tableau.m)
    if l is None:
        return np.einsum("d,dlj,djk->lk", dtp, tableau.B, block.towers)
    return np.einsum("d,dj,djk->k", dtp, tableau.B[:, l, :], block.towers)


def _stage_theta(cfg, dt, l):
    if cfg.corrector_scaling == "global":
        return dt
    return cfg.tableau.c[l] * dt


def correct(ivp: IVP, w_n, dt: float, cfg: HBPCConfig, block_k: StageBlock) -> StageBlock:
    tab = cfg.tableau
    w_n = np.asarray(w_n, dtype=float)
    serial = cfg.quadrature_source == "serial-sweep"
    quad = None if serial else quadrature(block_k, dt, tab)
    towers = block_k.towers.copy()
    stages = np.empty_like(block_k.stages)
    iters = fails = 0
    for l in range(tab.s):
        coeffs = taylor_coefficients(_stage_theta(cfg, dt, l), tab.m)
        # serial sweep: stages j < l already hold iterate k+1 in `towers`
        I_l = quadrature(StageBlock(block_k.k, stages, towers), dt, tab, l) if serial else quad[l]
        rhs = w_n + I_l - coeffs @ block_k.towers[:, l, :]
        w, it, failed = _stage_solve(
            ivp, rhs, coeffs, block_k.stages[l], cfg,
            lambda exc: CorrectorFailed(l + 1, block_k.k, exc))
        stages[l] = w
        iters += it
        fails += failed
        if serial:
            towers[:, l, :] = ivp.towers(w, tab.m)
    return _block(ivp, block_k.k + 1, stages, tab.m, iters, fails)


def update(ivp: IVP, w_n, dt: float, cfg: HBPCConfig, block_last: StageBlock,
           block_prev: StageBlock | None = None) -> np.ndarray:
    """Explicit update; ``block_prev`` defaults to ``block_last`` (the kmax = 0 case)."""
    tab = cfg.tableau
    if tab.stiffly_accurate():
        return block_last.stages[-1].copy()
    if block_prev is None:
        block_prev = block_last
    s = tab.s - 1
    coeffs = taylor_coefficients(_stage_theta(cfg, dt, s), tab.m)
    diff = coeffs @ (block_last.towers[:, s, :] - block_prev.towers[:, s, :])
    quad_b = np.einsum("d,dj,djk->k", _dt_powers(dt, tab.m), tab.b, block_prev.towers)
    return np.asarray(w_n, dtype=float) + diff + quad_b


def hbpc_step(ivp: IVP, w_n, t_n: float, dt: float, cfg: HBPCConfig):
    """One HBPC step; returns ``(w_next, RunRecord)`` with unrelaxed values."""
    if ivp.m_max < cfg.tableau.m:
        raise ValueError(f"{ivp.name} supplies {ivp.m_max} derivatives, tableau needs {cfg.tableau.m}")
    block = predict(ivp, w_n, dt, cfg)
    prev = None
    phase = [block.newton_iters]
    fails = block.newton_failures
    for _ in range(cfg.kmax):
        prev, block = block, correct(ivp, w_n, dt, cfg, block)
        phase.append(block.newton_iters)
        fails += block.newton_failures
    w_next = update(ivp, w_n, dt, cfg, block, prev)
    rec = RunRecord(t=t_n + dt, w=w_next, eta=float(ivp.eta(w_next)),
                    newton_iters=sum(phase), phase_iters=tuple(phase),
                    newton_failures=fails)
    return w_next, rec


def background_rk_increment(ivp: IVP, w_n, dt: float, tableau: MDTableau,
                            newton: NewtonSettings = NewtonSettings()) -> np.ndarray:
    """Increment ``w_{n+1} - w_n`` of the fully implicit multiderivative RK step.

    The coupled stage system is solved for the stage increments ``W_l - w_n``
    rather than the stages, which keeps the Newton residual free of the
    rounding error of ``w_n``.
    """
    s, m, dim = tableau.s, tableau.m, ivp.dim
    w_n = np.asarray(w_n, dtype=float)
    dtp = _dt_powers(dt, m)
    B = tableau.B

    def residual(Z):
        Zs = Z.reshape(Z.shape[:-1] + (s, dim))
        F = ivp.towers(w_n + Zs, m)
        return (Zs - np.einsum("d,dlj,d...jk->...lk", dtp, B, F)).reshape(Z.shape)

    guess = np.outer(tableau.c * dt, ivp.phi(w_n))
    try:
        Z, _ = damped_newton(residual, guess.ravel(), newton, vectorized=True)
    except (NewtonDiverged, SingularJacobian) as exc:
        raise BackgroundSolveFailed(f"coupled stage solve failed: {exc}") from exc
    F = ivp.towers(w_n + Z.reshape(s, dim), m)
    return np.einsum("d,dj,djk->k", dtp, tableau.b, F)


def background_rk_step(ivp: IVP, w_n, dt: float, tableau: MDTableau,
                       newton: NewtonSettings = NewtonSettings()) -> np.ndarray:
    """Fully implicit multiderivative RK step (all stages coupled)."""
    return np.asarray(w_n, dtype=float) + background_rk_increment(ivp, w_n, dt, tableau, newton)
