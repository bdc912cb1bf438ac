"""Relaxation of HBPC steps so that a conserved functional stays constant.

After an ordinary step ``w_n -> w_next`` the relaxed state is
``w_n + gamma * (w_next - w_n)`` with ``gamma`` chosen so that ``eta`` takes
its old value, and time advances by ``gamma * dt`` instead of ``dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (MDRelaxError, NewtonDiverged, RelaxationRootNotFound, SingularState,
                     StepFailed)
from .hbpc import HBPCConfig, RunRecord, hbpc_step
from .problems import IVP
from .solvers import RootSettings, solve_gamma

END_TOL = 1e-12


@dataclass
class RelaxedStep:
    gamma: float
    w_relaxed: np.ndarray
    t_next: float | None = None
    eta_drift: float | None = None


def relax(ivp: IVP, w_n, w_next, settings: RootSettings = RootSettings()) -> RelaxedStep:
    """Project ``w_next`` back onto the level set of ``eta`` through ``w_n``."""
    w_n = np.asarray(w_n, dtype=float)
    d = np.asarray(w_next, dtype=float) - w_n
    if not np.any(d):
        # degenerate: every gamma preserves eta
        return RelaxedStep(1.0, w_n.copy())
    eta_n = float(ivp.eta(w_n))

    def g(gamma):
        return float(ivp.eta(w_n + gamma * d)) - eta_n

    def g_prime(gamma):
        return float(ivp.eta_grad(w_n + gamma * d) @ d)

    gamma = solve_gamma(g, g_prime, settings)
    return RelaxedStep(gamma, w_n + gamma * d)


@dataclass
class Trajectory:
    records: list
    t_final: float
    completed: bool = True

    @property
    def final(self) -> RunRecord:
        return self.records[-1]

    def times(self):
        return np.array([r.t for r in self.records])

    def states(self):
        return np.array([r.w for r in self.records])


BACKENDS = ("auto", "python", "compiled")


def integrate(ivp: IVP, cfg: HBPCConfig, dt: float, T_end: float, relaxed: bool = False,
              root_settings: RootSettings = RootSettings(), reference=None,
              include_initial: bool = False, backend: str = "auto",
              errors: str = "all") -> Trajectory:
    """March from ``ivp.w0`` at t = 0 to ``T_end`` with nominal step ``dt``.

    The last step is shortened to land on ``T_end``; with relaxation the run
    stops after that step even though the achieved time is only within
    O(dt**(p+1)) of ``T_end``.  ``reference`` (a callable t -> state) fills
    the ``error`` field of every record, or only the last one when
    ``errors="final"``.

    ``backend="auto"`` uses the compiled loop for the built-in problems with
    finite-difference Jacobians and the Python implementation otherwise.

    Solver failures raise ``StepFailed``; a missing relaxation root raises
    ``RelaxationRootNotFound``.  Both carry ``t`` and the partial ``records``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T_end <= 0:
        raise ValueError("T_end must be positive")
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if errors not in ("all", "final"):
        raise ValueError("errors must be 'all' or 'final'")
    compiled_ok = "kernel" in ivp.meta and cfg.newton.jacobian_mode == "finite-difference"
    if backend == "compiled" and not compiled_ok:
        raise ValueError(f"no compiled kernel for {ivp.name} with these settings")
    if ivp.m_max < cfg.tableau.m:
        raise ValueError(f"{ivp.name} supplies {ivp.m_max} derivatives, tableau needs {cfg.tableau.m}")
    run = _run_compiled if backend != "python" and compiled_ok else _run_python
    w0 = np.array(ivp.w0, dtype=float)
    records = []
    if include_initial:
        records.append(RunRecord(t=0.0, w=w0.copy(), eta=float(ivp.eta(w0))))
    try:
        run(ivp, cfg, dt, T_end, relaxed, root_settings, records)
    except (RelaxationRootNotFound, StepFailed) as exc:
        _fill_errors(exc.records, reference, errors)
        raise
    _fill_errors(records, reference, errors)
    return Trajectory(records, records[-1].t if records else 0.0)


def _fill_errors(records, reference, mode):
    if reference is None or not records:
        return
    todo = records if mode == "all" else records[-1:]
    for rec in todo:
        rec.error = _error(reference, rec.t, rec.w)


def _run_python(ivp, cfg, dt, T_end, relaxed, root_settings, records):
    w = np.array(ivp.w0, dtype=float)
    t = 0.0
    while t < T_end - END_TOL:
        h = min(dt, T_end - t)
        last = h < dt or t + h >= T_end - END_TOL
        try:
            w_next, rec = hbpc_step(ivp, w, t, h, cfg)
            if relaxed:
                step = relax(ivp, w, w_next, root_settings)
                w_next = step.w_relaxed
                rec.gamma = step.gamma
                rec.t = t + step.gamma * h
                rec.w = w_next
                rec.eta = float(ivp.eta(w_next))
            else:
                rec.t = T_end if last else t + h
        except RelaxationRootNotFound as exc:
            exc.t, exc.records = t, records
            raise
        except MDRelaxError as exc:
            raise StepFailed(t, exc, records) from exc
        records.append(rec)
        w, t = w_next, rec.t
        if last:
            break


def _run_compiled(ivp, cfg, dt, T_end, relaxed, root_settings, records):
    from . import _kernels as K

    prob, func = ivp.meta["kernel"]
    tab = cfg.tableau
    lo, hi = root_settings.bracket
    # relaxed steps advance at least lo * dt
    cap = int(math.ceil(T_end / (dt * (lo if relaxed else 1.0)))) + 2
    dim = ivp.dim
    ts = np.empty(cap)
    ws = np.empty((cap, dim))
    etas = np.empty(cap)
    gammas = np.empty(cap)
    iters = np.empty(cap, dtype=np.int64)
    fails = np.empty(cap, dtype=np.int64)
    count, status, t_fail = K.integrate(
        prob, func, np.array(ivp.w0, dtype=float), np.ascontiguousarray(tab.c),
        np.ascontiguousarray(tab.B), np.ascontiguousarray(tab.b), tab.stiffly_accurate(),
        cfg.kmax, cfg.corrector_scaling == "per-stage",
        cfg.quadrature_source == "serial-sweep", cfg.newton.tol, cfg.newton.max_iter,
        cfg.on_newton_failure == "accept", relaxed, root_settings.tol,
        root_settings.max_iter, lo, hi, root_settings.gamma_min, dt, T_end, END_TOL,
        ts, ws, etas, gammas, iters, fails)
    for i in range(count):
        records.append(RunRecord(t=float(ts[i]), w=ws[i].copy(), eta=float(etas[i]),
                                 gamma=float(gammas[i]), newton_iters=int(iters[i]),
                                 newton_failures=int(fails[i])))
    if status == K.OK:
        return
    if status == K.ROOT_NOT_FOUND:
        exc = RelaxationRootNotFound(f"no root of the relaxation equation in [{lo}, {hi}] "
                                     f"at t = {t_fail:.6g}")
        exc.t, exc.records = float(t_fail), records
        raise exc
    if status == K.SINGULAR:
        cause = SingularState(f"{ivp.name} field is singular at a stage state")
    else:
        cause = NewtonDiverged(f"stage solve failed at t = {t_fail:.6g}", None, math.inf, 0)
    raise StepFailed(float(t_fail), cause, records)


def _error(reference, t, w):
    if reference is None:
        return None
    return float(np.linalg.norm(w - reference(t)))
