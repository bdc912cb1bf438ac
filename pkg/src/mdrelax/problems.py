"""Autonomous test problems with hand-coded time-derivative towers.

Every state function accepts either a single state of shape ``(dim,)`` or a
batch of shape ``(N, dim)``; components are taken along the last axis.  The
integrators rely on this to evaluate finite-difference Jacobians in one call.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ReferenceDivergence, SingularState

EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class IVP:
    name: str
    dim: int
    w0: np.ndarray
    tower: Callable[[int, np.ndarray], np.ndarray]
    m_max: int
    eta: Callable[[np.ndarray], np.ndarray]
    eta_grad: Callable[[np.ndarray], np.ndarray]
    exact: Callable[[float], np.ndarray] | None = None
    tower_jacobian: Callable[[int, np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def phi(self, w):
        return self.tower(1, w)

    def towers(self, w, m):
        """Stack ``F_1..F_m`` at ``w``; result has shape ``(m,) + w.shape``."""
        if m > self.m_max:
            raise ValueError(f"{self.name} provides only {self.m_max} derivatives, need {m}")
        return np.stack([self.tower(d, w) for d in range(1, m + 1)])


def _check_order(d, m_max):
    if not 1 <= d <= m_max:
        raise ValueError(f"derivative order {d} outside 1..{m_max}")


# -- nonlinear oscillator ---------------------------------------------------

def _osc_tower(d, w):
    _check_order(d, 3)
    w = np.asarray(w, dtype=float)
    x, y = w[..., 0], w[..., 1]
    rho = x * x + y * y
    if np.any(rho == 0):
        raise SingularState("oscillator field is singular at the origin")
    # rho is a first integral of the flow, hence F_d = R^d w / rho^d with R the
    # quarter rotation (x, y) -> (-y, x)
    if d == 1:
        v = np.stack([-y, x], axis=-1)
    elif d == 2:
        v = -w
    else:
        v = np.stack([y, -x], axis=-1)
    return v / (rho ** d)[..., None]


def _osc_tower_jacobian(d, w):
    _check_order(d, 3)
    w = np.asarray(w, dtype=float)
    rho = float(w @ w)
    if rho == 0:
        raise SingularState("oscillator field is singular at the origin")
    rot = np.linalg.matrix_power(np.array([[0.0, -1.0], [1.0, 0.0]]), d)
    return rot / rho**d - d * np.outer(rot @ w, 2.0 * w) / rho ** (d + 1)


def _osc_eta(w):
    w = np.asarray(w, dtype=float)
    return np.sum(w * w, axis=-1)


def _osc_eta_grad(w):
    return 2.0 * np.asarray(w, dtype=float)


def oscillator_exact(t: float) -> np.ndarray:
    return np.array([math.cos(t), math.sin(t)])


def oscillator() -> IVP:
    """w' = (-w2, w1) / |w|^2, w(0) = (1, 0), conserving eta = |w|^2."""
    return IVP(
        name="oscillator",
        dim=2,
        w0=np.array([1.0, 0.0]),
        tower=_osc_tower,
        m_max=3,
        eta=_osc_eta,
        eta_grad=_osc_eta_grad,
        exact=oscillator_exact,
        tower_jacobian=_osc_tower_jacobian,
        meta={"kernel": (0, 0)},
    )


# -- Kepler two-body problem ----------------------------------------------

def _kepler_tower(d, w):
    _check_order(d, 3)
    w = np.asarray(w, dtype=float)
    q, p = w[..., :2], w[..., 2:]
    r2 = np.sum(q * q, axis=-1)
    if np.any(r2 == 0):
        raise SingularState("Kepler field is singular at w1 = w2 = 0")
    r2 = r2[..., None]
    r = np.sqrt(r2)
    r3 = r2 * r
    acc = -q / r3
    if d == 1:
        return np.concatenate([p, acc], axis=-1)
    s = np.sum(q * p, axis=-1)[..., None]
    r5 = r3 * r2
    jerk = -p / r3 + 3.0 * s * q / r5
    if d == 2:
        return np.concatenate([acc, jerk], axis=-1)
    pp = np.sum(p * p, axis=-1)[..., None]
    snap = -2.0 * q / (r3 * r3) + 6.0 * s * p / r5 + 3.0 * pp * q / r5 - 15.0 * s * s * q / (r5 * r2)
    return np.concatenate([jerk, snap], axis=-1)


def angular_momentum(w):
    w = np.asarray(w, dtype=float)
    return w[..., 0] * w[..., 3] - w[..., 1] * w[..., 2]


def angular_momentum_grad(w):
    w = np.asarray(w, dtype=float)
    return np.stack([w[..., 3], -w[..., 2], -w[..., 1], w[..., 0]], axis=-1)


def hamiltonian(w):
    w = np.asarray(w, dtype=float)
    q, p = w[..., :2], w[..., 2:]
    return 0.5 * np.sum(p * p, axis=-1) - 1.0 / np.sqrt(np.sum(q * q, axis=-1))


def hamiltonian_grad(w):
    w = np.asarray(w, dtype=float)
    q, p = w[..., :2], w[..., 2:]
    r3 = np.sum(q * q, axis=-1)[..., None] ** 1.5
    return np.concatenate([q / r3, p], axis=-1)


KEPLER_FUNCTIONALS = {
    "angular_momentum": (angular_momentum, angular_momentum_grad),
    "hamiltonian": (hamiltonian, hamiltonian_grad),
}


def kepler(functional: str = "angular_momentum") -> IVP:
    """Planar Kepler problem starting at (1/2, 0, 0, sqrt(1/3))."""
    if functional == "default":
        functional = "angular_momentum"
    eta, grad = KEPLER_FUNCTIONALS[functional]
    return IVP(
        name="kepler",
        dim=4,
        w0=np.array([0.5, 0.0, 0.0, math.sqrt(1.0 / 3.0)]),
        tower=_kepler_tower,
        m_max=3,
        eta=eta,
        eta_grad=grad,
        meta={"functional": functional,
              "kernel": (1, 0 if functional == "angular_momentum" else 1)},
    )


def kepler_analytic(t: float, w0=None) -> np.ndarray:
    """Closed-form Kepler orbit through ``w0`` (default: the problem's w0).

    Only used to cross-check the numerical reference; solves Kepler's
    equation by Newton iteration.
    """
    w0 = kepler().w0 if w0 is None else np.asarray(w0, dtype=float)
    q0, p0 = w0[:2], w0[2:]
    r0 = np.linalg.norm(q0)
    energy = 0.5 * p0 @ p0 - 1.0 / r0
    a = -1.0 / (2.0 * energy)
    h = q0[0] * p0[1] - q0[1] * p0[0]
    # eccentricity vector points to periapsis
    evec = np.array([p0[1] * h, -p0[0] * h]) - q0 / r0
    e = np.linalg.norm(evec)
    ehat = evec / e
    perp = np.array([-ehat[1], ehat[0]]) * np.sign(h)
    n = math.sqrt(1.0 / a**3)
    cosE0 = (1.0 - r0 / a) / e
    sinE0 = (q0 @ p0) / (e * math.sqrt(a))
    E0 = math.atan2(sinE0, cosE0)
    M = E0 - e * math.sin(E0) + n * t
    E = M
    for _ in range(100):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < 1e-16:
            break
    b = a * math.sqrt(1.0 - e * e)
    x = a * (math.cos(E) - e)
    y = b * math.sin(E)
    rad = a * (1.0 - e * math.cos(E))
    vx = -math.sqrt(a) * math.sin(E) / rad
    vy = math.sqrt(a) * math.sqrt(1.0 - e * e) * math.cos(E) / rad
    pos = x * ehat + y * perp
    vel = vx * ehat + vy * perp
    return np.concatenate([pos, vel])


PROBLEMS = {"oscillator": oscillator, "kepler": kepler}


def get_problem(name: str, functional: str = "default") -> IVP:
    if name == "oscillator":
        if functional not in ("default", "norm"):
            raise ValueError("oscillator only has the squared-norm functional")
        return oscillator()
    if name == "kepler":
        return kepler(functional)
    raise KeyError(f"unknown problem {name!r}")


# -- finite differences -----------------------------------------------------

def fd_jacobian(f, w, h=None, vectorized=False):
    """Central-difference Jacobian of ``f`` at ``w``.

    With ``vectorized=True`` ``f`` must accept a batch ``(N, dim)`` and all
    2*dim perturbed states are evaluated in a single call.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if h is None:
        h = math.sqrt(EPS) * (1.0 + np.linalg.norm(w))
    steps = h * np.eye(n)
    if vectorized:
        vals = f(np.concatenate([w + steps, w - steps]))
        return ((vals[:n] - vals[n:]) / (2.0 * h)).T
    cols = [(np.asarray(f(w + e)) - np.asarray(f(w - e))) / (2.0 * h) for e in steps]
    return np.stack(cols, axis=-1)


def fd_directional(f, w, v, h=None):
    """Central difference of ``f`` at ``w`` in direction ``v``."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        return np.zeros_like(np.asarray(f(w)))
    if h is None:
        h = EPS ** (1 / 3) * (1.0 + np.linalg.norm(w)) / nv
    return (np.asarray(f(w + h * v)) - np.asarray(f(w - h * v))) / (2.0 * h)


# -- reference solutions ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    kind: str  # "exact" | "numerical"
    eval: Callable[[float], np.ndarray]
    provenance: dict = field(default_factory=dict)


def exact_reference(ivp: IVP) -> ReferenceSolution:
    if ivp.exact is None:
        raise ValueError(f"{ivp.name} has no closed-form solution")
    return ReferenceSolution("exact", ivp.exact, {"method": "closed form"})


class _SampledTrajectory:
    """Piecewise polynomial interpolation through uniformly spaced samples."""

    def __init__(self, times, states, degree=8):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.degree = degree

    def __call__(self, t):
        times = self.times
        npts = self.degree + 1
        i = int(np.searchsorted(times, t))
        if i < len(times) and times[i] == t:
            return self.states[i].copy()
        if t < times[0] - 1e-14 or t > times[-1] + 1e-14:
            raise ValueError(f"t={t} outside reference range [{times[0]}, {times[-1]}]")
        lo = min(max(i - npts // 2, 0), len(times) - npts)
        ts = times[lo:lo + npts]
        ys = self.states[lo:lo + npts]
        # barycentric Lagrange interpolation
        diff = ts[:, None] - ts[None, :]
        np.fill_diagonal(diff, 1.0)
        wts = 1.0 / np.prod(diff, axis=1)
        terms = wts / (t - ts)
        return (terms @ ys) / np.sum(terms)


def cache_dir() -> Path:
    env = os.environ.get("MDRELAX_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "mdrelax"


REFERENCE_TABLEAU = "HB-I2DRK8-4s"
REFERENCE_STEPS = 20000


REFERENCE_OVERHANG = 16
REFERENCE_NEWTON_TOL = 1e-16


def _reference_run(ivp, T_end, nsteps):
    from .hbpc import background_rk_increment
    from .solvers import NewtonSettings
    from .tableau import builtin

    tab = builtin(REFERENCE_TABLEAU)
    dt = T_end / nsteps
    newton = NewtonSettings(tol=REFERENCE_NEWTON_TOL)
    # a few steps past T_end so relaxed runs ending slightly late stay in range
    total = nsteps + REFERENCE_OVERHANG
    states = np.empty((total + 1, ivp.dim))
    states[0] = ivp.w0
    w = ivp.w0.copy()
    comp = np.zeros_like(w)
    for n in range(total):
        # compensated (Kahan) accumulation of the increments
        incr = background_rk_increment(ivp, w, dt, tab, newton) - comp
        new = w + incr
        comp = (new - w) - incr
        w = new
        states[n + 1] = w
    times = np.arange(total + 1) * dt
    times[nsteps] = T_end
    return times, states


def kepler_reference(T_end: float, nsteps: int = REFERENCE_STEPS, check_tol: float = 1e-12,
                     use_cache: bool = True) -> ReferenceSolution:
    """Numerical Kepler reference on [0, T_end], cached as JSON.

    Generated with the background eighth-order scheme on ``nsteps`` uniform
    steps and accepted only if halving the step moves the final state by
    less than ``check_tol``.
    """
    if T_end <= 0:
        raise ValueError("T_end must be positive")
    ivp = kepler()
    dt = T_end / nsteps
    key = hashlib.sha1(f"kepler|{T_end!r}|{dt!r}|{REFERENCE_TABLEAU}".encode()).hexdigest()[:16]
    path = cache_dir() / f"kepler_reference_{key}.json"
    doc = None
    if use_cache and path.exists():
        with open(path) as fh:
            doc = json.load(fh)
    if doc is None:
        times, states = _reference_run(ivp, T_end, nsteps)
        _, fine = _reference_run(ivp, T_end, 2 * nsteps)
        change = float(np.linalg.norm(fine[2 * nsteps] - states[nsteps]))
        if not change < check_tol:
            raise ReferenceDivergence(
                f"reference changes by {change:.3e} under step halving (limit {check_tol:g})")
        doc = {
            "problem": "kepler",
            "method": f"background {REFERENCE_TABLEAU}",
            "dt": dt,
            "T_end": T_end,
            "richardson_change": change,
            "times": times.tolist(),
            "states": states.tolist(),
        }
        if use_cache:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w") as fh:
                json.dump(doc, fh)
            os.replace(tmp, path)
    interp = _SampledTrajectory(doc["times"], doc["states"])
    prov = {k: doc[k] for k in ("problem", "method", "dt", "T_end", "richardson_change")}
    return ReferenceSolution("numerical", interp, prov)


def reference_for(ivp: IVP, T_end: float) -> ReferenceSolution:
    if ivp.exact is not None:
        return exact_reference(ivp)
    if ivp.name == "kepler":
        return kepler_reference(T_end)
    raise ValueError(f"no reference available for {ivp.name}")
