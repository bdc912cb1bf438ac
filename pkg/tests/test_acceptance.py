"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
"""

from fractions import Fraction as F

import numpy as np
import pytest

from conftest import BUILTIN_NAMES, random_states
from mdrelax.errors import RelaxationRootNotFound
from mdrelax.harness import RunSpec, cmd_convergence, loglog_slope
from mdrelax.hbpc import HBPCConfig, background_rk_step, hbpc_step
from mdrelax.problems import fd_directional, fd_jacobian, kepler, oscillator, oscillator_exact
from mdrelax.relaxation import integrate
from mdrelax.tableau import builtin, hermite_birkhoff_tableau, verify_quadrature_order

RESULTS = []

# (m, q) -> tableau name
TABLEAU = {(2, 6): "HB-I2DRK6-3s", (2, 8): "HB-I2DRK8-4s", (3, 6): "HB-I3DRK6-2s"}


def report(criterion, label, ok, detail=""):
    line = f"acceptance {criterion} {label}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    print(line)
    RESULTS.append(line)
    assert ok, line


def expected_order(name, kmax):
    tab = builtin(name)
    return min(kmax + tab.m, tab.q)


def test_01_tableau_reproduction():
    B = hermite_birkhoff_tableau([0, 1], 3).rational["B"]
    ok = (B[0][1] == [F(1, 2), F(1, 2)] and B[1][1] == [F(1, 10), F(-1, 10)]
          and B[2][1] == [F(1, 120), F(1, 120)] and all(r[0] == [0, 0] for r in B))
    report(1, "two-point three-derivative tableau", ok, f"B rows {[r[1] for r in B]}")


def test_02_quadrature_orders():
    got = [verify_quadrature_order(builtin(n)) for n in BUILTIN_NAMES]
    report(2, "quadrature orders", got == [6, 8, 6], f"{got}")


@pytest.mark.parametrize("kmax", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("mq", list(TABLEAU), ids=lambda mq: f"m{mq[0]}q{mq[1]}")
def test_03_oscillator_order_table(tmp_path, mq, kmax):
    name = TABLEAU[mq]
    rep = cmd_convergence(RunSpec("oscillator", name, kmax, False, None, 10.0,
                                  output_dir=str(tmp_path)))
    p = expected_order(name, kmax)
    report(3, f"HBPC{mq[0], mq[1], kmax}", abs(rep.p_obs - p) <= 0.3,
           f"observed {rep.p_obs:.2f}, expected {p} +- 0.3")


@pytest.mark.parametrize("kmax", [1, 3])
def test_04_odd_even_decoupling(tmp_path, kmax):
    name = TABLEAU[(2, 6)]
    rep = cmd_convergence(RunSpec("oscillator", name, kmax, True, None, 10.0,
                                  output_dir=str(tmp_path)))
    bound = min(expected_order(name, kmax) + 0.7, builtin(name).q)
    report(4, f"relaxed HBPC(2, 6, {kmax})", rep.p_obs >= bound,
           f"observed {rep.p_obs:.2f}, need >= {bound:.1f}")


@pytest.mark.parametrize("relaxed", [False, True], ids=["unrelaxed", "relaxed"])
@pytest.mark.parametrize("kmax", [1, 2, 3])
@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_05_kepler_order_table(tmp_path, name, kmax, relaxed):
    rep = cmd_convergence(RunSpec("kepler", name, kmax, relaxed, None, 5.0,
                                  output_dir=str(tmp_path)))
    p = expected_order(name, kmax)
    tag = "relaxed" if relaxed else "unrelaxed"
    report(5, f"{tag} {name} kmax={kmax}", abs(rep.p_obs - p) <= 0.3,
           f"observed {rep.p_obs:.2f}, expected {p} +- 0.3")


def test_06_oscillator_functional_preserved():
    ivp = oscillator()
    traj = integrate(ivp, HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4), 0.2, 100.0, relaxed=True)
    drift = max(abs(r.eta - 1.0) for r in traj.records)
    report(6, "oscillator max|eta - 1|", drift <= 1e-11, f"{drift:.2e} <= 1e-11")


def test_06_kepler_functional_preserved():
    ivp = kepler()
    eta0 = float(ivp.eta(ivp.w0))
    try:
        traj = integrate(ivp, HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4), 0.05, 10.0,
                         relaxed=True)
    except RelaxationRootNotFound as exc:
        drift = max((abs(r.eta - eta0) for r in exc.records), default=0.0)
        report(6, "kepler max|eta - eta0|", False,
               f"run aborted at t = {exc.t:.4g} (drift so far {drift:.2e})")
    drift = max(abs(r.eta - eta0) for r in traj.records)
    report(6, "kepler max|eta - eta0|", drift <= 1e-12, f"{drift:.2e} <= 1e-12")


def test_07_error_growth_slopes():
    ivp = oscillator()
    cfg = HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4)
    slopes = {}
    for relaxed in (True, False):
        traj = integrate(ivp, cfg, 0.2, 100.0, relaxed=relaxed, reference=oscillator_exact)
        t = traj.times()
        err = np.array([r.error for r in traj.records])
        sel = (t >= 10.0) & (t <= 100.0)
        slopes[relaxed] = loglog_slope(t[sel], err[sel])
    ok = 0.7 <= slopes[True] <= 1.3 and 1.6 <= slopes[False] <= 2.4
    report(7, "error growth", ok,
           f"relaxed {slopes[True]:.3f} in [0.7, 1.3], unrelaxed {slopes[False]:.3f} in [1.6, 2.4]")


def test_08_relaxed_kepler_breaks_down():
    ivp = kepler()
    try:
        traj = integrate(ivp, HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4), 0.5, 10.0,
                         relaxed=True)
        ok, detail = False, f"reached t = {traj.t_final:.4g}"
    except RelaxationRootNotFound as exc:
        ok, detail = exc.t < 10.0, f"RelaxationRootNotFound at t = {exc.t:.4g}"
    report(8, "relaxed kepler dt=0.5", ok, detail)


@pytest.mark.parametrize("problem", [oscillator, kepler], ids=["oscillator", "kepler"])
@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_09_fixed_point_oracle(problem, name):
    ivp = problem()
    tab = builtin(name)
    w, _ = hbpc_step(ivp, ivp.w0, 0.0, 0.1, HBPCConfig(tab, kmax=30))
    diff = float(np.max(np.abs(w - background_rk_step(ivp, ivp.w0, 0.1, tab))))
    report(9, f"{ivp.name} {name}", diff <= 1e-12, f"{diff:.2e} <= 1e-12")


def test_10_gamma_scaling():
    ivp = oscillator()
    cfg = HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4)
    dts = [0.2, 0.1, 0.05, 0.025]
    dev = []
    for dt in dts:
        traj = integrate(ivp, cfg, dt, 10.0, relaxed=True)
        dev.append(max(abs(r.gamma - 1.0) for r in traj.records))
    slope = loglog_slope(dts, dev)
    report(10, "max|gamma - 1| slope", slope >= 6.5,
           f"{slope:.2f} >= 6.5 (max deviations {', '.join(f'{d:.1e}' for d in dev)})")


@pytest.mark.parametrize("name", ["oscillator", "kepler"])
def test_11_tower_property_suite(name):
    ivp = oscillator() if name == "oscillator" else kepler()
    worst = 0.0
    for w in random_states(name, n=20):
        for d in (1, 2):
            nxt = ivp.tower(d + 1, w)
            fd = fd_directional(lambda x: ivp.tower(d, x), w, ivp.phi(w))
            worst = max(worst, np.linalg.norm(nxt - fd) / (1e-5 * (1 + np.linalg.norm(nxt))))
        grad_fd = fd_jacobian(lambda x: np.atleast_1d(ivp.eta(x)), w)[0]
        worst = max(worst, np.max(np.abs(ivp.eta_grad(w) - grad_fd)) / 1e-6)
        worst = max(worst, abs(ivp.eta_grad(w) @ ivp.phi(w)) / (1e-12 * (1 + w @ w)))
    report(11, f"{name} towers and gradient", worst <= 1.0,
           f"worst check at {worst:.2f} of its tolerance")
