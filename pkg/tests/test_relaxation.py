import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import zero_ivp
from mdrelax.errors import RelaxationRootNotFound, StepFailed
from mdrelax.hbpc import HBPCConfig, hbpc_step
from mdrelax.problems import kepler, oscillator, oscillator_exact
from mdrelax.relaxation import integrate, relax
from mdrelax.tableau import builtin

from test_hbpc import KEPLER_HARD_PREDICTOR

CFG = HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=2)


def test_relax_on_level_set_gives_one():
    ivp = oscillator()
    w = np.array([1.0, 0.0])
    step = relax(ivp, w, np.array([0.0, 1.0]))
    assert step.gamma == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(step.w_relaxed, [0.0, 1.0], atol=1e-15)


def test_relax_zero_increment():
    w = np.array([0.6, 0.8])
    step = relax(oscillator(), w, w.copy())
    assert step.gamma == 1.0
    np.testing.assert_array_equal(step.w_relaxed, w)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(0.05, 0.4), st.floats(-0.05, 0.05))
def test_relax_quadratic_closed_form(angle, h, bias):
    # oscillator invariant is |w|^2: gamma = -2 <w, d> / |d|^2
    ivp = oscillator()
    w = np.array([math.cos(angle), math.sin(angle)])
    d = h * np.array([-w[1], w[0]]) + bias * h * h * w
    exact = -2 * (w @ d) / (d @ d)
    if not 0.5 < exact < 1.5:
        return
    step = relax(ivp, w, w + d)
    assert step.gamma == pytest.approx(exact, rel=1e-12)
    assert ivp.eta(step.w_relaxed) == pytest.approx(1.0, abs=1e-14)


def test_relaxed_step_restores_eta_after_hbpc():
    ivp = kepler()
    w_next, _ = hbpc_step(ivp, ivp.w0, 0.0, 0.01, CFG)
    step = relax(ivp, ivp.w0, w_next)
    assert abs(ivp.eta(step.w_relaxed) - ivp.eta(ivp.w0)) <= 1e-14
    assert abs(step.gamma - 1) < 1e-6


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_unrelaxed_times_are_uniform(backend):
    traj = integrate(oscillator(), CFG, 0.25, 2.0, backend=backend)
    np.testing.assert_allclose(traj.times(), 0.25 * np.arange(1, 9), atol=1e-14)
    assert traj.t_final == 2.0 and traj.completed


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_final_step_is_clamped(backend):
    traj = integrate(oscillator(), CFG, 0.3, 1.0, backend=backend)
    t = traj.times()
    assert len(t) == 4 and t[-1] == 1.0
    assert t[-1] - t[-2] == pytest.approx(0.1, abs=1e-14)


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_relaxed_run_preserves_eta_and_moves_time(backend):
    ivp = oscillator()
    traj = integrate(ivp, CFG, 0.2, 4.0, relaxed=True, backend=backend)
    etas = np.array([ivp.eta(r.w) for r in traj.records])
    assert np.max(np.abs(etas - 1.0)) <= 1e-13
    gammas = np.array([r.gamma for r in traj.records])
    assert np.all(np.abs(gammas - 1) < 1e-3) and np.any(gammas != 1.0)
    steps = np.diff(np.concatenate([[0.0], traj.times()]))
    # the last step is shortened to the remaining time before relaxing
    np.testing.assert_allclose(steps[:-1], 0.2 * gammas[:-1], rtol=1e-12)
    assert abs(traj.t_final - 4.0) < 0.2


def test_include_initial_and_error_modes():
    ivp = oscillator()
    full = integrate(ivp, CFG, 0.5, 2.0, include_initial=True, reference=oscillator_exact)
    assert full.records[0].t == 0.0 and full.records[0].error == 0.0
    assert all(r.error is not None for r in full.records)
    last = integrate(ivp, CFG, 0.5, 2.0, reference=oscillator_exact, errors="final")
    assert all(r.error is None for r in last.records[:-1])
    assert last.final.error == pytest.approx(full.final.error, rel=1e-14)


@pytest.mark.parametrize("relaxed", [False, True])
@pytest.mark.parametrize("problem, dt, T", [(oscillator, 0.2, 4.0), (kepler, 0.01, 0.3)])
def test_compiled_matches_python(problem, dt, T, relaxed):
    ivp = problem()
    a = integrate(ivp, CFG, dt, T, relaxed=relaxed, backend="python")
    b = integrate(ivp, CFG, dt, T, relaxed=relaxed, backend="compiled")
    assert len(a.records) == len(b.records)
    tol = 1e-11 if relaxed else 1e-13
    np.testing.assert_allclose(a.times(), b.times(), rtol=0, atol=tol)
    np.testing.assert_allclose(a.states(), b.states(), rtol=0, atol=tol)
    # the stopping test can flip by one iteration at the rounding floor
    its = np.array([[r.newton_iters for r in x.records] for x in (a, b)])
    assert np.max(np.abs(its[0] - its[1])) <= 1


def test_python_backend_serves_custom_problems():
    traj = integrate(zero_ivp(), CFG, 0.5, 1.0)
    np.testing.assert_array_equal(traj.final.w, np.ones(2))
    with pytest.raises(ValueError):
        integrate(zero_ivp(), CFG, 0.5, 1.0, backend="compiled")


@pytest.mark.parametrize("kwargs", [{"dt": 0.0}, {"T_end": -1.0}, {"backend": "gpu"},
                                    {"errors": "some"}])
def test_integrate_validation(kwargs):
    args = {"dt": 0.1, "T_end": 1.0} | kwargs
    with pytest.raises(ValueError):
        integrate(oscillator(), CFG, args.pop("dt"), args.pop("T_end"), **args)


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_step_failure_carries_time_and_records(backend):
    ivp = dataclasses.replace(kepler(), w0=KEPLER_HARD_PREDICTOR)
    cfg = HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=0, on_newton_failure="raise")
    with pytest.raises(StepFailed) as info:
        integrate(ivp, cfg, 0.05, 1.0, backend=backend)
    assert info.value.t == 0.0 and info.value.records == []


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_missing_root_aborts_kepler_relaxed_run(backend):
    with pytest.raises(RelaxationRootNotFound) as info:
        integrate(kepler(), HBPCConfig(builtin("HB-I2DRK6-3s"), kmax=4), 0.2, 5.0,
                  relaxed=True, backend=backend)
    exc = info.value
    assert 0 < exc.t < 1.0
    assert exc.records and exc.records[-1].t == pytest.approx(exc.t)
