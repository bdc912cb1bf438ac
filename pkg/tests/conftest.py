import math

import numpy as np
import pytest

from mdrelax.problems import IVP
from mdrelax.tableau import builtin

BUILTIN_NAMES = ["HB-I2DRK6-3s", "HB-I2DRK8-4s", "HB-I3DRK6-2s"]
SEED = 20240917


def linear_ivp(lam: float, w0=1.0) -> IVP:
    """Scalar w' = lam * w, so F_d = lam**d * w."""
    return IVP(
        name="linear",
        dim=1,
        w0=np.array([w0]),
        tower=lambda d, w: lam**d * np.asarray(w, dtype=float),
        m_max=3,
        eta=lambda w: np.sum(np.asarray(w) ** 2, axis=-1),
        eta_grad=lambda w: 2.0 * np.asarray(w),
    )


def polynomial_ivp(q: int) -> IVP:
    """Autonomous form of u'(tau) = tau**(q-1): state (tau, u)."""

    def tower(d, w):
        w = np.asarray(w, dtype=float)
        tau = w[..., 0]
        k = d - 1
        # (d-1)-th derivative of tau**(q-1)
        coef = math.perm(q - 1, k)
        du = coef * tau ** (q - 1 - k) if k <= q - 1 else np.zeros_like(tau)
        dtau = np.ones_like(tau) if d == 1 else np.zeros_like(tau)
        return np.stack([dtau, du], axis=-1)

    return IVP(
        name="polynomial",
        dim=2,
        w0=np.zeros(2),
        tower=tower,
        m_max=3,
        eta=lambda w: np.asarray(w)[..., 0],
        eta_grad=lambda w: np.array([1.0, 0.0]),
    )


def zero_ivp(dim=2) -> IVP:
    return IVP(
        name="zero",
        dim=dim,
        w0=np.ones(dim),
        tower=lambda d, w: np.zeros_like(np.asarray(w, dtype=float)),
        m_max=3,
        eta=lambda w: np.sum(np.asarray(w) ** 2, axis=-1),
        eta_grad=lambda w: 2.0 * np.asarray(w),
    )


@pytest.fixture(params=BUILTIN_NAMES)
def tableau(request):
    return builtin(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def random_states(problem: str, n=20, seed=SEED):
    """Seeded states with norm in [0.5, 2] (Kepler: w1^2 + w2^2 >= 0.1)."""
    gen = np.random.default_rng(seed)
    out = []
    dim = 2 if problem == "oscillator" else 4
    while len(out) < n:
        v = gen.normal(size=dim)
        v *= gen.uniform(0.5, 2.0) / np.linalg.norm(v)
        if problem == "kepler" and v[0] ** 2 + v[1] ** 2 < 0.1:
            continue
        out.append(v)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
