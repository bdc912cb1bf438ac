from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdrelax.errors import ConditioningError, SingularSystem, UnknownTableau
from mdrelax.tableau import (BUILTINS, MDTableau, builtin, hermite_birkhoff_tableau,
                             verify_quadrature_order)

F = Fraction


def test_two_point_three_derivative_weights():
    t = hermite_birkhoff_tableau([0, 1], 3)
    B = t.rational["B"]
    assert B[0] == [[0, 0], [F(1, 2), F(1, 2)]]
    assert B[1] == [[0, 0], [F(1, 10), F(-1, 10)]]
    assert B[2] == [[0, 0], [F(1, 120), F(1, 120)]]
    assert t.rational["b"] == [row[-1] for row in B]


@pytest.mark.parametrize("name, s, m, q", [
    ("HB-I2DRK6-3s", 3, 2, 6),
    ("HB-I2DRK8-4s", 4, 2, 8),
    ("HB-I3DRK6-2s", 2, 3, 6),
])
def test_builtin_shapes(name, s, m, q):
    t = builtin(name)
    assert (t.s, t.m, t.q) == (s, m, q)
    assert t.B.shape == (m, s, s) and t.b.shape == (m, s)
    assert t.stiffly_accurate()
    assert verify_quadrature_order(t) == q


def test_three_stage_weights():
    # Hermite-Birkhoff on 0, 1/2, 1 with values and first derivatives
    B = builtin("HB-I2DRK6-3s").rational["B"]
    assert B[0][2] == [F(7, 30), F(8, 15), F(7, 30)]
    assert B[1][2] == [F(1, 60), 0, F(-1, 60)]


def test_first_row_zero_and_c_zero(tableau):
    assert tableau.c[0] == 0
    assert np.all(tableau.B[:, 0, :] == 0)


def test_row_sums_match_nodes(tableau):
    # integrating g = 1 over [0, c_l]
    np.testing.assert_allclose(tableau.B[0].sum(axis=1), tableau.c, atol=1e-15)


def test_arrays_read_only(tableau):
    with pytest.raises(ValueError):
        tableau.B[0, 0, 0] = 1.0


def test_json_round_trip(tableau):
    back = MDTableau.from_json(tableau.to_json())
    assert back.rational == tableau.rational
    assert np.array_equal(back.B, tableau.B)
    assert np.array_equal(back.b, tableau.b)
    assert back.q == tableau.q and back.name == tableau.name


def test_float_only_dict_round_trip(tableau):
    doc = tableau.to_dict()
    del doc["rational"]
    back = MDTableau.from_dict(doc)
    assert np.array_equal(back.B, tableau.B)
    assert back.stiffly_accurate()


def test_unknown_builtin():
    with pytest.raises(UnknownTableau):
        builtin("HB-nope")


def test_repeated_nodes_singular():
    with pytest.raises(SingularSystem):
        hermite_birkhoff_tableau([0, F(1, 2), F(1, 2)], 2)


def test_too_many_conditions():
    with pytest.raises(ConditioningError):
        hermite_birkhoff_tableau([0, F(1, 4), F(1, 2), F(3, 4), 1], 3)


@pytest.mark.parametrize("nodes", [[0, 2], [-0.5, 1], [1, 0]])
def test_bad_nodes(nodes):
    with pytest.raises(ValueError):
        hermite_birkhoff_tableau(nodes, 2)


def test_interior_last_node_gets_separate_update():
    t = hermite_birkhoff_tableau([0, F(1, 2)], 2)
    assert not t.stiffly_accurate()
    assert verify_quadrature_order(t) == 4


def test_float_nodes_snap_to_rationals():
    t = hermite_birkhoff_tableau([0.0, 0.5, 1.0], 2)
    assert t.rational == builtin("HB-I2DRK6-3s").rational


def test_builtin_registry_complete():
    assert set(BUILTINS) == {"HB-I2DRK6-3s", "HB-I2DRK8-4s", "HB-I3DRK6-2s"}


@st.composite
def node_sets(draw):
    m = draw(st.integers(1, 3))
    s = draw(st.integers(1, 9 // m))
    dens = st.integers(1, 12)
    pts = draw(st.sets(st.builds(lambda n, d: F(n % (d + 1), d), st.integers(0, 12), dens),
                       min_size=s, max_size=s))
    return sorted(pts), m


@settings(max_examples=40, deadline=None)
@given(node_sets())
def test_rows_exact_to_degree_ms_minus_one(case):
    nodes, m = case
    t = hermite_birkhoff_tableau(nodes, m)
    assert verify_quadrature_order(t) >= m * len(nodes)
    assert t.q == m * len(nodes)


def test_order_check_survives_large_cancelling_weights():
    # two close interior nodes extrapolated to [0, c]: weights near 2e4
    t = hermite_birkhoff_tableau([F(5, 6), F(6, 7)], 2)
    assert np.abs(t.B).max() > 1e4
    assert verify_quadrature_order(t) == 4
    doc = t.to_dict()
    del doc["rational"]
    assert verify_quadrature_order(MDTableau.from_dict(doc)) == 4


@pytest.mark.parametrize("name", ["HB-I2DRK6-3s", "HB-I2DRK8-4s", "HB-I3DRK6-2s"])
def test_float_only_order_check_matches_exact(name):
    doc = builtin(name).to_dict()
    del doc["rational"]
    assert verify_quadrature_order(MDTableau.from_dict(doc)) == builtin(name).q
