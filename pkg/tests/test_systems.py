import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lyapctl.errors import DomainError, ValidationError
from lyapctl.systems import (StateBox, evaluate, explicit_matrix_system, identity_system,
                             shift_system, standard_map)

unit = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)


@pytest.mark.parametrize("x, u, expected", [
    ((0.25, 0.5), 0.0, (0.75, 0.5)),
    ((0.25, 0.5), 1.0, (0.0, 0.75)),
    ((0.75, 0.5), 1.0, (0.0, 0.25)),
])
def test_standard_map_values(x, u, expected):
    out = evaluate(standard_map(0.25), x, [u])
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_identity_and_shift():
    np.testing.assert_array_equal(evaluate(identity_system(), [0.3], [0.0]), [0.3])
    sys_ = shift_system([0.0], control_gain=1.0)
    np.testing.assert_allclose(evaluate(sys_, [0.9], [0.2]), [0.1], atol=1e-15)


def test_fold_half_open():
    box = StateBox.unit(2)
    out = box.fold(np.array([[1.0, -0.25], [2.5, 0.0]]))
    np.testing.assert_array_equal(out, [[0.0, 0.75], [0.5, 0.0]])


def test_nonwrapped_domain_error():
    box = StateBox([0.0], [1.0], (False,))
    sys_ = identity_system(box)
    with pytest.raises(DomainError):
        evaluate(sys_, [1.0], [0.0])
    with pytest.raises(DomainError):
        evaluate(sys_, [-0.1], [0.0])
    assert evaluate(sys_, [0.999], [0.0])[0] == 0.999


def test_bad_box():
    with pytest.raises(ValidationError):
        StateBox([0.0, 1.0], [1.0, 1.0], (True, True))


def test_explicit_matrix_validation():
    handle = explicit_matrix_system([np.eye(2)])
    assert handle.n_cells == 2 and handle.n_actions == 1
    with pytest.raises(ValidationError, match=r"row 0 sums to 0\.9"):
        explicit_matrix_system([[[0.5, 0.4], [0.0, 1.0]]])
    with pytest.raises(ValidationError):
        explicit_matrix_system([np.eye(2), np.eye(3)])
    with pytest.raises(ValidationError):
        explicit_matrix_system([[[1.2, -0.2], [0.0, 1.0]]])


def test_explicit_three_cell_instance():
    A = [[0.2, 0.5, 0.3], [0.1, 0.4, 0.5], [0, 0, 1]]
    B = [[0.6, 0.2, 0.2], [0.0, 0.3, 0.7], [0, 0, 1]]
    assert explicit_matrix_system([A, B]).n_cells == 3


@settings(max_examples=200, deadline=None)
@given(unit, unit)
def test_uncontrolled_standard_map_keeps_y(x, y):
    out = evaluate(standard_map(0.25), [x, y], [0.0])
    assert out[1] == y


@settings(max_examples=200, deadline=None)
@given(unit, unit, st.floats(-0.5, 0.5), st.floats(0.0, 2.0))
def test_standard_map_stays_on_torus_and_is_deterministic(x, y, u, K):
    sm = standard_map(K)
    a = evaluate(sm, [x, y], [u])
    b = evaluate(sm, [x, y], [u])
    assert np.array_equal(a, b)
    assert np.all((a >= 0.0) & (a < 1.0))


@settings(max_examples=100, deadline=None)
@given(unit, unit, st.floats(-0.5, 0.5))
def test_standard_map_commutes_with_point_reflection(x, y, u):
    # T(1-x, 1-y, u) = R T(x, y, u) with the same control
    sm = standard_map(0.25)
    lhs = evaluate(sm, [(1 - x) % 1.0, (1 - y) % 1.0], [u])
    rhs = (1.0 - evaluate(sm, [x, y], [u])) % 1.0
    d = np.abs(lhs - rhs)
    assert np.all(np.minimum(d, 1 - d) < 1e-12)
