import numpy as np
import pytest
import scipy.sparse as sp

from rateplast.errors import ConfigurationError, InvalidArgumentError
from rateplast.mesh import NEUMANN_TRACTION, build_interval_mesh, build_plate_with_hole, build_unit_square
from rateplast.scenarios import bump
from rateplast.spaces import (
    DirichletBC,
    NodalField,
    StressField,
    apply_dirichlet,
    deviatoric,
    strain,
    zero_bc,
)


@pytest.fixture(scope="module")
def plate():
    return build_plate_with_hole(1, 1, 0.24, 0.25, 0)


def test_strain_of_translation_is_zero(plate):
    v = NodalField(plate, np.tile([1.0, 0.0], (plate.n_vertices, 1)))
    assert np.abs(strain(v).values).max() < 1e-13


def test_strain_of_rotation_is_zero(plate):
    x, y = plate.vertices.T
    v = NodalField(plate, np.stack([-y, x], axis=1))
    assert np.abs(strain(v).values).max() < 1e-13


def test_strain_1d_linear():
    m = build_interval_mesh(4)
    v = NodalField(m, 3 * m.vertices)
    np.testing.assert_allclose(strain(v).values[:, 0], 3.0, rtol=1e-14)


def test_strain_2d_affine_field(plate):
    G = np.array([[0.3, -1.2], [0.7, 2.0]])
    v = NodalField(plate, plate.vertices @ G.T)
    sym = 0.5 * (G + G.T)
    np.testing.assert_allclose(strain(v).tensors, np.broadcast_to(sym, (plate.n_cells, 2, 2)), atol=1e-12)


def test_strain_rejects_scalar(plate):
    with pytest.raises(InvalidArgumentError):
        strain(NodalField.zeros(plate, 1))


def test_strain_is_linear(plate, rng):
    u = NodalField(plate, rng.normal(size=(plate.n_vertices, 2)))
    w = NodalField(plate, rng.normal(size=(plate.n_vertices, 2)))
    a, b = 1.7, -0.4
    lhs = strain(NodalField(plate, a * u.values + b * w.values)).values
    rhs = a * strain(u).values + b * strain(w).values
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(rhs).max()


def test_stress_field_symmetric_storage(plate):
    S = StressField.zeros(plate)
    assert S.values.shape == (plate.n_cells, 3)
    T = S.tensors
    np.testing.assert_array_equal(T, np.swapaxes(T, 1, 2))


def test_deviatoric_identity():
    np.testing.assert_allclose(deviatoric(np.eye(2), 2), 0.0)


def test_deviatoric_hand_case():
    np.testing.assert_allclose(deviatoric(np.diag([2.0, 0.0]), 2), np.diag([1.0, -1.0]))


def test_deviatoric_idempotent_on_traceless():
    T = np.array([[0.5, 2.0], [2.0, -0.5]])
    np.testing.assert_allclose(deviatoric(T, 2), T)


def test_deviatoric_1d_vanishes():
    assert deviatoric(np.array([[7.0]]), 1)[0, 0] == 0.0


def test_apply_dirichlet_zero_bc():
    m = build_unit_square()
    n = m.n_vertices * 2
    A = sp.eye(n) * 3.0
    A2, b2 = apply_dirichlet(A, np.ones(n), zero_bc(), 0.0, m)
    x = np.linalg.solve(A2.toarray(), b2)
    assert np.all(x[zero_bc().dofs(m)] == 0.0)


def _bar_bc():
    return DirichletBC(lambda t, X: np.where(X[:, 0] < 0.5, -1.0, 1.0)[:, None] * bump(t, 0.1))


def test_bump_bc_at_half():
    m = build_interval_mesh(8)
    vals = _bar_bc().values_at(m, 0.5)
    np.testing.assert_allclose(sorted(vals), [-0.1, 0.1], rtol=1e-14)


@pytest.mark.parametrize("t", [0.0, 1.0, 1.3, -0.2])
def test_bump_bc_outside_support(t):
    m = build_interval_mesh(8)
    assert np.all(_bar_bc().values_at(m, t) == 0.0)


def test_apply_dirichlet_rows_become_identity():
    m = build_interval_mesh(3)
    A = sp.csr_matrix(np.arange(16, dtype=float).reshape(4, 4) + 10 * np.eye(4))
    A2, b2 = apply_dirichlet(A, np.zeros(4), _bar_bc(), 0.5, m)
    dofs = _bar_bc().dofs(m)
    np.testing.assert_array_equal(A2.toarray()[dofs], np.eye(4)[dofs])
    np.testing.assert_allclose(b2[dofs], _bar_bc().values_at(m, 0.5))


def test_apply_dirichlet_missing_tag():
    m = build_interval_mesh(3)
    with pytest.raises(ConfigurationError):
        apply_dirichlet(sp.eye(4), np.zeros(4), DirichletBC(lambda t, X: 0.0, NEUMANN_TRACTION), 0.0, m)


def test_nodal_field_size_checked():
    m = build_interval_mesh(3)
    with pytest.raises(InvalidArgumentError):
        NodalField(m, np.zeros(3))
