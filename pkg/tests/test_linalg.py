import numpy as np
import pytest
import scipy.sparse as sp

from rateplast.errors import SolverError
from rateplast.linalg import Factorization, SparseSystem, solve_direct


def test_identity():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(solve_direct(SparseSystem(sp.eye(3), b)), b)


def test_hand_2x2():
    x = solve_direct(SparseSystem(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-14)


def test_singular_raises():
    with pytest.raises(SolverError, match="pivot"):
        solve_direct(SparseSystem(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), np.ones(2)))


def test_nonsquare_raises():
    with pytest.raises(SolverError):
        SparseSystem(sp.csr_matrix(np.ones((2, 3))), np.ones(2))


def test_random_spd_residual_bound(rng):
    for _ in range(50):
        n = int(rng.integers(2, 201))
        R = sp.random(n, n, density=min(1.0, 5.0 / n), random_state=rng)
        A = (R @ R.T + sp.eye(n)).tocsc()
        b = rng.normal(size=n)
        x = solve_direct(SparseSystem(A, b))
        r = np.linalg.norm(A @ x - b)
        assert r <= 1e-10 * (sp.linalg.norm(A, "fro") * np.linalg.norm(x) + np.linalg.norm(b))


def test_factorization_reusable_and_deterministic(rng):
    A = sp.diags([1.0, 4.0, 1.0], [-1, 0, 1], shape=(30, 30)).tocsc()
    f = Factorization(A)
    b = rng.normal(size=30)
    np.testing.assert_array_equal(f.solve(b), f.solve(b))
    np.testing.assert_array_equal(f.solve(b), solve_direct(SparseSystem(A, b)))
