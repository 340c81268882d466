"""Sparse direct solves (SuperLU) behind a small contract.

A solve is accepted when ``||Ax - b|| <= 1e-10 (||A||_F ||x|| + ||b||)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

RESIDUAL_TOL = 1e-10


@dataclass
class SparseSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray

    def __post_init__(self):
        self.matrix = sp.csc_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float)
        n, m = self.matrix.shape
        if n != m:
            raise SolverError(f"system matrix is not square ({n}x{m})")
        if self.rhs.shape != (n,):
            raise SolverError(f"right-hand side has shape {self.rhs.shape}, expected ({n},)")

    @property
    def n(self):
        return self.matrix.shape[0]


class Factorization:
    """LU factors of a fixed matrix; :meth:`solve` may be called repeatedly."""

    def __init__(self, A):
        self.matrix = sp.csc_matrix(A)
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise SolverError(f"LU pivot failure: {exc}") from None
        diag = np.abs(self._lu.U.diagonal())
        scale = max(float(np.abs(self.matrix).max()), 1e-300)
        if diag.size and diag.min() <= 1e-14 * scale:
            raise SolverError(f"LU pivot failure: pivot {diag.min():.3e} at relative scale {scale:.3e}")
        self._fro = spla.norm(self.matrix, "fro")

    def solve(self, b, check=True):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if check:
            r = np.linalg.norm(self.matrix @ x - b)
            bound = RESIDUAL_TOL * (self._fro * np.linalg.norm(x) + np.linalg.norm(b))
            if not np.isfinite(r) or r > bound:
                # one step of iterative refinement before giving up
                x = x + self._lu.solve(b - self.matrix @ x)
                r = np.linalg.norm(self.matrix @ x - b)
                if not np.isfinite(r) or r > bound:
                    raise SolverError(f"direct solve residual {r:.3e} exceeds bound {bound:.3e}")
        return x


def solve_direct(system: SparseSystem) -> np.ndarray:
    return Factorization(system.matrix).solve(system.rhs)
