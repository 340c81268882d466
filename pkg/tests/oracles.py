"""Independent dense reference assemblies used as test oracles.

These loop over cells and basis functions with textbook formulas and
edge-midpoint quadrature, sharing no code with the library kernels.
"""

import numpy as np


def p1_gradients(P):
    """Gradients of the three hat functions on a triangle from the 3x3 Vandermonde system."""
    V = np.column_stack([np.ones(3), P])
    coef = np.linalg.solve(V, np.eye(3))  # column i: (a, bx, by) of hat i
    return coef[1:].T


def _hats_at(P, x):
    V = np.column_stack([np.ones(3), P])
    return np.linalg.solve(V.T, np.array([1.0, *x]))


def compliance(T, E, nu):
    return ((1 + nu) * T - nu * np.trace(T) * np.eye(2)) / E


def _coeff_basis():
    return [np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]]),
            np.array([[0.0, 1.0], [1.0, 0.0]])]


def linear_residual_2d(mesh, E, nu, rho, T, Tp, v, vp, tau, F=None):
    """Gate-free residual: stress rows tested with the coefficient basis, velocity rows with P1 hats."""
    nv, nc = mesh.n_vertices, mesh.n_cells
    rs = np.zeros((nc, 3))
    rv = np.zeros(2 * nv)
    basis = _coeff_basis()
    mids = [(0, 1), (1, 2), (2, 0)]
    for k, cell in enumerate(mesh.cells):
        P = mesh.vertices[cell]
        e1, e2 = P[1] - P[0], P[2] - P[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        G = p1_gradients(P)
        grad_v = sum(np.outer(v[2 * c:2 * c + 2], G[i]) for i, c in enumerate(cell))
        eps = 0.5 * (grad_v + grad_v.T)
        Tk = np.array([[T[k, 0], T[k, 2]], [T[k, 2], T[k, 1]]])
        Tpk = np.array([[Tp[k, 0], Tp[k, 2]], [Tp[k, 2], Tp[k, 1]]])
        R = compliance(Tk - Tpk, E, nu) / tau - eps
        rs[k] = [area * np.sum(R * b) for b in basis]
        dv = lambda x: sum(phi * (v[2 * c:2 * c + 2] - vp[2 * c:2 * c + 2])
                           for phi, c in zip(_hats_at(P, x), cell))
        for i, c in enumerate(cell):
            for comp in range(2):
                w_grad = np.zeros((2, 2))
                w_grad[comp] = G[i]
                acc = area * np.sum(Tk * 0.5 * (w_grad + w_grad.T))
                for a, b in mids:
                    x = 0.5 * (P[a] + P[b])
                    phi_i = _hats_at(P, x)[i]
                    acc += area / 3 * rho * dv(x)[comp] / tau * phi_i
                rv[2 * c + comp] += acc
    if F is not None:
        rv -= F
    return np.concatenate([rs.ravel(), rv])


def linear_bar_matrices(n, E, rho, L=1.0):
    """Dense 1D operators on a uniform mesh: compliance-weighted cell mass, B, nodal mass."""
    h = L / n
    B = np.zeros((n, n + 1))
    for k in range(n):
        B[k, k], B[k, k + 1] = -1.0 / h, 1.0 / h
    M = np.zeros((n + 1, n + 1))
    for k in range(n):
        M[k:k + 2, k:k + 2] += rho * h / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return h * np.eye(n) / E, h * B, M
