"""Low-level P1/P0 kernels: shape gradients, mass/stiffness matrices, strain operator.

Everything here is exact: P1 gradients are cellwise constant and the P1
mass matrices use the closed-form simplex integrals.
"""

import numpy as np
import scipy.sparse as sp


def shape_gradients(mesh):
    """Gradients of the barycentric basis, shape ``(n_cells, dim + 1, dim)``."""
    if "grads" in mesh._cache:
        return mesh._cache["grads"]
    p = mesh.vertices[mesh.cells]
    if mesh.dim == 1:
        hk = p[:, 1, 0] - p[:, 0, 0]
        g = np.stack([-1.0 / hk, 1.0 / hk], axis=1)[:, :, None]
    else:
        # columns of J are edge vectors; grad(lambda_1, lambda_2) = rows of J^{-1}
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        Jinv = np.linalg.inv(J)
        g12 = Jinv
        g0 = -g12.sum(axis=1, keepdims=True)
        g = np.concatenate([g0, g12], axis=1)
    g.setflags(write=False)
    mesh._cache["grads"] = g
    return g


def _local_mass(dim):
    n = dim + 1
    return (np.ones((n, n)) + np.eye(n)) / ((n) * (n + 1))


def _scatter(mesh, local, n=None):
    """Assemble per-cell ``(n_cells, k, k)`` blocks on vertex dofs."""
    cells = mesh.cells
    k = cells.shape[1]
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    n = mesh.n_vertices if n is None else n
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mass_matrix(mesh, weight=1.0):
    """Consistent scalar P1 mass matrix, ``weight`` scalar or per cell."""
    w = np.broadcast_to(np.asarray(weight, dtype=float), (mesh.n_cells,))
    local = (w * mesh.cell_volumes)[:, None, None] * _local_mass(mesh.dim)[None]
    return _scatter(mesh, local)


def stiffness_matrix(mesh, weight=1.0):
    w = np.broadcast_to(np.asarray(weight, dtype=float), (mesh.n_cells,))
    g = shape_gradients(mesh)
    local = (w * mesh.cell_volumes)[:, None, None] * np.einsum("kad,kbd->kab", g, g)
    return _scatter(mesh, local)


def boundary_mass_matrix(mesh, facets=None):
    """P1 mass matrix of the boundary facets (all facets by default)."""
    facets = mesh.facets if facets is None else np.asarray(facets).reshape(-1, mesh.dim)
    n = mesh.n_vertices
    if mesh.dim == 1:
        idx = facets[:, 0]
        return sp.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=(n, n))
    meas = mesh.facet_measures(facets)
    local = meas[:, None, None] * (np.ones((2, 2)) + np.eye(2))[None] / 6.0
    rows = np.repeat(facets, 2, axis=1).ravel()
    cols = np.tile(facets, (1, 2)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def vector_matrix(scalar, dim):
    """Block a scalar vertex matrix onto interleaved vector dofs ``node * dim + comp``."""
    if dim == 1:
        return scalar.tocsr()
    return sp.kron(scalar, sp.identity(dim), format="csr")


def cell_to_vertex_load(mesh, q):
    """Integrate a per-cell constant against each P1 basis function."""
    share = np.asarray(q, dtype=float) * mesh.cell_volumes / (mesh.dim + 1)
    return np.bincount(mesh.cells.ravel(), weights=np.repeat(share, mesh.dim + 1), minlength=mesh.n_vertices)


def n_stress_components(dim):
    return dim * (dim + 1) // 2


def coefficient_weights(dim):
    """Weights turning coefficient vectors into the Frobenius product, ``S:T = sum(w * s * t)``."""
    return np.array([1.0]) if dim == 1 else np.array([1.0, 1.0, 2.0])


def strain_operator(mesh):
    """Per-cell matrices ``B`` with ``strain_coeffs = B @ v_local``.

    ``v_local`` is ordered ``[node0 comp0, node0 comp1, node1 comp0, ...]``
    and strain coefficients are ``[xx]`` in 1D, ``[xx, yy, xy]`` in 2D.
    """
    if "B" in mesh._cache:
        return mesh._cache["B"]
    g = shape_gradients(mesh)
    nc, d = mesh.n_cells, mesh.dim
    if d == 1:
        B = g[:, :, 0][:, None, :].copy()
    else:
        B = np.zeros((nc, 3, 6))
        B[:, 0, 0::2] = g[:, :, 0]
        B[:, 1, 1::2] = g[:, :, 1]
        B[:, 2, 0::2] = 0.5 * g[:, :, 1]
        B[:, 2, 1::2] = 0.5 * g[:, :, 0]
    B.setflags(write=False)
    mesh._cache["B"] = B
    return B


def local_velocity_dofs(mesh):
    """Global velocity dof indices per cell, shape ``(n_cells, (dim + 1) * dim)``."""
    d = mesh.dim
    return (mesh.cells[:, :, None] * d + np.arange(d)[None, None, :]).reshape(mesh.n_cells, -1)
