"""Discrete fields: continuous P1 nodal fields and P0 symmetric stress fields.

Symmetric tensors are stored as coefficient vectors, ``[xx]`` in 1D and
``[xx, yy, xy]`` in 2D, so a stress field costs ``d(d+1)/2`` reals per cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import coefficient_weights, n_stress_components, strain_operator, local_velocity_dofs
from .errors import ConfigurationError, InvalidArgumentError
from .mesh import DIRICHLET, Mesh


def coeffs_to_tensor(c: np.ndarray, dim: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if dim == 1:
        return c[..., None]
    t = np.empty(c.shape[:-1] + (2, 2))
    t[..., 0, 0] = c[..., 0]
    t[..., 1, 1] = c[..., 1]
    t[..., 0, 1] = t[..., 1, 0] = c[..., 2]
    return t


def tensor_to_coeffs(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape[-1] == 1:
        return t[..., 0]
    return np.stack([t[..., 0, 0], t[..., 1, 1], 0.5 * (t[..., 0, 1] + t[..., 1, 0])], axis=-1)


def trace_coeffs(c: np.ndarray, dim: int) -> np.ndarray:
    return c[..., 0] if dim == 1 else c[..., 0] + c[..., 1]


def frobenius(a: np.ndarray, b: np.ndarray, dim: int) -> np.ndarray:
    """``A:B`` for coefficient vectors."""
    return np.sum(coefficient_weights(dim) * a * b, axis=-1)


@dataclass(frozen=True, eq=False)
class NodalField:
    """P1 field; ``values`` has shape ``(n_vertices, components)``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_vertices:
            raise InvalidArgumentError(f"expected {self.mesh.n_vertices} nodal values, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def zeros(cls, mesh: Mesh, components: int | None = None) -> "NodalField":
        return cls(mesh, np.zeros((mesh.n_vertices, mesh.dim if components is None else components)))

    @classmethod
    def from_function(cls, mesh: Mesh, fn: Callable, components: int | None = None) -> "NodalField":
        vals = np.array([np.atleast_1d(fn(x)) for x in mesh.vertices], dtype=float)
        if components is not None:
            vals = vals.reshape(mesh.n_vertices, components)
        return cls(mesh, vals)


@dataclass(frozen=True, eq=False)
class StressField:
    """P0 symmetric tensor field; ``values`` has shape ``(n_cells, d(d+1)/2)``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        ns = n_stress_components(self.mesh.dim)
        v = np.array(self.values, dtype=float)
        if v.ndim == 3:
            v = tensor_to_coeffs(v)
        v = v.reshape(-1, ns)
        if v.shape[0] != self.mesh.n_cells:
            raise InvalidArgumentError(f"expected {self.mesh.n_cells} cell tensors, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def tensors(self) -> np.ndarray:
        return coeffs_to_tensor(self.values, self.mesh.dim)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @classmethod
    def zeros(cls, mesh: Mesh) -> "StressField":
        return cls(mesh, np.zeros((mesh.n_cells, n_stress_components(mesh.dim))))


def strain(v: NodalField) -> StressField:
    """Cellwise symmetric gradient of a P1 vector field (exact)."""
    mesh = v.mesh
    if v.components != mesh.dim:
        raise InvalidArgumentError(f"strain needs a {mesh.dim}-component field, got {v.components}")
    return StressField(mesh, strain_coeffs(mesh, v.flat))


def strain_coeffs(mesh: Mesh, v_flat: np.ndarray) -> np.ndarray:
    B = strain_operator(mesh)
    return np.einsum("kij,kj->ki", B, v_flat[local_velocity_dofs(mesh)])


def deviatoric(T: np.ndarray, d: int | None = None) -> np.ndarray:
    """Traceless part ``T - tr(T)/d I`` of a (stack of) full d x d tensors."""
    T = np.asarray(T, dtype=float)
    if T.ndim == 0:
        T = T.reshape(1, 1)
    d = T.shape[-1] if d is None else d
    tr = np.trace(T, axis1=-2, axis2=-1)
    return T - (tr / d)[..., None, None] * np.eye(d)


def deviatoric_coeffs(c: np.ndarray, dim: int) -> np.ndarray:
    out = np.array(c, dtype=float, copy=True)
    if dim == 1:
        return np.zeros_like(out)
    tr = trace_coeffs(out, dim)
    out[..., 0] -= tr / dim
    out[..., 1] -= tr / dim
    return out


def deviatoric_matrix(dim: int) -> np.ndarray:
    if dim == 1:
        return np.zeros((1, 1))
    return np.array([[0.5, -0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class DirichletBC:
    """Prescribed value ``value(t, X)`` on facets tagged ``tag``.

    ``X`` is an ``(n, dim)`` array of boundary vertices; the result must
    broadcast to ``(n, components)``.
    """

    value: Callable
    tag: str = DIRICHLET

    def nodes(self, mesh: Mesh) -> np.ndarray:
        if self.tag not in mesh.facet_tags:
            raise ConfigurationError(f"mesh has no facets tagged {self.tag}")
        return mesh.vertices_with_tag(self.tag)

    def dofs(self, mesh: Mesh, components: int | None = None) -> np.ndarray:
        c = mesh.dim if components is None else components
        nodes = self.nodes(mesh)
        return (nodes[:, None] * c + np.arange(c)[None, :]).ravel()

    def values_at(self, mesh: Mesh, t: float, components: int | None = None) -> np.ndarray:
        """Prescribed values at the constrained dofs; ``value`` is called once with all points."""
        c = mesh.dim if components is None else components
        nodes = self.nodes(mesh)
        vals = np.asarray(self.value(t, mesh.vertices[nodes]), dtype=float)
        if vals.ndim == 1 and vals.size == len(nodes) and c == 1:
            vals = vals[:, None]
        return np.broadcast_to(vals, (len(nodes), c)).ravel()


def zero_bc(tag: str = DIRICHLET) -> DirichletBC:
    return DirichletBC(lambda t, x: 0.0, tag)


def apply_dirichlet(A, b, bc: DirichletBC, t: float, mesh: Mesh, offset: int = 0, components: int | None = None):
    """Replace constrained rows by identity rows carrying the prescribed value.

    The elimination is row-only: constrained columns are kept, so a
    symmetric ``A`` becomes nonsymmetric.  That is fine for the LU solves
    used throughout.  ``offset`` shifts the dof indices when velocity dofs
    sit behind other unknowns in a block system.
    """
    dofs = bc.dofs(mesh, components) + offset
    vals = bc.values_at(mesh, t, components)
    A = sp.csr_matrix(A, copy=True)
    b = np.array(b, dtype=float, copy=True)
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[dofs] = True
    keep = sp.diags((~mask).astype(float))
    A = (keep @ A + sp.diags(mask.astype(float))).tocsr()
    b[dofs] = vals
    return A, b
