"""Simplicial meshes in one and two dimensions.

Meshes carry boundary facets tagged with one of :data:`TAGS`.  The plain
ASCII format understood by :func:`load_triangle_mesh` and produced by
:func:`write_mesh` looks like::

    ratemesh 1 2
    v 0.0 0.0
    v 1.0 0.0
    v 0.0 1.0
    c 0 1 2
    f 0 1 DIRICHLET
    f 1 2 NEUMANN_FREE
    f 2 0 NEUMANN_TRACTION

Indices are 0-based, ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, MeshFormatError, NumericalError, ValidationError

log = logging.getLogger(__name__)

DIRICHLET = "DIRICHLET"
NEUMANN_TRACTION = "NEUMANN_TRACTION"
NEUMANN_FREE = "NEUMANN_FREE"
TAGS = (DIRICHLET, NEUMANN_TRACTION, NEUMANN_FREE)

QUASI_UNIFORMITY_BOUND = 4.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    Attributes
    ----------
    vertices : (n_vertices, dim) float array
    cells : (n_cells, dim + 1) int array, positively oriented
    facets : (n_facets, dim) int array of boundary facets
    facet_tags : tuple of str, one tag per facet
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: tuple
    cell_volumes: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        dim = vertices.shape[1]
        if dim not in (1, 2):
            raise InvalidArgumentError(f"only 1D and 2D meshes are supported, got dim={dim}")
        cells = np.array(self.cells, dtype=np.int64).reshape(-1, dim + 1)
        facets = np.array(self.facets, dtype=np.int64).reshape(-1, dim)
        tags = tuple(str(t) for t in self.facet_tags)
        if len(tags) != len(facets):
            raise ValidationError("facet_tags must have one entry per facet")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise ValidationError("cell refers to a nonexistent vertex")

        vols = _signed_volumes(vertices, cells)
        if dim == 2:
            flip = vols < 0
            if np.any(flip):
                cells[flip] = cells[flip][:, [0, 2, 1]]
                vols = np.abs(vols)
        elif np.any(vols < 0):
            flip = vols < 0
            cells[flip] = cells[flip][:, ::-1]
            vols = np.abs(vols)
        diam = _bounding_diameter(vertices)
        if np.any(vols <= 1e-14 * diam**dim):
            bad = int(np.argmin(vols))
            raise ValidationError(f"cell {bad} has nonpositive measure {vols[bad]:.3e}")

        for name, arr in (("vertices", vertices), ("cells", cells), ("facets", facets), ("cell_volumes", vols)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "facet_tags", tags)
        self._validate(diam)

    def _validate(self, diam):
        pairs = cKDTree(self.vertices).query_pairs(1e-12 * max(diam, 1e-300))
        if pairs:
            i, j = sorted(pairs)[0]
            raise ValidationError(f"duplicate vertices {i} and {j}")
        unknown = sorted(set(self.facet_tags) - set(TAGS))
        if unknown:
            raise ValidationError(f"unknown boundary tags {unknown}")
        boundary = {tuple(sorted(f)) for f in self.topological_boundary()}
        tagged = [tuple(sorted(f)) for f in self.facets.tolist()]
        if len(set(tagged)) != len(tagged):
            raise ValidationError("a boundary facet carries more than one tag")
        missing = boundary - set(tagged)
        if missing:
            raise ValidationError(f"boundary facet {sorted(missing)[0]} has no tag")
        extra = set(tagged) - boundary
        if extra:
            raise ValidationError(f"tagged facet {sorted(extra)[0]} is not on the boundary")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def topological_boundary(self) -> np.ndarray:
        """Facets that belong to exactly one cell."""
        d = self.dim
        if d == 1:
            local = self.cells.reshape(-1, 1)
        else:
            local = np.concatenate([self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [2, 0]]])
        keys = np.sort(local, axis=1)
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        return uniq[counts == 1]

    def facets_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.facet_tags], dtype=bool)
        return self.facets[mask]

    def vertices_with_tag(self, tag: str) -> np.ndarray:
        return np.unique(self.facets_with_tag(tag))

    def facet_measures(self, facets=None) -> np.ndarray:
        facets = self.facets if facets is None else facets
        if self.dim == 1:
            return np.ones(len(facets))
        p = self.vertices[facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @property
    def cell_diameters(self) -> np.ndarray:
        if "diam" not in self._cache:
            p = self.vertices[self.cells]
            if self.dim == 1:
                d = np.abs(p[:, 1, 0] - p[:, 0, 0])
            else:
                e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
                d = np.linalg.norm(e, axis=2).max(axis=1)
            self._cache["diam"] = d
        return self._cache["diam"]

    @property
    def cell_inradii(self) -> np.ndarray:
        if self.dim == 1:
            return 0.5 * self.cell_diameters
        p = self.vertices[self.cells]
        perim = (
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
            + np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
            + np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
        )
        return 2.0 * self.cell_volumes / perim

    @property
    def cell_centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    @property
    def volume(self) -> float:
        return float(self.cell_volumes.sum())

    def locate(self, point) -> int:
        """Index of a cell containing ``point`` (first match for shared facets)."""
        x = np.atleast_1d(np.asarray(point, dtype=float))
        if self.dim == 1:
            p = self.vertices[self.cells][:, :, 0]
            lo, hi = p.min(axis=1), p.max(axis=1)
            tol = 1e-12 * self.h
            hits = np.nonzero((x[0] >= lo - tol) & (x[0] < hi - tol))[0]
            if hits.size == 0:
                hits = np.nonzero((x[0] >= lo - tol) & (x[0] <= hi + tol))[0]
        else:
            lam = barycentric(self, x)
            hits = np.nonzero(lam.min(axis=1) >= -1e-12)[0]
        if hits.size == 0:
            raise InvalidArgumentError(f"point {x.tolist()} lies outside the mesh")
        return int(hits[0])


def barycentric(mesh: Mesh, x) -> np.ndarray:
    """Barycentric coordinates of a 2D point with respect to every cell."""
    p = mesh.vertices[mesh.cells]
    v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
    det = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])
    l1 = ((x[0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v2[:, 0] - v0[:, 0]) * (x[1] - v0[:, 1])) / det
    l2 = ((v1[:, 0] - v0[:, 0]) * (x[1] - v0[:, 1]) - (x[0] - v0[:, 0]) * (v1[:, 1] - v0[:, 1])) / det
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


def _signed_volumes(vertices, cells):
    p = vertices[cells]
    if vertices.shape[1] == 1:
        return p[:, 1, 0] - p[:, 0, 0]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def _bounding_diameter(vertices):
    if len(vertices) == 0:
        return 0.0
    return float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))


@dataclass(frozen=True)
class MeshConstants:
    h: float
    h_min: float
    c_inv: float
    c_tr: float
    shape_regularity: float
    dim: int = 2

    @property
    def quasi_uniformity(self) -> float:
        return self.h / self.h_min


def build_interval_mesh(n_cells: int, x0: float = 0.0, x1: float = 1.0) -> Mesh:
    """Uniform mesh of ``[x0, x1]`` with both end points tagged DIRICHLET."""
    if int(n_cells) != n_cells or n_cells < 1:
        raise InvalidArgumentError(f"n_cells must be a positive integer, got {n_cells}")
    if not x0 < x1:
        raise InvalidArgumentError(f"need x0 < x1, got [{x0}, {x1}]")
    n = int(n_cells)
    x = np.linspace(x0, x1, n + 1)
    cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    return Mesh(x[:, None], cells, [[0], [n]], (DIRICHLET, DIRICHLET))


def build_unit_square(tags=DIRICHLET) -> Mesh:
    """The reference square split into two triangles."""
    v = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    c = [[0, 1, 2], [0, 2, 3]]
    f = [[0, 1], [1, 2], [2, 3], [3, 0]]
    if isinstance(tags, str):
        tags = (tags,) * 4
    return Mesh(v, c, f, tuple(tags))


def build_plate_with_hole(L: float, l: float, a: float, b: float, refinement: int = 0) -> Mesh:
    """Triangulate the rectangle ``(-L/2, L/2) x (-l/2, l/2)`` minus an ellipse.

    The ellipse ``(x/a)^2 + (y/b)^2 < 1`` is removed.  The mesh is the image
    of a structured polar grid: ring ``j`` interpolates linearly between the
    ellipse and the rectangle along each angular spoke.  Refinement level ``r``
    uses ``32 * 2**r`` spokes and ``8 * 2**r`` rings.  Quads are split along
    diagonals chosen per quadrant so the mesh is mirror symmetric about both
    axes.  Top and bottom edges are tagged NEUMANN_TRACTION, everything else
    NEUMANN_FREE.
    """
    if not (0 < a <= b):
        raise InvalidArgumentError(f"need 0 < a <= b, got a={a}, b={b}")
    if not (2 * b < min(L, l)):
        raise InvalidArgumentError(f"hole does not fit: need 2b < min(L, l), got b={b}, L={L}, l={l}")
    if int(refinement) != refinement or refinement < 0:
        raise InvalidArgumentError("refinement must be a nonnegative integer")
    n_ang = 32 * 2 ** int(refinement)
    n_rad = 8 * 2 ** int(refinement)

    phi = 2 * np.pi * np.arange(n_ang) / n_ang
    c, s = np.cos(phi), np.sin(phi)
    # snap the exact axis/diagonal angles so mirror images are bit-identical
    c[np.abs(c) < 1e-15] = 0.0
    s[np.abs(s) < 1e-15] = 0.0
    inner = np.stack([a * c, b * s], axis=1)
    scale = 1.0 / np.maximum(np.abs(c), np.abs(s))
    outer = np.stack([0.5 * L * c * scale, 0.5 * l * s * scale], axis=1)
    t = np.arange(n_rad + 1) / n_rad
    pts = inner[None, :, :] + t[:, None, None] * (outer - inner)[None, :, :]
    vertices = pts.reshape(-1, 2)

    def vid(j, i):
        return j * n_ang + (i % n_ang)

    cells = []
    q = n_ang // 4
    for j in range(n_rad):
        for i in range(n_ang):
            p00, p10, p01, p11 = vid(j, i), vid(j, i + 1), vid(j + 1, i), vid(j + 1, i + 1)
            if (i // q) % 2 == 0:
                cells += [(p00, p10, p11), (p00, p11, p01)]
            else:
                cells += [(p00, p10, p01), (p10, p11, p01)]

    facets, tags = [], []
    tol = 1e-9 * max(L, l)
    for i in range(n_ang):
        facets.append((vid(0, i + 1), vid(0, i)))
        tags.append(NEUMANN_FREE)
    for i in range(n_ang):
        e = (vid(n_rad, i), vid(n_rad, i + 1))
        ymid = 0.5 * (vertices[e[0], 1] + vertices[e[1], 1])
        tags.append(NEUMANN_TRACTION if abs(abs(ymid) - 0.5 * l) < tol else NEUMANN_FREE)
        facets.append(e)
    return Mesh(vertices, np.array(cells), np.array(facets), tuple(tags))


def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"ratemesh 1 {mesh.dim}"]
    lines += ["v " + " ".join(repr(float(x)) for x in row) for row in mesh.vertices]
    lines += ["c " + " ".join(str(int(i)) for i in row) for row in mesh.cells]
    lines += ["f " + " ".join(str(int(i)) for i in row) + f" {tag}" for row, tag in zip(mesh.facets, mesh.facet_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_triangle_mesh(path) -> Mesh:
    """Read a mesh in the ``ratemesh`` ASCII format (see module docstring)."""
    text = Path(path).read_text()
    dim = None
    verts, cells, facets, tags = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if dim is None:
            if len(parts) != 3 or parts[0] != "ratemesh" or parts[1] != "1" or parts[2] not in ("1", "2"):
                raise MeshFormatError(f"expected header 'ratemesh 1 <dim>', got {raw!r}", lineno)
            dim = int(parts[2])
            continue
        kind, rest = parts[0], parts[1:]
        try:
            if kind == "v" and len(rest) == dim:
                verts.append([float(x) for x in rest])
            elif kind == "c" and len(rest) == dim + 1:
                cells.append([int(x) for x in rest])
            elif kind == "f" and len(rest) == dim + 1:
                if rest[-1] not in TAGS:
                    raise MeshFormatError(f"unknown tag {rest[-1]!r}", lineno)
                facets.append([int(x) for x in rest[:-1]])
                tags.append(rest[-1])
            else:
                raise MeshFormatError(f"malformed record {raw!r}", lineno)
        except ValueError as exc:
            raise MeshFormatError(f"bad number in {raw!r} ({exc})", lineno) from None
    if dim is None:
        raise MeshFormatError("empty file", 1)
    if not cells:
        raise MeshFormatError("no cells", lineno)
    mesh = Mesh(np.array(verts, dtype=float).reshape(-1, dim), cells, np.array(facets).reshape(-1, dim), tuple(tags))
    ratio = mesh.h / float(mesh.cell_diameters.min())
    if ratio > QUASI_UNIFORMITY_BOUND:
        warnings.warn(f"mesh {path} has quasi-uniformity ratio {ratio:.2f} > {QUASI_UNIFORMITY_BOUND}", stacklevel=2)
    return mesh


def _largest_generalized_eig(A, B, maxiter):
    n = A.shape[0]
    if n <= 1500:
        w = scipy.linalg.eigh(A.toarray(), B.toarray(), eigvals_only=True, subset_by_index=[n - 1, n - 1])
        return float(w[-1])
    try:
        w = scipy.sparse.linalg.eigsh(A.tocsc(), k=1, M=B.tocsc(), which="LA", maxiter=maxiter, tol=1e-8,
                                      return_eigenvectors=False)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalError(f"eigensolve did not converge in {maxiter} iterations") from exc
    return float(w[0])


def estimate_inverse_constants(mesh: Mesh, maxiter: int = 5000, bound: float = QUASI_UNIFORMITY_BOUND) -> MeshConstants:
    """Sharp inverse-inequality constants for the P1 space on ``mesh``.

    ``c_inv = h * sqrt(lambda_max(K, M))`` and
    ``c_tr = h**0.5 * sqrt(lambda_max(M_boundary, M))`` where K, M and
    M_boundary are the scalar P1 stiffness, mass and boundary mass matrices.
    """
    from .assembly import boundary_mass_matrix, mass_matrix, stiffness_matrix

    M = mass_matrix(mesh)
    K = stiffness_matrix(mesh)
    Mb = boundary_mass_matrix(mesh)
    h = mesh.h
    h_min = float(mesh.cell_diameters.min())
    c_inv = h * math.sqrt(_largest_generalized_eig(K, M, maxiter))
    c_tr = math.sqrt(h * _largest_generalized_eig(Mb, M, maxiter))
    shape = float((mesh.cell_diameters / mesh.cell_inradii).max())
    consts = MeshConstants(h=h, h_min=h_min, c_inv=c_inv, c_tr=c_tr, shape_regularity=shape, dim=mesh.dim)
    if consts.quasi_uniformity > bound:
        log.warning("quasi-uniformity ratio %.2f exceeds %.1f; tau/h check may be pessimistic",
                    consts.quasi_uniformity, bound)
    return consts
