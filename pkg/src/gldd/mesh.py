"""Structured simplicial meshes for a layered box geometry.

The solver works on two meshes: a coarse mesh of the full box (the global
domain) and a fine mesh of a thin strip at the top of the box (the local
domain).  Both are built from an axis-aligned grid of squares or cubes with
a fixed diagonal split, so point location is index arithmetic rather than
search.  A third kind of mesh, used only by the single-domain reference
solver, grades from the strip resolution down to the coarse one through
conforming transition bands.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import permutations
from typing import NamedTuple

import numpy as np

from .errors import GlddError, NonDivisibleSpacing, OutOfDomain

# Containment slack for barycentric coordinates in point location.
_BARY_TOL = 1e-12


class FacetTag(Enum):
    """Boundary facet classification."""

    DIRICHLET_OUTER = 1   # outer walls held at the ambient temperature
    NEUMANN_TOP = 2       # top wall receiving the surface flux
    INTERFACE_GAMMA = 3   # bottom of the strip, where the two meshes couple


@dataclass(frozen=True)
class GeometryConfig:
    """Box extents and strip thickness.

    ``L`` is the x extent, ``H`` the vertical extent (y in 2D, z in 3D),
    ``W`` the y extent in 3D (ignored in 2D).  The strip occupies the top
    ``H_minus`` of the box and spans the full horizontal cross-section.
    """

    dim: int = 2
    L: float = 1.0 / 40.0
    H: float = 1.0 / 40.0
    W: float = 1.0 / 40.0
    H_minus: float = 1.0 / 160.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if min(self.L, self.H, self.H_minus) <= 0 or (self.dim == 3 and self.W <= 0):
            raise ValueError("extents must be positive")
        if self.H_minus >= self.H:
            raise ValueError("strip thickness must be smaller than the box height")


class PointLocation(NamedTuple):
    cell: int
    barycentric: tuple


def _subdivision_2d():
    # Two triangles per grid square, diagonal from the lower-left corner.
    # Corner order inside a square: (0,0), (1,0), (0,1), (1,1).
    return [(0, 1, 3), (0, 3, 2)]


def _subdivision_3d():
    """Six positively oriented tetrahedra per cube, all sharing the main diagonal."""
    corners = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)])
    corner_id = {tuple(c): i for i, c in enumerate(corners)}
    tets = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        ids = [corner_id[tuple(p)] for p in path]
        mat = (corners[ids[1:]] - corners[ids[0]]).T
        if np.linalg.det(mat) < 0:
            ids[2], ids[3] = ids[3], ids[2]
        tets.append(tuple(ids))
    return tets


_TETS_PER_CUBE = _subdivision_3d()
_TRIS_PER_SQUARE = _subdivision_2d()


class SimplicialMesh:
    """Simplicial mesh given by explicit vertex and cell lists.

    Attributes
    ----------
    vertices : (nv, dim) float array
    cells : (nc, dim+1) int array, positively oriented
    boundary_facets : list of (vertex tuple, FacetTag)
    h : nominal cell size
    """

    def __init__(self, vertices, cells, tag_rule, h):
        self.vertices = np.asarray(vertices, dtype=float)
        self.cells = np.asarray(cells, dtype=np.int64)
        self.dim = self.vertices.shape[1]
        self.h = float(h)
        self._build_boundary(tag_rule)
        for arr in (self.vertices, self.cells, self.facet_vertices,
                    self.facet_tags, self.facet_cells):
            arr.setflags(write=False)

    def _build_boundary(self, tag_rule):
        # A facet is a boundary facet iff it is a face of exactly one cell.
        d = self.dim
        counts: dict = {}
        for c, cell in enumerate(self.cells):
            for loc in range(d + 1):
                face = tuple(sorted(np.delete(cell, loc)))
                if face in counts:
                    counts[face] = None
                else:
                    counts[face] = (c, loc)
        facets, tags, owners = [], [], []
        for c, cell in enumerate(self.cells):
            for loc in range(d + 1):
                face = tuple(sorted(np.delete(cell, loc)))
                if counts[face] == (c, loc):
                    facets.append(face)
                    owners.append(c)
                    tags.append(tag_rule(self.vertices[list(face)]).value)
        self.facet_vertices = np.asarray(facets, dtype=np.int64)
        self.facet_tags = np.asarray(tags, dtype=np.int64)
        self.facet_cells = np.asarray(owners, dtype=np.int64)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def boundary_facets(self):
        return [(tuple(f), FacetTag(t))
                for f, t in zip(self.facet_vertices, self.facet_tags)]

    def cell_volume(self, c):
        pts = self.vertices[self.cells[c]]
        mat = (pts[1:] - pts[0]).T
        return abs(np.linalg.det(mat)) / (2.0 if self.dim == 2 else 6.0)

    def facet_measure(self, facet):
        pts = self.vertices[list(facet)]
        if self.dim == 2:
            return float(np.linalg.norm(pts[1] - pts[0]))
        return 0.5 * float(np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0])))

    def facet_normal(self, facet, owner_cell):
        """Unit normal of a boundary facet pointing out of its owner cell."""
        pts = self.vertices[list(facet)]
        if self.dim == 2:
            t = pts[1] - pts[0]
            n = np.array([t[1], -t[0]])
        else:
            n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
        n = n / np.linalg.norm(n)
        opposite = [v for v in self.cells[owner_cell] if v not in set(facet)]
        outward = pts.mean(axis=0) - self.vertices[opposite[0]]
        if np.dot(n, outward) < 0:
            n = -n
        return n


class StructuredMesh(SimplicialMesh):
    """Uniform grid of squares/cubes split into simplices, O(1) point location."""

    def __init__(self, origin, extents, h, tag_rule):
        origin = np.asarray(origin, dtype=float)
        dim = len(origin)
        self.origin = origin
        self.ncells_axis = tuple(_divisions(e, h) for e in np.asarray(extents))
        # actual extents follow the grid so location arithmetic stays exact
        self.extents = h * np.asarray(self.ncells_axis, dtype=float)
        vertices = self._make_vertices(dim, h)
        cells = self._make_cells(dim)
        super().__init__(vertices, cells, tag_rule, h)
        self._build_location_tables()

    def _make_vertices(self, dim, h):
        axes = [self.origin[d] + h * np.arange(self.ncells_axis[d] + 1)
                for d in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        # vertex index runs x fastest, then y, then z
        return np.stack([g.T.ravel() for g in grids], axis=1)

    def _vertex_id(self, idx):
        nx = self.ncells_axis[0] + 1
        if len(idx) == 2:
            i, j = idx
            return j * nx + i
        i, j, k = idx
        ny = self.ncells_axis[1] + 1
        return (k * ny + j) * nx + i

    def _make_cells(self, dim):
        cells = []
        if dim == 2:
            nx, ny = self.ncells_axis
            for j in range(ny):
                for i in range(nx):
                    # corner order inside the square: (0,0), (1,0), (0,1), (1,1)
                    corners = [self._vertex_id((i + a, j + b))
                               for b in (0, 1) for a in (0, 1)]
                    for tri in _TRIS_PER_SQUARE:
                        cells.append([corners[t] for t in tri])
        else:
            nx, ny, nz = self.ncells_axis
            for k in range(nz):
                for j in range(ny):
                    for i in range(nx):
                        corners = [self._vertex_id((i + a, j + b, k + c))
                                   for c in (0, 1) for b in (0, 1) for a in (0, 1)]
                        for tet in _TETS_PER_CUBE:
                            cells.append([corners[t] for t in tet])
        return np.asarray(cells, dtype=np.int64)

    def _build_location_tables(self):
        # Inverse reference maps for every cell shape that occurs in a grid
        # block; cells are translated copies, so one inverse per shape.
        shapes = _TRIS_PER_SQUARE if self.dim == 2 else _TETS_PER_CUBE
        ref_corners = _block_corners(self.dim)
        inv = []
        for shape in shapes:
            pts = ref_corners[list(shape)] * self.h
            mat = (pts[1:] - pts[0]).T
            inv.append(np.linalg.inv(mat))
        self._shape_inv = inv

    def cells_per_block(self):
        return len(_TRIS_PER_SQUARE) if self.dim == 2 else len(_TETS_PER_CUBE)

    def block_of_cell(self, cell_index):
        return cell_index // self.cells_per_block()


def _block_corners(dim):
    if dim == 2:
        return np.array([[a, b] for b in (0, 1) for a in (0, 1)], dtype=float)
    return np.array([[a, b, c] for c in (0, 1) for b in (0, 1) for a in (0, 1)],
                    dtype=float)


def _divisions(extent, h):
    n = extent / h
    if abs(n - round(n)) > 1e-9:
        raise NonDivisibleSpacing(f"extent {extent} is not a multiple of spacing {h}")
    n = int(round(n))
    if n < 1:
        raise NonDivisibleSpacing(f"spacing {h} too coarse for extent {extent}")
    return n


# ----------------------------------------------------------------------
# public constructors
# ----------------------------------------------------------------------

def build_global_mesh(geom: GeometryConfig, h_plus: float) -> StructuredMesh:
    """Mesh of the full box; top facets Neumann, every other wall Dirichlet."""
    tol = 1e-10
    top = geom.H

    def tag(facet_pts):
        if np.all(np.abs(facet_pts[:, -1] - top) < tol):
            return FacetTag.NEUMANN_TOP
        return FacetTag.DIRICHLET_OUTER

    extents = (geom.L, geom.H) if geom.dim == 2 else (geom.L, geom.W, geom.H)
    origin = np.zeros(geom.dim)
    return StructuredMesh(origin, extents, h_plus, tag)


def build_local_mesh(geom: GeometryConfig, h_minus: float) -> StructuredMesh:
    """Mesh of the top strip.

    The strip's top keeps the Neumann tag, its bottom is the coupling
    interface, and the lateral sides (which lie on the outer walls) stay
    Dirichlet.
    """
    tol = 1e-10
    bottom = geom.H - geom.H_minus

    def tag(facet_pts):
        vert = facet_pts[:, -1]
        if np.all(np.abs(vert - geom.H) < tol):
            return FacetTag.NEUMANN_TOP
        if np.all(np.abs(vert - bottom) < tol):
            return FacetTag.INTERFACE_GAMMA
        return FacetTag.DIRICHLET_OUTER

    if geom.dim == 2:
        origin = (0.0, bottom)
        extents = (geom.L, geom.H_minus)
    else:
        origin = (0.0, 0.0, bottom)
        extents = (geom.L, geom.W, geom.H_minus)
    return StructuredMesh(np.asarray(origin), extents, h_minus, tag)


def build_fitted_mesh(geom: GeometryConfig, h_plus: float, h_minus: float,
                      mode: str = "uniform-fine") -> SimplicialMesh:
    """Single mesh of the whole box that resolves the strip.

    'uniform-fine' uses the strip spacing everywhere.  'graded' (2D only)
    keeps the strip spacing in and just below the strip and coarsens toward
    the bottom through conforming 2:1 transition bands, ending at the box
    spacing.
    """
    if mode == "uniform-fine":
        return build_global_mesh(geom, h_minus)
    if mode != "graded":
        raise ValueError(f"unknown refinement mode {mode!r}")
    if geom.dim != 2:
        raise GlddError("graded refinement is implemented for dim=2 only")
    return _graded_mesh_2d(geom, h_plus, h_minus)


def _graded_mesh_2d(geom, h_plus, h_minus):
    nfine = _divisions(geom.H_minus, h_minus)
    _divisions(geom.L, h_plus)
    ratio = h_plus / h_minus
    if abs(ratio - 2 ** round(np.log2(ratio))) > 1e-9 or ratio < 2:
        raise NonDivisibleSpacing(
            "graded mode needs a power-of-two spacing ratio of at least 2")
    doublings = int(round(np.log2(ratio)))
    below = geom.H - geom.H_minus
    trans_height = 2.0 * h_plus - 2.0 * h_minus
    slack = below - trans_height
    if slack < -1e-12:
        raise NonDivisibleSpacing(
            "box too shallow for the transition bands below the strip")
    # extra fine rows so the remaining depth is a whole number of coarse rows
    per = int(round(h_plus / h_minus))
    slack_units = int(round(slack / h_minus))
    if abs(slack - slack_units * h_minus) > 1e-12:
        raise NonDivisibleSpacing("strip offset is not a multiple of the fine spacing")
    extra_fine = slack_units % per
    ncoarse = (slack_units - extra_fine) // per

    tol = 1e-10

    def tag(facet_pts):
        if np.all(np.abs(facet_pts[:, -1] - geom.H) < tol):
            return FacetTag.NEUMANN_TOP
        return FacetTag.DIRICHLET_OUTER

    verts: dict = {}
    coords = []

    def vid(x, y):
        key = (round(x / h_minus * 2), round(y / h_minus * 2))
        if key not in verts:
            verts[key] = len(coords)
            coords.append((x, y))
        return verts[key]

    cells = []

    def uniform_rows(y0, nrows, s):
        ncols = int(round(geom.L / s))
        for r in range(nrows):
            y, yt = y0 + r * s, y0 + (r + 1) * s
            for c in range(ncols):
                x, xr = c * s, (c + 1) * s
                v00, v10 = vid(x, y), vid(xr, y)
                v01, v11 = vid(x, yt), vid(xr, yt)
                cells.append((v00, v10, v11))
                cells.append((v00, v11, v01))
        return y0 + nrows * s

    def transition_row(y0, s):
        # one band of height s: bottom edges of length s, top edges s/2
        ncols = int(round(geom.L / s))
        yt = y0 + s
        for c in range(ncols):
            x = c * s
            b0, b1 = vid(x, y0), vid(x + s, y0)
            t0, t1, t2 = vid(x, yt), vid(x + s / 2.0, yt), vid(x + s, yt)
            cells.append((b0, b1, t1))
            cells.append((b0, t1, t0))
            cells.append((b1, t2, t1))
        return yt

    y = uniform_rows(0.0, ncoarse, h_plus)
    s = h_plus
    for _ in range(doublings):
        y = transition_row(y, s)
        s /= 2.0
    y = uniform_rows(y, extra_fine + nfine, h_minus)
    if abs(y - geom.H) > 1e-12:
        raise NonDivisibleSpacing("graded construction did not close the box")
    return SimplicialMesh(np.asarray(coords), np.asarray(cells), tag, h_minus)


# ----------------------------------------------------------------------
# point location
# ----------------------------------------------------------------------

def locate_point(mesh: SimplicialMesh, x) -> PointLocation:
    """Find the cell containing x and its barycentric coordinates.

    Uses grid index arithmetic on structured meshes and a linear scan
    otherwise; when x sits on a shared facet the cell with the lowest
    index wins.  Raises OutOfDomain for points outside the box.
    """
    x = np.asarray(x, dtype=float)
    if not hasattr(mesh, "origin"):
        return _locate_point_scan(mesh, x)
    rel = x - mesh.origin
    for d in range(mesh.dim):
        if rel[d] < -1e-12 or rel[d] > mesh.extents[d] + 1e-12:
            raise OutOfDomain(f"point {tuple(x)} lies outside the mesh box")
    # points within the box tolerance are snapped onto the closed box
    x = np.clip(x, mesh.origin, mesh.origin + mesh.extents)
    rel = x - mesh.origin

    # candidate grid blocks around the nominal one, lowest block index first
    s = rel / mesh.h
    cand_axis = []
    for d in range(mesh.dim):
        n = mesh.ncells_axis[d]
        i0 = int(np.floor(s[d]))
        ids = {min(max(i0 + k, 0), n - 1) for k in (-1, 0, 1)}
        cand_axis.append(sorted(ids))

    nshapes = mesh.cells_per_block()
    blocks = []
    if mesh.dim == 2:
        nx = mesh.ncells_axis[0]
        for j in cand_axis[1]:
            for i in cand_axis[0]:
                blocks.append(j * nx + i)
    else:
        nx, ny = mesh.ncells_axis[0], mesh.ncells_axis[1]
        for k in cand_axis[2]:
            for j in cand_axis[1]:
                for i in cand_axis[0]:
                    blocks.append((k * ny + j) * nx + i)
    blocks.sort()

    for b in blocks:
        for t in range(nshapes):
            cell = b * nshapes + t
            v0 = mesh.vertices[mesh.cells[cell, 0]]
            lam_rest = mesh._shape_inv[t] @ (x - v0)
            lam0 = 1.0 - lam_rest.sum()
            lam = np.concatenate([[lam0], lam_rest])
            if np.all(lam >= -_BARY_TOL):
                return PointLocation(cell, tuple(lam))
    raise OutOfDomain(f"point {tuple(x)} not contained in any candidate cell")


def _locate_point_scan(mesh: SimplicialMesh, x) -> PointLocation:
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    for d in range(mesh.dim):
        if x[d] < lo[d] - 1e-12 or x[d] > hi[d] + 1e-12:
            raise OutOfDomain(f"point {tuple(x)} lies outside the mesh box")
    x = np.clip(x, lo, hi)
    for cell in range(mesh.num_cells):
        pts = mesh.vertices[mesh.cells[cell]]
        if np.any(x < pts.min(axis=0) - 1e-12) or \
                np.any(x > pts.max(axis=0) + 1e-12):
            continue
        J = (pts[1:] - pts[0]).T
        lam_rest = np.linalg.solve(J, x - pts[0])
        lam = np.concatenate([[1.0 - lam_rest.sum()], lam_rest])
        if np.all(lam >= -_BARY_TOL):
            return PointLocation(cell, tuple(lam))
    raise OutOfDomain(f"point {tuple(x)} not contained in any cell")


def interface_facets(mesh: SimplicialMesh):
    """Coupling facets of the strip with their outward unit normals."""
    out = []
    for f, t, c in zip(mesh.facet_vertices, mesh.facet_tags, mesh.facet_cells):
        if t == FacetTag.INTERFACE_GAMMA.value:
            out.append((tuple(f), mesh.facet_normal(tuple(f), c)))
    return out


def dump_mesh(mesh: SimplicialMesh, path):
    """Write the mesh as plain text: dim / vertices / cells / tagged facets."""
    with open(path, "w") as fh:
        fh.write(f"dim {mesh.dim}\n")
        fh.write(f"vertices {mesh.num_vertices}\n")
        for v in mesh.vertices:
            fh.write(" ".join(f"{c:.17g}" for c in v) + "\n")
        fh.write(f"cells {mesh.num_cells}\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"boundary_facets {len(mesh.facet_vertices)}\n")
        for f, t in zip(mesh.facet_vertices, mesh.facet_tags):
            fh.write(" ".join(str(int(v)) for v in f) + f" {FacetTag(t).name}\n")
