"""Structured Q1 meshes: 2D slabs, 3D boxes and a truncated-ellipsoid left ventricle.

Coordinates are in meters. Cells follow VTK vertex ordering (quad / hexahedron).
Boundary facets are stored with outward orientation so that the cross product of
their edge tangents points out of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# boundary labels
EPI = 0
ENDO = 1
BASE = 2
ALL = 3

LABEL_NAMES = {EPI: "epi", ENDO: "endo", BASE: "base", ALL: "all"}


class MeshError(ValueError):
    """Invalid mesh descriptor or degenerate geometry."""


@dataclass
class Mesh:
    """Conforming Q1 mesh with labeled boundary facets.

    vertices : (nv, dim) float64, meters
    cells    : (nc, 2**dim) int32, VTK node order
    facets   : (nf, 2**(dim-1)) int32, outward oriented
    facet_labels : (nf,) int
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    h_mean: float
    meta: dict = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def facets_with_label(self, label: int) -> np.ndarray:
        return self.facets[self.facet_labels == label]

    def boundary_vertices(self, label: int) -> np.ndarray:
        return np.unique(self.facets_with_label(label))


def _structured_box(extent, divisions):
    """Vertices and cells of a structured grid on [0, L1] x ... with given divisions."""
    dim = len(extent)
    axes = [np.linspace(0.0, extent[k], divisions[k] + 1) for k in range(dim)]
    if dim == 2:
        nx, ny = divisions
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        verts = np.column_stack([X.ravel(order="F"), Y.ravel(order="F")])
        # vertex index (i, j) -> i + j*(nx+1)
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i = i.ravel(order="F")
        j = j.ravel(order="F")
        v0 = i + j * (nx + 1)
        cells = np.column_stack([v0, v0 + 1, v0 + 1 + (nx + 1), v0 + (nx + 1)])
    else:
        nx, ny, nz = divisions
        X, Y, Z = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        verts = np.column_stack(
            [X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")]
        )
        nvx, nvy = nx + 1, ny + 1
        i, j, k = np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
        )
        i = i.ravel(order="F")
        j = j.ravel(order="F")
        k = k.ravel(order="F")
        v0 = i + j * nvx + k * nvx * nvy
        dx, dy, dz = 1, nvx, nvx * nvy
        cells = np.column_stack(
            [
                v0,
                v0 + dx,
                v0 + dx + dy,
                v0 + dy,
                v0 + dz,
                v0 + dx + dz,
                v0 + dx + dy + dz,
                v0 + dy + dz,
            ]
        )
    return verts.astype(np.float64), cells.astype(np.int32)


# local facet node orderings (outward oriented) per VTK cell convention
_HEX_FACES = np.array(
    [
        [0, 3, 2, 1],  # z-
        [4, 5, 6, 7],  # z+
        [0, 1, 5, 4],  # y-
        [2, 3, 7, 6],  # y+
        [0, 4, 7, 3],  # x-
        [1, 2, 6, 5],  # x+
    ],
    dtype=np.int32,
)

_QUAD_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0]], dtype=np.int32)


def extract_boundary_facets(cells: np.ndarray, dim: int) -> np.ndarray:
    """Facets belonging to exactly one cell, outward oriented."""
    local = _HEX_FACES if dim == 3 else _QUAD_EDGES
    all_facets = cells[:, local.reshape(-1)].reshape(-1, local.shape[1])
    key = np.sort(all_facets, axis=1)
    order = np.lexsort(key.T[::-1])
    key_sorted = key[order]
    same_as_prev = np.all(key_sorted[1:] == key_sorted[:-1], axis=1)
    counts = np.ones(len(key_sorted), dtype=np.int64)
    # duplicated interior facets appear exactly twice
    dup = np.zeros(len(key_sorted), dtype=bool)
    dup[1:] |= same_as_prev
    dup[:-1] |= same_as_prev
    boundary_rows = order[~dup]
    return all_facets[boundary_rows]


def generate_slab_mesh(extent, resolution) -> Mesh:
    """Axis-aligned slab; all boundary facets carry the zero-flux label.

    extent : sequence of 2 or 3 lengths (m)
    resolution : target spacing h (m) or explicit division counts
    """
    extent = tuple(float(e) for e in extent)
    if any(e <= 0 for e in extent):
        raise MeshError(f"slab extents must be positive, got {extent}")
    dim = len(extent)
    if dim not in (2, 3):
        raise MeshError("slab mesh supports 2D or 3D extents")
    if np.isscalar(resolution):
        h = float(resolution)
        if h <= 0:
            raise MeshError("resolution must be positive")
        divisions = [max(1, int(round(e / h))) for e in extent]
    else:
        divisions = [int(d) for d in resolution]
        if any(d < 1 for d in divisions):
            raise MeshError("division counts must be >= 1")
    verts, cells = _structured_box(extent, divisions)
    facets = extract_boundary_facets(cells, dim)
    labels = np.full(len(facets), ALL, dtype=np.int32)
    h_mean = float(np.mean([extent[k] / divisions[k] for k in range(dim)]))
    return Mesh(dim, verts, cells, facets, labels, h_mean, {"kind": "slab"})


# ---------------------------------------------------------------------------
# truncated-ellipsoid LV shell
# ---------------------------------------------------------------------------


def _half_cubed_sphere(n: int):
    """Quad mesh of the unit hemisphere z <= 0 via cube-face projection.

    Returns (points (nv,3) on the unit sphere, quads (nq,4)) with the equator
    z = 0 as the open rim. No polar degeneracy.
    """
    m = max(1, n // 2)  # vertical divisions on side faces
    verts: list[tuple[float, float, float]] = []
    index: dict[tuple[int, int, int], int] = {}
    quantum = 1e-9

    def vid(p):
        key = tuple(int(round(c / quantum)) for c in p)
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    quads = []

    def add_face(corner_fn, nu, nv_, flip=False):
        grid = np.empty((nu + 1, nv_ + 1), dtype=np.int64)
        for a in range(nu + 1):
            for b in range(nv_ + 1):
                p = np.asarray(corner_fn(a / nu, b / nv_), dtype=float)
                p = p / np.linalg.norm(p)
                grid[a, b] = vid((p[0], p[1], p[2]))
        for a in range(nu):
            for b in range(nv_):
                q = (grid[a, b], grid[a + 1, b], grid[a + 1, b + 1], grid[a, b + 1])
                quads.append(q[::-1] if flip else q)

    # bottom face z = -1 of the cube [-1,1]^3 (flipped so normals point outward)
    add_face(lambda s, t: (-1 + 2 * s, -1 + 2 * t, -1.0), n, n, flip=True)
    # four side faces, cube z from -1 to 0
    add_face(lambda s, t: (1.0, -1 + 2 * s, -1 + t), n, m)
    add_face(lambda s, t: (-1.0, 1 - 2 * s, -1 + t), n, m)
    add_face(lambda s, t: (1 - 2 * s, 1.0, -1 + t), n, m)
    add_face(lambda s, t: (-1 + 2 * s, -1.0, -1 + t), n, m)

    return np.asarray(verts, dtype=np.float64), np.asarray(quads, dtype=np.int64)


def generate_lv_mesh(
    endo_radii,
    epi_radii,
    truncation_z: float = 0.0,
    resolution: int = 8,
    n_trans: int | None = None,
) -> Mesh:
    """Watertight truncated-ellipsoid shell with epi/endo/base facet labels.

    endo_radii, epi_radii : semi-axes (a, b, c) in meters; apex at z = -c,
    base plane at z = truncation_z. resolution sets the per-cube-face surface
    grid; n_trans the number of elements through the wall (default
    max(2, resolution // 4)).
    """
    a0, b0, c0 = (float(v) for v in endo_radii)
    a1, b1, c1 = (float(v) for v in epi_radii)
    if min(a0, b0, c0) <= 0 or min(a1, b1, c1) <= 0:
        raise MeshError("ellipsoid radii must be positive")
    if not (a1 > a0 and b1 > b0 and c1 > c0):
        raise MeshError("epi radii must exceed endo radii (positive wall thickness)")
    zt = float(truncation_z)
    if not (-c0 < zt < c0):
        raise MeshError("truncation plane must intersect the cavity")
    resolution = int(resolution)
    if resolution < 2:
        raise MeshError("resolution must be >= 2")
    if n_trans is None:
        n_trans = max(2, resolution // 4)
    n_trans = int(n_trans)
    if n_trans < 2:
        raise MeshError("need at least 2 elements through the wall")

    sphere_pts, sphere_quads = _half_cubed_sphere(resolution)
    ns = len(sphere_pts)
    # polar angle from the apex (south pole) and azimuth of each surface point
    omega = np.arccos(np.clip(-sphere_pts[:, 2], -1.0, 1.0))
    theta = np.arctan2(sphere_pts[:, 1], sphere_pts[:, 0])

    layers = np.linspace(0.0, 1.0, n_trans + 1)
    verts = np.empty((ns * (n_trans + 1), 3), dtype=np.float64)
    for li, t in enumerate(layers):
        a = a0 + t * (a1 - a0)
        b = b0 + t * (b1 - b0)
        c = c0 + t * (c1 - c0)
        u_max = np.arccos(np.clip(-zt / c, -1.0, 1.0))
        u = omega * (u_max / (0.5 * np.pi))
        sl = np.sin(u)
        verts[li * ns : (li + 1) * ns, 0] = a * sl * np.cos(theta)
        verts[li * ns : (li + 1) * ns, 1] = b * sl * np.sin(theta)
        verts[li * ns : (li + 1) * ns, 2] = -c * np.cos(u)

    nq = len(sphere_quads)
    cells = np.empty((nq * n_trans, 8), dtype=np.int32)
    for li in range(n_trans):
        lo = sphere_quads + li * ns
        hi = sphere_quads + (li + 1) * ns
        # endo surface quads are outward w.r.t. the cavity; the hexahedron
        # bottom face (endo side) must be the inner layer
        cells[li * nq : (li + 1) * nq, :4] = lo
        cells[li * nq : (li + 1) * nq, 4:] = hi

    facets = extract_boundary_facets(cells, 3)
    labels = np.empty(len(facets), dtype=np.int32)
    fc = verts[facets].mean(axis=1)
    # classify: base facets lie on z = zt; otherwise compare radial position
    # with the mid-wall surface at matching polar angle
    base_tol = 1e-9 + 1e-6 * c1
    on_base = np.abs(fc[:, 2] - zt) < base_tol
    # transmural coordinate of facet centroid via layer index of its vertices
    layer_of_vertex = np.repeat(np.arange(n_trans + 1), ns)
    f_layer = layer_of_vertex[facets].mean(axis=1)
    labels[:] = EPI
    labels[f_layer < 0.5] = ENDO
    labels[on_base] = BASE

    endo_n = int(np.sum(labels == ENDO))
    epi_n = int(np.sum(labels == EPI))
    base_n = int(np.sum(labels == BASE))
    if endo_n == 0 or epi_n == 0 or base_n == 0:
        raise MeshError("LV boundary labeling failed to produce all three sets")

    cell_vol = _hex_volumes(verts, cells)
    if np.any(cell_vol <= 0):
        raise MeshError("LV mesh contains non-positive cell volumes")
    h_mean = float(np.mean(cell_vol ** (1.0 / 3.0)))

    meta = {
        "kind": "lv",
        "endo_radii": (a0, b0, c0),
        "epi_radii": (a1, b1, c1),
        "truncation_z": zt,
        "analytic_cavity_volume": truncated_ellipsoid_volume(a0, b0, c0, zt),
        "apex_z": -c1,
    }
    return Mesh(3, verts, cells, facets, labels, h_mean, meta)


def truncated_ellipsoid_volume(a: float, b: float, c: float, zt: float) -> float:
    """Volume of {x²/a² + y²/b² + z²/c² <= 1, z <= zt}."""
    return float(np.pi * a * b * (zt - zt**3 / (3 * c**2) + 2.0 * c / 3.0))


def _hex_volumes(verts, cells):
    """Cell volumes by 2x2x2 Gauss quadrature of det(J)."""
    from .fem import shape_gradients_ref, gauss_points

    pts, wts = gauss_points(3)
    dN = shape_gradients_ref(3, pts)  # (nq, 8, 3)
    xe = verts[cells]  # (nc, 8, 3)
    J = np.einsum("cni,qnj->cqij", xe, dN)
    detJ = np.linalg.det(J)
    return np.einsum("q,cq->c", wts, detJ)


# ---------------------------------------------------------------------------
# eta (impairment) regions
# ---------------------------------------------------------------------------


@dataclass
class Region:
    """Geometric primitive with an impairment value eta in [0, 1].

    shape: 'sphere' (center, radius), 'ellipsoid' (center, radii) or
    'cylinder' (center, radius, axis; infinite/transmural along axis).
    In 2D, spheres and cylinders reduce to discs and ellipsoids to ellipses.
    """

    shape: str
    eta: float
    center: tuple
    radius: float = 0.0
    radii: tuple = ()
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise MeshError(f"eta must lie in [0, 1], got {self.eta}")
        if self.shape not in ("sphere", "ellipsoid", "cylinder"):
            raise MeshError(f"unknown region shape '{self.shape}'")

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        dim = p.shape[1]
        c = np.asarray(self.center, dtype=float)[:dim]
        d = p - c
        if self.shape == "sphere":
            return np.einsum("ij,ij->i", d, d) <= self.radius**2
        if self.shape == "ellipsoid":
            r = np.asarray(self.radii, dtype=float)[:dim]
            s = d / r
            return np.einsum("ij,ij->i", s, s) <= 1.0
        # cylinder: distance from the axis line through center
        if dim == 2:
            return np.einsum("ij,ij->i", d, d) <= self.radius**2
        ax = np.asarray(self.axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        proj = d - np.outer(d @ ax, ax)
        return np.einsum("ij,ij->i", proj, proj) <= self.radius**2


def assign_eta(mesh: Mesh, regions: list[Region]) -> np.ndarray:
    """Per-vertex eta field: 1 outside all regions, overlap resolved by minimum."""
    eta = np.ones(mesh.num_vertices)
    for reg in regions:
        inside = reg.contains(mesh.vertices)
        eta[inside] = np.minimum(eta[inside], reg.eta)
    return eta
