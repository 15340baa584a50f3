"""Rule-based fiber architecture: transmural Laplace coordinate with linear
helix/sheet angle interpolation between endocardial and epicardial values.

Produces orthonormal right-handed triads (f0, s0, n0) at quadrature points and
at vertices. Slab meshes get uniform in-plane triads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FemSpace, assemble_diffusion
from .mesh import ENDO, EPI, Mesh


@dataclass
class FiberField:
    """Per-quadrature-point and per-vertex unit triads."""

    f0_q: np.ndarray
    s0_q: np.ndarray
    n0_q: np.ndarray
    f0_v: np.ndarray
    s0_v: np.ndarray
    n0_v: np.ndarray
    transmural_v: np.ndarray | None = None
    transmural_q: np.ndarray | None = None
    circ_v: np.ndarray | None = None
    long_v: np.ndarray | None = None


def uniform_fibers(mesh: Mesh, space: FemSpace, angle_deg: float = 0.0) -> FiberField:
    """Constant triad; fiber rotated by angle_deg in the x-y plane."""
    a = np.deg2rad(angle_deg)
    if mesh.dim == 2:
        f0 = np.array([np.cos(a), np.sin(a)])
        s0 = np.array([-np.sin(a), np.cos(a)])
        n0 = np.zeros(2)
    else:
        f0 = np.array([np.cos(a), np.sin(a), 0.0])
        s0 = np.array([-np.sin(a), np.cos(a), 0.0])
        n0 = np.array([0.0, 0.0, 1.0])
    nq = space.num_qp
    nv = mesh.num_vertices
    tile = lambda v, n: np.tile(v, (n, 1))
    return FiberField(tile(f0, nq), tile(s0, nq), tile(n0, nq),
                      tile(f0, nv), tile(s0, nv), tile(n0, nv))


def transmural_coordinate(mesh: Mesh, space: FemSpace) -> np.ndarray:
    """Laplace solution with endo = 0, epi = 1, natural elsewhere."""
    endo_v = mesh.boundary_vertices(ENDO)
    epi_v = mesh.boundary_vertices(EPI)
    if len(endo_v) == 0 or len(epi_v) == 0:
        raise ValueError("mesh lacks labeled endo/epi boundaries for fibers")
    eye = np.tile(np.eye(mesh.dim), (mesh.num_cells, len(space.qw), 1, 1))
    K = assemble_diffusion(space, eye)

    nv = mesh.num_vertices
    t = np.zeros(nv)
    t[epi_v] = 1.0
    fixed = np.zeros(nv, dtype=bool)
    fixed[endo_v] = True
    fixed[epi_v] = True
    free = ~fixed
    Kff = K[free][:, free].tocsc()
    rhs = -(K[free][:, fixed] @ t[fixed])
    t[free] = spla.splu(Kff).solve(rhs)
    return t


def _vertex_gradient(mesh: Mesh, space: FemSpace, vertex_field: np.ndarray):
    """Volume-weighted recovery of the Q1 field gradient at vertices."""
    fe = vertex_field[mesh.cells]  # (nc, nn)
    grad_qp = np.einsum("cn,cqni->cqi", fe, space.grad)  # (nc, nq, dim)
    wsum = space.wdet.sum(axis=1)  # (nc,)
    gcell = np.einsum("cq,cqi->ci", space.wdet, grad_qp)
    gv = np.zeros((mesh.num_vertices, mesh.dim))
    wv = np.zeros(mesh.num_vertices)
    for loc in range(mesh.cells.shape[1]):
        np.add.at(gv, mesh.cells[:, loc], gcell)
        np.add.at(wv, mesh.cells[:, loc], wsum)
    return gv / wv[:, None]


def _triads_from_coordinate(t, grad_t, alpha_endo, alpha_epi, beta_endo, beta_epi,
                            long_axis):
    """Helix/sheet triads from transmural coordinate values and gradients."""
    npts = len(t)
    e_t = grad_t / np.maximum(np.linalg.norm(grad_t, axis=1), 1e-30)[:, None]
    k = np.asarray(long_axis, dtype=float)
    k = k / np.linalg.norm(k)
    e_l = k[None, :] - np.einsum("pi,i->p", e_t, k)[:, None] * e_t
    nrm = np.linalg.norm(e_l, axis=1)
    degenerate = nrm < 1e-6
    if np.any(degenerate):
        # near the apex the wall normal aligns with the long axis; fall back
        # to a projected transverse direction
        alt = np.array([1.0, 0.0, 0.0])
        e_alt = alt[None, :] - np.einsum("pi,i->p", e_t, alt)[:, None] * e_t
        e_l[degenerate] = e_alt[degenerate]
        nrm = np.linalg.norm(e_l, axis=1)
    e_l = e_l / nrm[:, None]
    e_c = np.cross(e_l, e_t)

    alpha = np.deg2rad((1.0 - t) * alpha_endo + t * alpha_epi)
    beta = np.deg2rad((1.0 - t) * beta_endo + t * beta_epi)
    f0 = np.cos(alpha)[:, None] * e_c + np.sin(alpha)[:, None] * e_l
    f0 = f0 / np.linalg.norm(f0, axis=1)[:, None]
    # transmural direction orthogonalized against f0, then rotated by beta
    st = e_t - np.einsum("pi,pi->p", e_t, f0)[:, None] * f0
    st = st / np.linalg.norm(st, axis=1)[:, None]
    n_tmp = np.cross(f0, st)
    s0 = np.cos(beta)[:, None] * st + np.sin(beta)[:, None] * n_tmp
    s0 = s0 / np.linalg.norm(s0, axis=1)[:, None]
    n0 = np.cross(f0, s0)
    return f0, s0, n0, e_c, e_l


def generate_fibers(
    mesh: Mesh,
    space: FemSpace,
    alpha_endo: float = 60.0,
    alpha_epi: float = -60.0,
    beta_endo: float = -20.0,
    beta_epi: float = 20.0,
) -> FiberField:
    """Rule-based LV fibers; angles in degrees, each in (-90, 90)."""
    for name, val in (("alpha_endo", alpha_endo), ("alpha_epi", alpha_epi),
                      ("beta_endo", beta_endo), ("beta_epi", beta_epi)):
        if not (-90.0 < val < 90.0):
            raise ValueError(f"{name} must lie in (-90, 90) degrees, got {val}")
    if mesh.dim == 2:
        raise ValueError("rule-based fibers require a 3D LV mesh")

    t_v = transmural_coordinate(mesh, space)
    g_v = _vertex_gradient(mesh, space, t_v)
    f0v, s0v, n0v, ecv, elv = _triads_from_coordinate(
        t_v, g_v, alpha_endo, alpha_epi, beta_endo, beta_epi, (0, 0, 1.0))

    t_q = space.interpolate_at_qp(t_v).ravel()
    fe = t_v[mesh.cells]
    g_q = np.einsum("cn,cqni->cqi", fe, space.grad).reshape(-1, 3)
    f0q, s0q, n0q, _, _ = _triads_from_coordinate(
        t_q, g_q, alpha_endo, alpha_epi, beta_endo, beta_epi, (0, 0, 1.0))

    return FiberField(f0q, s0q, n0q, f0v, s0v, n0v,
                      transmural_v=t_v, transmural_q=t_q,
                      circ_v=ecv, long_v=elv)


def helix_angles(field: FiberField) -> np.ndarray:
    """Signed helix angle (degrees) of the vertex fiber directions."""
    fc = np.einsum("pi,pi->p", field.f0_v, field.circ_v)
    fl = np.einsum("pi,pi->p", field.f0_v, field.long_v)
    return np.rad2deg(np.arctan2(fl, fc))
