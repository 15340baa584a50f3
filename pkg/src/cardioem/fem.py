"""Q1 finite-element machinery on quad/hex meshes.

Provides quadrature, precomputed element geometry, scalar mass/stiffness
assembly, intergrid interpolation between two meshes of the same domain, and
linear/Newton solvers. Assembly loops are vectorized with fixed operation
order so repeated assemblies are bitwise identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

log = logging.getLogger(__name__)

# VTK node corner signs in reference coordinates [-1, 1]^dim
_CORNERS_3D = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)
_CORNERS_2D = np.array([[-1, -1], [+1, -1], [+1, +1], [-1, +1]], dtype=np.float64)


def corners(dim: int) -> np.ndarray:
    return _CORNERS_3D if dim == 3 else _CORNERS_2D


def gauss_points(dim: int):
    """Tensor 2-point Gauss rule: points (nq, dim), weights (nq,)."""
    g = 1.0 / np.sqrt(3.0)
    axis = np.array([-g, g])
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.column_stack([a.ravel() for a in grids])
    wts = np.ones(len(pts))
    return pts, wts


def shape_values(dim: int, pts: np.ndarray) -> np.ndarray:
    """Q1 shape values N (npts, nnodes)."""
    c = corners(dim)
    vals = np.ones((len(pts), len(c)))
    for k in range(dim):
        vals *= 0.5 * (1.0 + np.outer(pts[:, k], c[:, k]))
    return vals


def shape_gradients_ref(dim: int, pts: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients dN (npts, nnodes, dim)."""
    c = corners(dim)
    npts, nn = len(pts), len(c)
    grads = np.empty((npts, nn, dim))
    for d in range(dim):
        g = np.full((npts, nn), 0.5) * c[:, d]
        for k in range(dim):
            if k != d:
                g *= 0.5 * (1.0 + np.outer(pts[:, k], c[:, k]))
        grads[:, :, d] = g
    return grads


class FemSpace:
    """Precomputed element geometry for a mesh: Jacobians, physical shape
    gradients and quadrature point positions (reference configuration)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        dim = mesh.dim
        self.qp_ref, self.qw = gauss_points(dim)
        self.N = shape_values(dim, self.qp_ref)  # (nq, nn)
        dN = shape_gradients_ref(dim, self.qp_ref)  # (nq, nn, dim)
        xe = mesh.vertices[mesh.cells]  # (nc, nn, dim)
        J = np.einsum("cni,qnj->cqij", xe, dN)  # (nc, nq, dim, dim)
        self.detJ = np.linalg.det(J)
        if np.any(self.detJ <= 0):
            bad = int(np.argwhere(self.detJ <= 0)[0][0])
            raise ValueError(f"non-positive Jacobian in cell {bad}")
        Jinv = np.linalg.inv(J)
        # physical gradients: dN_phys[c,q,n,i] = dN[q,n,j] * Jinv[c,q,j,i]
        self.grad = np.einsum("qnj,cqji->cqni", dN, Jinv)
        self.qp_phys = np.einsum("qn,cni->cqi", self.N, xe)  # (nc, nq, dim)
        self.wdet = self.qw[None, :] * self.detJ  # (nc, nq)
        self.ndof = mesh.num_vertices

    @property
    def num_qp(self) -> int:
        return self.mesh.num_cells * len(self.qw)

    def interpolate_at_qp(self, vertex_field: np.ndarray) -> np.ndarray:
        """Q1 interpolation of a vertex field to (nc, nq) quadrature values."""
        fe = vertex_field[self.mesh.cells]
        return np.einsum("qn,cn->cq", self.N, fe)

    def integrate(self, qp_field: np.ndarray) -> float:
        return float(np.sum(self.wdet * qp_field))


def _assemble_from_cellmats(mesh: Mesh, cell_mats: np.ndarray) -> sp.csr_matrix:
    nn = mesh.cells.shape[1]
    rows = np.repeat(mesh.cells, nn, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nn)).ravel()
    A = sp.coo_matrix(
        (cell_mats.ravel(), (rows, cols)),
        shape=(mesh.num_vertices, mesh.num_vertices),
    )
    return A.tocsr()


def assemble_mass(space: FemSpace, qp_weight: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent mass matrix; optional per-quadrature-point weight (nc, nq)."""
    w = space.wdet if qp_weight is None else space.wdet * qp_weight
    cell_mats = np.einsum("cq,qn,qm->cnm", w, space.N, space.N)
    return _assemble_from_cellmats(space.mesh, cell_mats)


def lump_mass(M: sp.csr_matrix) -> np.ndarray:
    """Row-sum lumping to a diagonal vector."""
    return np.asarray(M.sum(axis=1)).ravel()


def assemble_diffusion(space: FemSpace, tensor_qp: np.ndarray) -> sp.csr_matrix:
    """Anisotropic stiffness: tensor_qp (nc, nq, dim, dim), symmetric PSD.

    Raises ValueError on non-symmetric input.
    """
    asym = np.max(np.abs(tensor_qp - np.swapaxes(tensor_qp, -1, -2)))
    scale = max(np.max(np.abs(tensor_qp)), 1e-300)
    if asym > 1e-10 * scale:
        raise ValueError(f"conductivity tensor not symmetric (asymmetry {asym:.3e})")
    flux = np.einsum("cqij,cqnj->cqni", tensor_qp, space.grad)
    cell_mats = np.einsum("cq,cqni,cqmi->cnm", space.wdet, flux, space.grad)
    return _assemble_from_cellmats(space.mesh, cell_mats)


# ---------------------------------------------------------------------------
# linear and Newton solvers
# ---------------------------------------------------------------------------


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


def solve_linear(A, b, tol: float = 1e-10, sym: bool = False, max_iter: int = 5000):
    """Solve A x = b to relative residual <= tol.

    SPD systems use Jacobi-preconditioned CG; general systems a sparse direct
    factorization. Raises SolverError carrying the final residual on failure.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    A = sp.csr_matrix(A)
    if sym:
        diag = A.diagonal()
        if np.all(diag > 0):
            Minv = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
            x, info = spla.cg(A, b, rtol=tol, maxiter=max_iter, M=Minv)
            res = np.linalg.norm(b - A @ x) / bnorm
            if info == 0 and res <= 10 * tol:
                return x
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    res = np.linalg.norm(b - A @ x) / bnorm
    if not np.isfinite(res) or res > max(tol, 1e-8):
        raise SolverError(
            f"linear solve residual {res:.3e} above tolerance {tol:.1e}",
            residual=res,
        )
    return x


def newton_solve(
    residual,
    jacobian_solve,
    x0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 25,
    max_halvings: int = 8,
    abs_tol: float | None = None,
):
    """Damped Newton with backtracking line search (halving, <= max_halvings).

    residual(x) -> r; jacobian_solve(x, r) -> dx solving J(x) dx = r.
    Convergence when ||r|| <= max(tol * ||r0||, abs_tol). Returns
    (x, iterations, history). Raises SolverError after max_iter.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    target = max(tol * rnorm, abs_tol if abs_tol is not None else 0.0)
    if rnorm <= target or rnorm == 0.0:
        return x, 0, history
    for it in range(1, max_iter + 1):
        dx = jacobian_solve(x, r)
        step = 1.0
        for _ in range(max_halvings + 1):
            x_trial = x - step * dx
            r_trial = residual(x_trial)
            rnorm_trial = np.linalg.norm(r_trial)
            if np.isfinite(rnorm_trial) and rnorm_trial < rnorm:
                break
            step *= 0.5
        else:
            raise SolverError(
                f"Newton line search stalled at iteration {it}",
                residual=rnorm,
                history=history,
            )
        x, r, rnorm = x_trial, r_trial, rnorm_trial
        history.append(rnorm)
        if rnorm <= target:
            return x, it, history
    raise SolverError(
        f"Newton did not converge in {max_iter} iterations (residual {rnorm:.3e})",
        residual=rnorm,
        history=history,
    )


# ---------------------------------------------------------------------------
# point location and intergrid transfer
# ---------------------------------------------------------------------------


def _invert_map(xe: np.ndarray, x: np.ndarray, dim: int, tol=1e-12, max_iter=30):
    """Reference coordinates of physical point x in the Q1 cell with nodes xe."""
    xi = np.zeros(dim)
    for _ in range(max_iter):
        N = shape_values(dim, xi[None, :])[0]
        dN = shape_gradients_ref(dim, xi[None, :])[0]
        rx = N @ xe - x
        if np.dot(rx, rx) < tol * tol:
            break
        J = xe.T @ dN
        xi = xi - np.linalg.solve(J, rx)
    return xi


@dataclass
class PointMap:
    """Interpolation data of a set of points in a donor mesh."""

    cells: np.ndarray  # (npts,) donor cell index
    xi: np.ndarray  # (npts, dim) reference coordinates
    weights: np.ndarray  # (npts, nn) Q1 weights
    clamped: np.ndarray  # (npts,) bool, outside donor and clamped to nearest


def locate_points(mesh: Mesh, points: np.ndarray, pad: float = 1e-8) -> PointMap:
    """Find the containing (or nearest) cell for each point.

    Points outside the donor mesh are clamped to the nearest cell and flagged;
    a warning is logged once per call.
    """
    dim = mesh.dim
    pts = np.asarray(points, dtype=float).reshape(-1, dim)
    xe_all = mesh.vertices[mesh.cells]  # (nc, nn, dim)
    lo = xe_all.min(axis=1)
    hi = xe_all.max(axis=1)
    span = np.maximum(hi - lo, 1e-300).max(axis=1)

    cells = np.full(len(pts), -1, dtype=np.int64)
    xis = np.zeros((len(pts), dim))
    clamped = np.zeros(len(pts), dtype=bool)

    # coarse candidate search via bounding boxes (meshes here are small)
    for p_idx, x in enumerate(pts):
        inside_box = np.all((x >= lo - pad * span[:, None]) &
                            (x <= hi + pad * span[:, None]), axis=1)
        candidates = np.flatnonzero(inside_box)
        best_cell, best_xi, best_excess = -1, None, np.inf
        for c in candidates:
            xi = _invert_map(xe_all[c], x, dim)
            excess = float(np.max(np.abs(xi)) - 1.0)
            if excess < best_excess:
                best_cell, best_xi, best_excess = c, xi, excess
            if excess <= 1e-8:
                break
        if best_cell < 0 or best_excess > 1e-6:
            # nearest-cell clamp by centroid distance
            centroid = xe_all.mean(axis=1)
            c = int(np.argmin(np.einsum("ij,ij->i", centroid - x, centroid - x)))
            xi = np.clip(_invert_map(xe_all[c], x, dim), -1.0, 1.0)
            best_cell, best_xi = c, xi
            clamped[p_idx] = True
        cells[p_idx] = best_cell
        xis[p_idx] = np.clip(best_xi, -1.0, 1.0)

    if np.any(clamped):
        log.warning("locate_points: %d of %d points clamped to nearest cell",
                    int(clamped.sum()), len(pts))
    weights = shape_values(dim, xis)
    return PointMap(cells, xis, weights, clamped)


class IntergridMap:
    """Interpolation maps between a fine mesh and a coarse mesh of the same
    domain: fine vertices in coarse cells, and coarse quadrature points in
    fine cells."""

    def __init__(self, fine: Mesh, coarse: Mesh, coarse_space: FemSpace | None = None,
                 fine_space: FemSpace | None = None):
        self.fine = fine
        self.coarse = coarse
        self.fine_in_coarse = locate_points(coarse, fine.vertices)
        cs = coarse_space if coarse_space is not None else FemSpace(coarse)
        cqp = cs.qp_phys.reshape(-1, coarse.dim)
        self.coarse_qp_in_fine = locate_points(fine, cqp)
        fs = fine_space if fine_space is not None else FemSpace(fine)
        fqp = fs.qp_phys.reshape(-1, fine.dim)
        self.fine_qp_in_coarse = locate_points(coarse, fqp)
        self._coarse_grad_at_fine_v = self._coarse_gradients(self.fine_in_coarse)
        self._coarse_grad_at_fine_qp = self._coarse_gradients(self.fine_qp_in_coarse)

    def _coarse_gradients(self, pmap: PointMap):
        """Physical shape-function gradients of the donor (coarse) cells at
        mapped points: (npts, nn, dim)."""
        dim = self.coarse.dim
        xe = self.coarse.vertices[self.coarse.cells[pmap.cells]]
        grads = np.empty((len(pmap.cells), xe.shape[1], dim))
        for i in range(len(pmap.cells)):
            dN = shape_gradients_ref(dim, pmap.xi[i][None, :])[0]
            J = xe[i].T @ dN
            grads[i] = dN @ np.linalg.inv(J)
        return grads

    def coarse_to_fine(self, coarse_vertex_field: np.ndarray) -> np.ndarray:
        """Interpolate a coarse vertex field (scalar or vector) at fine vertices."""
        conn = self.coarse.cells[self.fine_in_coarse.cells]
        vals = coarse_vertex_field[conn]
        return np.einsum("pn,pn...->p...", self.fine_in_coarse.weights, vals)

    def fine_to_coarse_qp(self, fine_vertex_field: np.ndarray) -> np.ndarray:
        """Interpolate a fine vertex field at coarse quadrature points (flat)."""
        conn = self.fine.cells[self.coarse_qp_in_fine.cells]
        vals = fine_vertex_field[conn]
        return np.einsum("pn,pn...->p...", self.coarse_qp_in_fine.weights, vals)

    def deformation_at_fine_vertices(self, d_coarse: np.ndarray) -> np.ndarray:
        """F = I + grad(d) of the coarse displacement at fine vertices: (nv, dim, dim)."""
        return self._deformation(d_coarse, self.fine_in_coarse,
                                 self._coarse_grad_at_fine_v)

    def deformation_at_fine_qp(self, d_coarse: np.ndarray) -> np.ndarray:
        """F at fine-mesh quadrature points, flat over (cell, qp)."""
        return self._deformation(d_coarse, self.fine_qp_in_coarse,
                                 self._coarse_grad_at_fine_qp)

    def _deformation(self, d_coarse, pmap: PointMap, grads):
        dim = self.coarse.dim
        conn = self.coarse.cells[pmap.cells]
        dn = d_coarse.reshape(-1, dim)[conn]  # (npts, nn, dim)
        F = np.einsum("pni,pnj->pij", dn, grads)
        F += np.eye(dim)
        return F
