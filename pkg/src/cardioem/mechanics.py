"""Finite elasticity on the coarse mesh: exponential orthotropic passive law
with a volumetric penalty, additive active fiber stress, epicardial Robin
support, endocardial follower pressure and the energy-consistent base
traction. Implicit BDF1 dynamics solved by damped Newton; the nonlocal base
coupling enters the linear solves as a low-rank correction (Woodbury).

Units: Pa, m, s, kg/m^3.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FemSpace, assemble_mass, gauss_points, shape_gradients_ref, shape_values
from .fibers import FiberField
from .mesh import ALL, BASE, ENDO, EPI, Mesh

log = logging.getLogger(__name__)

_EPSILON3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPSILON3[_i, _j, _k] = 1.0
    _EPSILON3[_i, _k, _j] = -1.0


@dataclass
class MaterialParams:
    kappa: float = 50e3      # Pa, bulk modulus
    a: float = 0.88e3        # Pa, stiffness scale
    b_ff: float = 8.0
    b_ss: float = 6.0
    b_nn: float = 3.0
    b_fs: float = 12.0
    b_fn: float = 3.0
    b_sn: float = 3.0
    rho: float = 1e3         # kg/m^3

    def __post_init__(self):
        if self.kappa <= 0 or self.a <= 0:
            raise ValueError("kappa and a must be positive")
        for name in ("b_ff", "b_ss", "b_nn", "b_fs", "b_fn", "b_sn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def b_matrix(self, dim: int) -> np.ndarray:
        if dim == 2:
            return np.array([[self.b_ff, self.b_fs], [self.b_fs, self.b_ss]])
        return np.array([
            [self.b_ff, self.b_fs, self.b_fn],
            [self.b_fs, self.b_ss, self.b_sn],
            [self.b_fn, self.b_sn, self.b_nn],
        ])


@dataclass
class EpicardialSupport:
    k_perp: float = 2e5   # Pa/m
    k_par: float = 2e4    # Pa/m
    c_perp: float = 2e4   # Pa s/m
    c_par: float = 2e3    # Pa s/m

    def __post_init__(self):
        if min(self.k_perp, self.k_par, self.c_perp, self.c_par) < 0:
            raise ValueError("support coefficients must be nonnegative")


@dataclass
class SlabSupport:
    """Isotropic boundary springs pinning a slab against rigid motion."""

    k: float = 1e5   # Pa/m
    c: float = 1e3   # Pa s/m


# ---------------------------------------------------------------------------
# constitutive law
# ---------------------------------------------------------------------------


def _rotations(f0, s0, n0):
    """Stack triads into rotation matrices R[..., i, axis]."""
    if n0 is None or n0.shape[-1] == 2:
        return np.stack([f0, s0], axis=-1)
    return np.stack([f0, s0, n0], axis=-1)


def strain_energy(F, params: MaterialParams, f0, s0, n0=None):
    """W(F) = kappa/2 (J-1) log J + a/2 (e^Q - 1), batched."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise ValueError("det F <= 0 in strain energy evaluation")
    dim = F.shape[-1]
    R = _rotations(f0, s0, n0)
    E = 0.5 * (np.einsum("...ki,...kj->...ij", F, F)
               - np.eye(dim))
    Ehat = np.einsum("...ia,...ij,...jb->...ab", R, E, R)
    bmat = params.b_matrix(dim)
    Q = np.einsum("ab,...ab->...", bmat, Ehat**2)
    return params.kappa / 2.0 * (J - 1.0) * np.log(J) + params.a / 2.0 * (
        np.exp(Q) - 1.0)


def passive_stress(F, params: MaterialParams, f0, s0, n0=None,
                   with_tangent: bool = False):
    """First Piola tensor of the passive law; optionally also the tangent
    dP/dF as a (..., d, d, d, d) array."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise ValueError("det F <= 0 in stress evaluation")
    dim = F.shape[-1]
    eye = np.eye(dim)
    R = _rotations(f0, s0, n0)
    Finv = np.linalg.inv(F)

    E = 0.5 * (np.einsum("...ki,...kj->...ij", F, F) - eye)
    Ehat = np.einsum("...ia,...ij,...jb->...ab", R, E, R)
    bmat = params.b_matrix(dim)
    Q = np.einsum("ab,...ab->...", bmat, Ehat**2)
    expQ = np.exp(Q)
    Mhat = bmat * Ehat
    M = np.einsum("...ia,...ab,...jb->...ij", R, Mhat, R)
    S = params.a * expQ[..., None, None] * M
    P_dev = np.einsum("...im,...mj->...ij", F, S)

    phi = params.kappa / 2.0 * (J * np.log(J) + J - 1.0)
    FinvT = np.swapaxes(Finv, -1, -2)
    P_vol = phi[..., None, None] * FinvT

    P = P_dev + P_vol
    if not with_tangent:
        return P

    # deviatoric tangent: dS/dE then push to dP/dF
    RR = np.einsum("...ia,...ka->...aik", R, R)
    # T2[m,n,p,q] = sum_ab b[a,b] R[m,a]R[p,a] R[n,b]R[q,b]
    T2 = np.einsum("ab,...amp,...bnq->...mnpq", bmat, RR, RR)
    C = params.a * expQ[..., None, None, None, None] * (
        2.0 * np.einsum("...mn,...pq->...mnpq", M, M) + T2)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    A_dev = np.einsum("...ik,...lj->...ijkl", np.broadcast_to(eye, F.shape), S)
    A_dev = A_dev + np.einsum("...im,...kq,...mjlq->...ijkl", F, F, C)

    phip = params.kappa / 2.0 * (np.log(J) + 2.0)
    A_vol = (phip * J)[..., None, None, None, None] * np.einsum(
        "...ji,...lk->...ijkl", Finv, Finv)
    A_vol -= phi[..., None, None, None, None] * np.einsum(
        "...jk,...li->...ijkl", Finv, Finv)

    return P, A_dev + A_vol


def active_stress(F, T_a, f0, with_tangent: bool = False):
    """Additive active Piola contribution T_a (F f0 x f0) / sqrt(I4f)."""
    F = np.asarray(F, dtype=float)
    g = np.einsum("...ij,...j->...i", F, f0)
    lam = np.sqrt(np.einsum("...i,...i->...", g, g))
    Ta = np.asarray(T_a, dtype=float)
    P = (Ta / lam)[..., None, None] * np.einsum("...i,...j->...ij", g, f0)
    if not with_tangent:
        return P
    dim = F.shape[-1]
    eye = np.eye(dim)
    ff = np.einsum("...l,...j->...lj", f0, f0)
    A = (Ta / lam)[..., None, None, None, None] * np.einsum(
        "ik,...lj->...ijkl", eye, ff)
    A -= (Ta / lam**3)[..., None, None, None, None] * np.einsum(
        "...i,...j,...k,...l->...ijkl", g, f0, g, f0)
    return P, A


# ---------------------------------------------------------------------------
# facet geometry
# ---------------------------------------------------------------------------


class FacetGeometry:
    """Quadrature machinery on a set of boundary facets (outward oriented)."""

    def __init__(self, mesh: Mesh, facets: np.ndarray):
        self.mesh = mesh
        self.facets = facets
        self.dim = mesh.dim
        fdim = self.dim - 1
        self.qp_ref, self.qw = gauss_points(fdim)
        self.N = shape_values(fdim, self.qp_ref)          # (nq, nfn)
        self.dN = shape_gradients_ref(fdim, self.qp_ref)  # (nq, nfn, fdim)
        self.X = mesh.vertices[facets]                    # (nf, nfn, dim)
        self.ref_area_vec, _ = self.area_vectors(None)

    def nodes(self) -> np.ndarray:
        return self.facets

    def current_coords(self, d: np.ndarray | None):
        if d is None:
            return self.X
        return self.X + d.reshape(-1, self.dim)[self.facets]

    def qp_positions(self, d=None):
        x = self.current_coords(d)
        return np.einsum("qn,fni->fqi", self.N, x)

    def area_vectors(self, d=None):
        """(a, |a|) at facet quadrature points; a dGamma_ref is the current
        normal-area element J F^-T N dGamma (Nanson)."""
        x = self.current_coords(d)
        if self.dim == 3:
            t0 = np.einsum("fni,qn->fqi", x, self.dN[:, :, 0])
            t1 = np.einsum("fni,qn->fqi", x, self.dN[:, :, 1])
            a = np.cross(t0, t1)
        else:
            t0 = np.einsum("fni,qn->fqi", x, self.dN[:, :, 0])
            a = np.stack([t0[..., 1], -t0[..., 0]], axis=-1)
        return a, np.linalg.norm(a, axis=-1)

    def area_vector_derivative(self, d=None):
        """da[f,q,i]/dd[n,j] as (nf, nq, i, nfn, j)."""
        x = self.current_coords(d)
        if self.dim == 3:
            t0 = np.einsum("fni,qn->fqi", x, self.dN[:, :, 0])
            t1 = np.einsum("fni,qn->fqi", x, self.dN[:, :, 1])
            da = np.einsum("qn,ijk,fqk->fqinj", self.dN[:, :, 0], _EPSILON3, t1)
            da -= np.einsum("qn,ijk,fqk->fqinj", self.dN[:, :, 1], _EPSILON3, t0)
            return da
        rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
        return np.einsum("qn,ij->qinj", self.dN[:, :, 0], rot)[None, ...] * np.ones(
            (len(self.facets), 1, 1, 1, 1))

    def integrate_scalar(self, qp_vals: np.ndarray) -> float:
        return float(np.einsum("q,fq->", self.qw, qp_vals))

    def integrate_vector(self, qp_vals: np.ndarray) -> np.ndarray:
        return np.einsum("q,fqi->i", self.qw, qp_vals)

    def unit_normals_ref(self):
        a = self.ref_area_vec
        return a / np.linalg.norm(a, axis=-1)[..., None]


def base_traction_vector(endo: FacetGeometry, base: FacetGeometry,
                         d: np.ndarray | None, p_lv: float) -> np.ndarray:
    """v_base balancing the net endocardial pressure load over the base ring.

    Facets are stored outward w.r.t. the wall; the physical pressure load on
    the wall is -p J F^-T N per reference area with N into the cavity, which
    is the stored orientation, so the numerator uses the stored area vectors.
    """
    a_endo, _ = endo.area_vectors(d)
    _, norm_base = base.area_vectors(d)
    den = base.integrate_scalar(norm_base)
    if den <= 0:
        raise ValueError("base ring has zero area")
    num = p_lv * endo.integrate_vector(a_endo)
    return num / den


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass
class MechState:
    d: np.ndarray        # (nv*dim,) displacement
    v: np.ndarray        # (nv*dim,) velocity

    def copy(self):
        return MechState(self.d.copy(), self.v.copy())


class MechanicsSolver:
    """Nonlinear solid solver; dynamic (BDF1) or quasi-static."""

    def __init__(
        self,
        mesh: Mesh,
        space: FemSpace,
        fibers: FiberField,
        material: MaterialParams | None = None,
        epi_support: EpicardialSupport | None = None,
        slab_support: SlabSupport | None = None,
        dt: float = 5e-4,
        quasi_static: bool = False,
        newton_tol: float = 1e-6,
        newton_abs_tol: float = 1e-8,
        newton_max_iter: int = 30,
        max_halvings: int = 8,
    ):
        self.mesh = mesh
        self.space = space
        self.fibers = fibers
        self.material = material or MaterialParams()
        self.dt = float(dt)
        self.quasi_static = quasi_static
        self.newton_tol = newton_tol
        self.newton_abs_tol = newton_abs_tol
        self.newton_max_iter = newton_max_iter
        self.max_halvings = max_halvings

        self.dim = mesh.dim
        self.ndof = mesh.num_vertices * self.dim
        nn = mesh.cells.shape[1]
        self.cell_dofs = (mesh.cells[:, :, None] * self.dim
                          + np.arange(self.dim)).reshape(mesh.num_cells, nn * self.dim)

        M = assemble_mass(space)
        self.M_vec = sp.kron(M, sp.eye(self.dim), format="csr")

        self.endo = self._facet_geom(ENDO)
        self.base = self._facet_geom(BASE)
        epi = self._facet_geom(EPI)
        self.K_rob = sp.csr_matrix((self.ndof, self.ndof))
        self.C_rob = sp.csr_matrix((self.ndof, self.ndof))
        if epi is not None and epi_support is not None:
            Krob, Crob = self._robin_matrices(epi, epi_support)
            self.K_rob = self.K_rob + Krob
            self.C_rob = self.C_rob + Crob
        allb = self._facet_geom(ALL)
        if allb is not None and slab_support is not None:
            iso = EpicardialSupport(slab_support.k, slab_support.k,
                                    slab_support.c, slab_support.c)
            Krob, Crob = self._robin_matrices(allb, iso)
            self.K_rob = self.K_rob + Krob
            self.C_rob = self.C_rob + Crob

        self.last_newton_iterations = 0

    def _facet_geom(self, label):
        f = self.mesh.facets_with_label(label)
        return FacetGeometry(self.mesh, f) if len(f) else None

    def _robin_matrices(self, geom: FacetGeometry, sup: EpicardialSupport):
        nrm = geom.unit_normals_ref()  # (nf, nq, dim)
        _, area = geom.area_vectors(None)
        eye = np.eye(self.dim)
        nn_t = np.einsum("fqi,fqj->fqij", nrm, nrm)
        Kmat = sup.k_par * (eye - nn_t) + sup.k_perp * nn_t
        Cmat = sup.c_par * (eye - nn_t) + sup.c_perp * nn_t
        blocks_K = np.einsum("q,fq,qn,qm,fqij->fnimj", geom.qw, area, geom.N,
                             geom.N, Kmat)
        blocks_C = np.einsum("q,fq,qn,qm,fqij->fnimj", geom.qw, area, geom.N,
                             geom.N, Cmat)
        nfn = geom.facets.shape[1]
        fdofs = (geom.facets[:, :, None] * self.dim
                 + np.arange(self.dim)).reshape(len(geom.facets), nfn * self.dim)
        size = nfn * self.dim
        rows = np.repeat(fdofs, size, axis=1).ravel()
        cols = np.tile(fdofs, (1, size)).ravel()
        K = sp.coo_matrix((blocks_K.reshape(len(geom.facets), size, size).ravel(),
                           (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        C = sp.coo_matrix((blocks_C.reshape(len(geom.facets), size, size).ravel(),
                           (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        return K, C

    # -- kinematics --------------------------------------------------------

    def deformation_gradients(self, d: np.ndarray) -> np.ndarray:
        """F at quadrature points, flat (nc*nq, dim, dim)."""
        dn = d.reshape(-1, self.dim)[self.mesh.cells]  # (nc, nn, dim)
        F = np.einsum("cni,cqnj->cqij", dn, self.space.grad)
        F += np.eye(self.dim)
        return F.reshape(-1, self.dim, self.dim)

    def fiber_stretch_qp(self, d: np.ndarray) -> np.ndarray:
        F = self.deformation_gradients(d)
        Ff = np.einsum("pij,pj->pi", F, self.fibers.f0_q)
        return np.sqrt(np.einsum("pi,pi->p", Ff, Ff))

    # -- assembly ----------------------------------------------------------

    def _volume_terms(self, d, Ta_qp, with_tangent):
        nq = len(self.space.qw)
        F = self.deformation_gradients(d)
        fib = self.fibers
        if with_tangent:
            P, A = passive_stress(F, self.material, fib.f0_q, fib.s0_q, fib.n0_q,
                                  with_tangent=True)
            Pa, Aa = active_stress(F, Ta_qp, fib.f0_q, with_tangent=True)
            P = P + Pa
            A = A + Aa
        else:
            P = passive_stress(F, self.material, fib.f0_q, fib.s0_q, fib.n0_q)
            P = P + active_stress(F, Ta_qp, fib.f0_q)
            A = None
        d_ = self.dim
        Pc = P.reshape(-1, nq, d_, d_)
        R_cells = np.einsum("cq,cqij,cqnj->cni", self.space.wdet, Pc, self.space.grad)
        R = np.zeros(self.ndof)
        np.add.at(R, self.cell_dofs,
                  R_cells.reshape(self.mesh.num_cells, -1))
        if not with_tangent:
            return R, None
        Ac = A.reshape(-1, nq, d_, d_, d_, d_)
        K_cells = np.einsum("cq,cqnk,cqikjl,cqml->cnimj", self.space.wdet,
                            self.space.grad, Ac, self.space.grad)
        size = self.cell_dofs.shape[1]
        rows = np.repeat(self.cell_dofs, size, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, size)).ravel()
        K = sp.coo_matrix(
            (K_cells.reshape(self.mesh.num_cells, size, size).ravel(),
             (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        return R, K

    def _pressure_terms(self, geom: FacetGeometry, d, p, with_tangent):
        """Follower pressure -p a on a facet set (a = current normal-area)."""
        a, _ = geom.area_vectors(d)
        load = np.einsum("q,fqi,qn->fni", geom.qw, -p * a, geom.N)
        nfn = geom.facets.shape[1]
        fdofs = (geom.facets[:, :, None] * self.dim
                 + np.arange(self.dim)).reshape(len(geom.facets), -1)
        R = np.zeros(self.ndof)
        np.add.at(R, fdofs, -load.reshape(len(geom.facets), -1))
        if not with_tangent:
            return R, None
        da = geom.area_vector_derivative(d)  # (nf,nq,i,n,j)
        blocks = np.einsum("q,qm,fqinj->fminj", geom.qw, geom.N, p * da)
        size = nfn * self.dim
        rows = np.repeat(fdofs, size, axis=1).ravel()
        cols = np.tile(fdofs, (1, size)).ravel()
        K = sp.coo_matrix((blocks.reshape(len(geom.facets), size, size).ravel(),
                           (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        return R, K

    def _base_terms(self, d, p, with_tangent):
        """Energy-consistent base traction |a| v_base; returns residual,
        local tangent and the low-rank factors U (ndof,dim), Vt (dim,ndof)."""
        endo, base = self.endo, self.base
        v_base = base_traction_vector(endo, base, d, p)
        a_b, na_b = base.area_vectors(d)
        den = base.integrate_scalar(na_b)

        nfn = base.facets.shape[1]
        fdofs_b = (base.facets[:, :, None] * self.dim
                   + np.arange(self.dim)).reshape(len(base.facets), -1)
        b_nodal = np.einsum("q,fq,qn->fn", base.qw, na_b, base.N)
        R = np.zeros(self.ndof)
        contrib = -np.einsum("fn,i->fni", b_nodal, v_base)
        np.add.at(R, fdofs_b, contrib.reshape(len(base.facets), -1))
        if not with_tangent:
            return R, None, None, None

        da_b = base.area_vector_derivative(d)  # (nf,nq,i,n,j)
        ahat = a_b / na_b[..., None]
        dnorm = np.einsum("fqi,fqinj->fqnj", ahat, da_b)
        blocks = -np.einsum("q,qm,fqnj,i->fminj", base.qw, base.N, dnorm, v_base)
        size = nfn * self.dim
        rows = np.repeat(fdofs_b, size, axis=1).ravel()
        cols = np.tile(fdofs_b, (1, size)).ravel()
        K_local = sp.coo_matrix(
            (blocks.reshape(len(base.facets), size, size).ravel(), (rows, cols)),
            shape=(self.ndof, self.ndof)).tocsr()

        # low-rank part: R_base = -b (x) v_base, with v_base = num/den a global
        # functional of d; component-independent nodal weights
        bw = np.zeros(self.mesh.num_vertices)
        np.add.at(bw, base.facets, b_nodal)
        U = np.zeros((self.ndof, self.dim))
        for i in range(self.dim):
            U[i::self.dim, i] = -bw

        # Vt = d v_base / d d
        da_e = endo.area_vector_derivative(d)
        fdofs_e = (endo.facets[:, :, None] * self.dim
                   + np.arange(self.dim)).reshape(len(endo.facets), -1)
        dnum = np.einsum("q,fqinj->finj", endo.qw, p * da_e)
        dden = np.einsum("q,fqnj->fnj", base.qw, dnorm)
        Vt = np.zeros((self.dim, self.ndof))
        for i in range(self.dim):
            tmp = np.zeros(self.ndof)
            np.add.at(tmp, fdofs_e, dnum[:, i].reshape(len(endo.facets), -1))
            Vt[i] += tmp
        tmp = np.zeros(self.ndof)
        np.add.at(tmp, fdofs_b, dden.reshape(len(base.facets), -1))
        Vt -= np.outer(v_base, tmp)
        Vt /= den
        return R, K_local, U, Vt

    def assemble(self, d, Ta_qp, p_lv, d_prev=None, v_prev=None,
                 with_tangent=True):
        """Residual (and tangent pieces) of the discrete momentum balance."""
        R, K = self._volume_terms(d, Ta_qp, with_tangent)
        U = Vt = None

        if self.K_rob.nnz:
            R = R + self.K_rob @ d
            if with_tangent:
                K = K + self.K_rob
        if not self.quasi_static:
            vel = (d - d_prev) / self.dt
            if self.C_rob.nnz:
                R = R + self.C_rob @ vel
                if with_tangent:
                    K = K + self.C_rob / self.dt
            acc = (vel - v_prev) / self.dt
            R = R + self.material.rho * (self.M_vec @ acc)
            if with_tangent:
                K = K + (self.material.rho / self.dt**2) * self.M_vec

        if self.endo is not None and p_lv != 0.0:
            Rp, Kp = self._pressure_terms(self.endo, d, p_lv, with_tangent)
            R = R + Rp
            if with_tangent:
                K = K + Kp
            if self.base is not None:
                Rb, Kb, U, Vt = self._base_terms(d, p_lv, with_tangent)
                R = R + Rb
                if with_tangent:
                    K = K + Kb
        return R, K, U, Vt

    def _solve_linear(self, K, U, Vt, rhs):
        lu = spla.splu(K.tocsc())
        x = lu.solve(rhs)
        if U is None:
            return x
        AU = lu.solve(U)
        S = np.eye(self.dim) + Vt @ AU
        return x - AU @ np.linalg.solve(S, Vt @ x)

    def newton(self, d0, Ta_qp, p_lv, d_prev=None, v_prev=None):
        """Damped Newton; returns (d, iterations). Raises RuntimeError with
        the residual history on divergence."""
        d = d0.copy()
        R, K, U, Vt = self.assemble(d, Ta_qp, p_lv, d_prev, v_prev, True)
        rnorm = np.linalg.norm(R)
        history = [rnorm]
        ref = max(rnorm, 1.0)
        target = max(self.newton_tol * ref, self.newton_abs_tol)
        it = 0
        while rnorm > target:
            if it >= self.newton_max_iter:
                raise RuntimeError(
                    f"mechanics Newton stalled: residuals {history[-6:]}")
            dx = self._solve_linear(K, U, Vt, R)
            step = 1.0
            for _ in range(self.max_halvings + 1):
                d_try = d - step * dx
                try:
                    R_try, K_try, U_try, Vt_try = self.assemble(
                        d_try, Ta_qp, p_lv, d_prev, v_prev, True)
                    rn_try = np.linalg.norm(R_try)
                except ValueError:  # inverted element during trial
                    rn_try = np.inf
                if np.isfinite(rn_try) and rn_try < rnorm:
                    break
                step *= 0.5
            else:
                raise RuntimeError(
                    f"mechanics line search failed at iteration {it}: "
                    f"residuals {history[-6:]}")
            d, R, K, U, Vt, rnorm = d_try, R_try, K_try, U_try, Vt_try, rn_try
            history.append(rnorm)
            it += 1
        self.last_newton_iterations = it
        return d, it

    def step(self, state: MechState, Ta_qp, p_lv) -> MechState:
        """One implicit BDF1 dynamic step."""
        d_new, _ = self.newton(state.d, Ta_qp, p_lv, d_prev=state.d,
                               v_prev=state.v)
        v_new = (d_new - state.d) / self.dt
        return MechState(d_new, v_new)

    def static_solve(self, Ta_qp, p_lv, d0=None, n_load_steps: int = 1):
        """Quasi-static solve with optional pressure/tension ramping."""
        saved = self.quasi_static
        self.quasi_static = True
        try:
            d = np.zeros(self.ndof) if d0 is None else d0.copy()
            for k in range(1, n_load_steps + 1):
                frac = k / n_load_steps
                Ta_k = Ta_qp * frac if np.ndim(Ta_qp) else Ta_qp * frac
                d, _ = self.newton(d, Ta_k, p_lv * frac)
            return d
        finally:
            self.quasi_static = saved

    def strain_energy_total(self, d) -> float:
        F = self.deformation_gradients(d)
        fib = self.fibers
        W = strain_energy(F, self.material, fib.f0_q, fib.s0_q, fib.n0_q)
        nq = len(self.space.qw)
        return float(np.sum(self.space.wdet * W.reshape(-1, nq)))
