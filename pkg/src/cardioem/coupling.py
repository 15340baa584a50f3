"""Volume-consistency coupling between the 3D cavity and the lumped
circulation: the cavity-volume surface functional and the scalar solve for
the ventricular pressure multiplier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mechanics import FacetGeometry
from .mesh import ENDO, Mesh

log = logging.getLogger(__name__)

M3_TO_ML = 1e6


@dataclass
class CavityGeometry:
    """h: unit vector in the base plane (orthogonal to the centerline);
    b: reference point inside the cavity."""

    h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = np.linalg.norm(self.h)
        if n == 0:
            raise ValueError("h must be a nonzero direction")
        self.h = self.h / n

    @classmethod
    def for_lv_mesh(cls, mesh: Mesh) -> "CavityGeometry":
        """Centerline from base centroid to apex is the z axis for the
        generated ellipsoid; h any in-plane unit vector, b mid-cavity."""
        zt = mesh.meta.get("truncation_z", float(mesh.vertices[:, 2].max()))
        z_apex = float(mesh.vertices[:, 2].min())
        b = np.array([0.0, 0.0, 0.5 * (zt + z_apex)])
        return cls(h=np.array([1.0, 0.0, 0.0]), b=b)


def cavity_volume(geom: FacetGeometry, cavity: CavityGeometry,
                  d: np.ndarray | None = None,
                  facets_into_cavity: bool = True) -> float:
    """Deformed cavity volume (m^3) from the endocardial surface integral

        V = -int_endo ((h . (x + d - b)) (h . a)) dGamma_ref

    with a = J F^-T N the current normal-area vector of the stored facets.
    Facets of a wall mesh point into the cavity (facets_into_cavity=True);
    the closing lid on the base plane contributes nothing because h lies in
    that plane.
    """
    x = geom.qp_positions(d)
    a, _ = geom.area_vectors(d)
    hv = np.einsum("fqi,i->fq", x - cavity.b, cavity.h)
    ha = np.einsum("fqi,i->fq", a, cavity.h)
    sign = -1.0 if facets_into_cavity else 1.0
    return sign * float(np.einsum("q,fq,fq->", geom.qw, hv, ha))


def lv_volume_ml(mesh: Mesh, d=None, cavity: CavityGeometry | None = None,
                 geom: FacetGeometry | None = None) -> float:
    """Cavity volume in mL of an LV mesh (reference or displaced)."""
    if geom is None:
        geom = FacetGeometry(mesh, mesh.facets_with_label(ENDO))
    if cavity is None:
        cavity = CavityGeometry.for_lv_mesh(mesh)
    return cavity_volume(geom, cavity, d) * M3_TO_ML


class PressureMultiplierSolver:
    """Safeguarded secant iteration on r(p) = V_0D(p) - V_3D(p) (mL).

    mech_trial(p_pa) -> (d, V_3D_ml) and circ_trial(p_mmhg) -> (c, V_0D_ml)
    must be pure trial evaluations; the caller commits the returned states.
    """

    def __init__(self, tol_ml: float = 1e-3, max_iter: int = 20,
                 mmhg_to_pa: float = 133.322):
        self.tol_ml = tol_ml
        self.max_iter = max_iter
        self.mmhg_to_pa = mmhg_to_pa
        self.last_iterations = 0

    def solve(self, mech_trial, circ_trial, p_guess_mmhg: float):
        """Returns (p_mmhg, mech_result, circ_result, residual_ml)."""

        cache = {}

        def residual(p):
            if p not in cache:
                mech = mech_trial(p * self.mmhg_to_pa)
                circ = circ_trial(p)
                cache[p] = (mech, circ, circ[1] - mech[1])
            return cache[p][2]

        p0 = float(p_guess_mmhg)
        r0 = residual(p0)
        history = [(p0, r0)]
        if abs(r0) <= self.tol_ml:
            self.last_iterations = 0
            mech, circ, r = cache[p0]
            return p0, mech, circ, r

        # second point: small perturbation scaled to the pressure level
        p1 = p0 + max(0.2, 0.02 * abs(p0)) * (1.0 if r0 > 0 else -1.0)
        r1 = residual(p1)
        history.append((p1, r1))

        lo = hi = None  # bracket: r(lo) > 0 > r(hi) (r decreasing in p)
        for p, r in history:
            if r > 0:
                lo = (p, r) if lo is None or p > lo[0] else lo
            elif r < 0:
                hi = (p, r) if hi is None or p < hi[0] else hi

        for it in range(2, self.max_iter + 2):
            if abs(r1) <= self.tol_ml:
                self.last_iterations = it - 1
                mech, circ, r = cache[p1]
                return p1, mech, circ, r
            if r1 == r0:
                p2 = p1 + (0.5 if r1 > 0 else -0.5)
            else:
                p2 = p1 - r1 * (p1 - p0) / (r1 - r0)
            # safeguard: keep within (expanded) bracket when available
            if lo is not None and hi is not None:
                if not (min(lo[0], hi[0]) < p2 < max(lo[0], hi[0])):
                    p2 = 0.5 * (lo[0] + hi[0])
            elif abs(p2 - p1) > 50.0:
                p2 = p1 + np.sign(p2 - p1) * 50.0
            p0, r0 = p1, r1
            p1 = float(p2)
            r1 = residual(p1)
            history.append((p1, r1))
            if r1 > 0 and (lo is None or p1 > lo[0]):
                lo = (p1, r1)
            elif r1 < 0 and (hi is None or p1 < hi[0]):
                hi = (p1, r1)

        raise RuntimeError(
            "pressure multiplier iteration failed to reach "
            f"|r| <= {self.tol_ml} mL; history {history[-6:]}")
