"""Stress-free reference recovery (fixed-point inverse elastostatics) and
end-diastolic inflation of the recovered geometry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .fem import FemSpace
from .fibers import FiberField
from .mesh import Mesh
from .coupling import lv_volume_ml
from .mechanics import EpicardialSupport, MaterialParams, MechanicsSolver

log = logging.getLogger(__name__)


def wall_thickness(mesh: Mesh) -> float:
    en = mesh.meta.get("endo_radii")
    ep = mesh.meta.get("epi_radii")
    if en and ep:
        return float(np.mean(np.subtract(ep, en)))
    span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    return 0.1 * float(span.min())


def _make_solver(mesh: Mesh, material, epi_support, solver_opts) -> MechanicsSolver:
    space = FemSpace(mesh)
    from .fibers import generate_fibers

    fib = generate_fibers(mesh, space, **(solver_opts.get("fiber_angles") or {}))
    return MechanicsSolver(mesh, space, fib, material, epi_support,
                           quasi_static=True,
                           **{k: v for k, v in solver_opts.items()
                              if k not in ("fiber_angles",)})


@dataclass
class UnloadResult:
    reference_mesh: Mesh
    mismatch_history: list
    iterations: int


def recover_reference(
    loaded_mesh: Mesh,
    p_load: float,
    t_a: float = 0.0,
    material: MaterialParams | None = None,
    epi_support: EpicardialSupport | None = None,
    omega: float = 0.7,
    tol_frac: float = 1e-3,
    max_iter: int = 50,
    n_load_steps: int = 4,
    solver_opts: dict | None = None,
) -> UnloadResult:
    """Fixed-point recovery of the unloaded configuration.

    Forward-inflates the current reference candidate at (p_load, t_a) and
    moves its vertices by omega times the mismatch against the loaded
    geometry, until the max vertex mismatch drops below tol_frac of the wall
    thickness.
    """
    material = material or MaterialParams()
    epi_support = epi_support or EpicardialSupport()
    solver_opts = solver_opts or {}
    x_target = loaded_mesh.vertices.copy()
    thick = wall_thickness(loaded_mesh)
    tol = tol_frac * thick

    if p_load == 0.0 and t_a == 0.0:
        return UnloadResult(loaded_mesh, [0.0], 1)

    candidate = Mesh(loaded_mesh.dim, x_target.copy(), loaded_mesh.cells,
                     loaded_mesh.facets, loaded_mesh.facet_labels,
                     loaded_mesh.h_mean, dict(loaded_mesh.meta))
    history = []
    d_warm = None
    for it in range(1, max_iter + 1):
        solver = _make_solver(candidate, material, epi_support, solver_opts)
        Ta_qp = np.full(solver.space.num_qp, t_a)
        d = solver.static_solve(Ta_qp, p_load, d0=d_warm,
                                n_load_steps=1 if d_warm is not None
                                else n_load_steps)
        d_warm = d
        x_infl = candidate.vertices + d.reshape(-1, candidate.dim)
        mismatch = x_target - x_infl
        err = float(np.max(np.linalg.norm(mismatch, axis=1)))
        history.append(err)
        log.info("unloading iteration %d: mismatch %.3e m", it, err)
        if err < tol:
            return UnloadResult(candidate, history, it)
        candidate = Mesh(candidate.dim, candidate.vertices + omega * mismatch,
                         candidate.cells, candidate.facets,
                         candidate.facet_labels, candidate.h_mean,
                         dict(candidate.meta))
    raise RuntimeError(
        f"reference recovery did not converge in {max_iter} iterations; "
        f"mismatch history {['%.3e' % h for h in history[-6:]]}")


def inflate_to_volume(
    mesh: Mesh,
    solver: MechanicsSolver,
    v_target_ml: float,
    p_guess: float = 500.0,
    tol_ml: float = 0.1,
    max_iter: int = 40,
):
    """Find (d0, p_ed) bringing the cavity to v_target_ml; the returned
    displacement is the dynamic initial condition (zero initial velocity)."""
    v_ref = lv_volume_ml(mesh)
    if v_target_ml <= v_ref:
        raise ValueError(
            f"target volume {v_target_ml} mL not above reference {v_ref:.2f} mL")

    Ta = np.zeros(solver.space.num_qp)
    cache: dict[float, np.ndarray] = {}

    def volume_at(p, d0=None):
        d = solver.static_solve(Ta, p, d0=d0,
                                n_load_steps=1 if d0 is not None else 4)
        cache[p] = d
        return lv_volume_ml(mesh, d), d

    p0, p1 = 0.0, float(p_guess)
    v0 = v_ref
    v1, d1 = volume_at(p1)
    it = 0
    while v1 < v_target_ml and it < max_iter:
        p0, v0 = p1, v1
        p1 *= 2.0
        v1, d1 = volume_at(p1, d0=d1)
        it += 1

    # regula falsi on the bracket [p0, p1]
    d_prev = d1
    for it2 in range(max_iter):
        if abs(v1 - v_target_ml) <= tol_ml:
            return d1, p1
        p_new = p0 + (v_target_ml - v0) * (p1 - p0) / (v1 - v0)
        p_new = min(max(p_new, p0 + 1e-6), p1 - 1e-6) if p1 > p0 else p_new
        v_new, d_new = volume_at(p_new, d0=d_prev)
        d_prev = d_new
        if v_new < v_target_ml:
            p0, v0 = p_new, v_new
        else:
            p1, v1, d1 = p_new, v_new, d_new
        if abs(v_new - v_target_ml) <= tol_ml:
            return d_new, p_new
    raise RuntimeError(
        f"end-diastolic inflation failed to reach {v_target_ml} mL within "
        f"{tol_ml} mL")
