"""Segregated staggered time loop: per macro-step, the fine-mesh monodomain
substeps run against a frozen deformation, then activation consumes the
transferred calcium, then the mechanics/pressure-multiplier solve advances
the solid together with the circulation. Also owns run directories, CSV
streams, VTK snapshots, checkpoints and restarts.
"""

from __future__ import annotations

import json
import logging
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, activation, circulation, config as cfgmod, coupling, ionic
from .ep import EpSolver
from .fem import FemSpace, IntergridMap
from .fibers import generate_fibers, uniform_fibers
from .mesh import ALL, ENDO, Mesh, assign_eta, generate_lv_mesh, generate_slab_mesh
from .mechanics import FacetGeometry, MechanicsSolver, MechState
from .refconfig import inflate_to_volume
from .vtkio import write_vtk

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FLOAT_FMT = "%.17g"

CIRC_COLUMNS = ("t_s", *[n.lower() for n in circulation.STATE_NAMES],
                "p_lv_mmhg", "q_mv", "q_av", "q_tv", "q_pv", "v_lv_3d_ml")
TENSION_COLUMNS = ("t_s", "ta_min_pa", "ta_avg_pa", "ta_max_pa")


class SolverFailure(RuntimeError):
    """A sub-solver aborted; a checkpoint and failure report were written."""


def _fmt_row(values) -> str:
    return ",".join(FLOAT_FMT % v for v in values)


@dataclass
class RunOutputs:
    run_dir: Path
    manifest: dict
    files: dict = field(default_factory=dict)


class Simulation:
    """One configured run (mode '0d', 'ep' or 'em')."""

    def __init__(self, cfg: dict, mode: str, run_dir):
        if mode not in ("0d", "ep", "em"):
            raise ValueError(f"unknown mode '{mode}'")
        self.cfg = cfg
        self.mode = mode
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.dt = cfg["time"]["dt_s"]
        self.tau = cfg["time"]["tau_s"]
        self.n_sub = int(round(self.dt / self.tau))
        self.t_final = cfg["time"]["t_final_s"]
        self.t = 0.0
        self.step_index = 0

        self.is_lv = cfg["geometry"]["kind"] == "lv"
        self.with_mechanics = mode == "em"
        self.with_circulation = mode == "0d" or (mode == "em" and self.is_lv)

        self._build()

    # -- construction ------------------------------------------------------

    def _build_mesh(self, fine: bool) -> Mesh:
        g = self.cfg["geometry"]
        if self.is_lv:
            lv = g["lv"]
            res = lv["resolution_ep"] if fine else lv["resolution_mech"]
            ntr = lv["n_trans_ep"] if fine else lv["n_trans_mech"]
            return generate_lv_mesh(
                [v * 1e-3 for v in lv["endo_radii_mm"]],
                [v * 1e-3 for v in lv["epi_radii_mm"]],
                lv["truncation_mm"] * 1e-3, resolution=res, n_trans=ntr)
        sl = g["slab"]
        h = sl["h_mm"] if fine else sl["h_mech_mm"]
        return generate_slab_mesh([v * 1e-3 for v in sl["extent_mm"]], h * 1e-3)

    def _fibers(self, mesh, space):
        f = self.cfg["fibers"]
        if self.is_lv:
            return generate_fibers(mesh, space,
                                   alpha_endo=f["alpha_endo_deg"],
                                   alpha_epi=f["alpha_epi_deg"],
                                   beta_endo=f["beta_endo_deg"],
                                   beta_epi=f["beta_epi_deg"])
        return uniform_fibers(mesh, space, f["slab_angle_deg"])

    def _build(self):
        cfg = self.cfg
        self.ionic_params = cfgmod.build_ionic_params(cfg)
        self.circ_params = cfgmod.build_circ_params(cfg)

        if self.mode == "0d":
            self.circ_solver = circulation.CircSolver(self.circ_params, self.dt)
            self.circ_state = cfgmod.initial_circ_state(cfg)
            self.p_lv = None
            return

        self.fine_mesh = self._build_mesh(fine=True)
        self.fine_space = FemSpace(self.fine_mesh)
        self.fine_fibers = self._fibers(self.fine_mesh, self.fine_space)
        regions = cfgmod.build_regions(cfg)
        self.eta_fine = assign_eta(self.fine_mesh, regions)

        self.ep_solver = EpSolver(
            self.fine_mesh, self.fine_space, self.fine_fibers, self.eta_fine,
            cfgmod.build_variant(cfg), cfgmod.build_conductivities(cfg),
            cfgmod.build_protocol(cfg), tau=self.tau,
            ionic_params=self.ionic_params, lin_tol=cfg["ep"]["lin_tol"])

        probes_mm = cfg["outputs"]["probe_points_mm"]
        self.probe_vertices = []
        for p in probes_mm:
            x = np.asarray(p, dtype=float)[: self.fine_mesh.dim] * 1e-3
            d2 = np.sum((self.fine_mesh.vertices - x) ** 2, axis=1)
            self.probe_vertices.append(int(np.argmin(d2)))
        self.probe_stride = max(1, int(round(
            cfg["outputs"]["probe_stride_ms"] * 1e-3 / self.tau)))

        if not self.with_mechanics:
            return

        self.coarse_mesh = self._build_mesh(fine=False)
        self.coarse_space = FemSpace(self.coarse_mesh)
        self.coarse_fibers = self._fibers(self.coarse_mesh, self.coarse_space)
        newton = cfg["mechanics"]["newton"]
        self.mech_solver = MechanicsSolver(
            self.coarse_mesh, self.coarse_space, self.coarse_fibers,
            cfgmod.build_material(cfg),
            epi_support=cfgmod.build_epi_support(cfg) if self.is_lv else None,
            slab_support=None if self.is_lv else cfgmod.build_slab_support(cfg),
            dt=self.dt, newton_tol=newton["tol"], newton_abs_tol=newton["abs_tol"],
            newton_max_iter=newton["max_iter"], max_halvings=newton["max_halvings"])
        self.intergrid = IntergridMap(self.fine_mesh, self.coarse_mesh,
                                      self.coarse_space, self.fine_space)
        self.act_params = cfgmod.build_activation_params(cfg)
        self.act_state = activation.ActivationState.rest(
            self.coarse_space.num_qp, self.act_params)
        self.mech_state = MechState(np.zeros(self.mech_solver.ndof),
                                    np.zeros(self.mech_solver.ndof))

        if self.with_circulation:
            self.circ_solver = circulation.CircSolver(self.circ_params, self.dt)
            self.circ_state = cfgmod.initial_circ_state(cfg)
            self.cavity = coupling.CavityGeometry.for_lv_mesh(self.coarse_mesh)
            self.endo_geom = FacetGeometry(
                self.coarse_mesh, self.coarse_mesh.facets_with_label(ENDO))
            self.mult_solver = coupling.PressureMultiplierSolver(
                tol_ml=cfg["coupling"]["tol_ml"],
                max_iter=cfg["coupling"]["max_iter"])
            self.p_lv = 0.0  # mmHg

    # -- initialization ----------------------------------------------------

    def initialize(self):
        """Pre-pace the membrane model, broadcast the limit-cycle state, and
        (LV runs) apply end-diastolic inflation when configured."""
        if self.mode == "0d":
            return
        pre = self.cfg["ionic"]["prepacing"]
        if pre["beats"] > 0:
            u0, w0, drift = ionic.initialize_steady_state(
                pre["period_s"], pre["beats"], params=self.ionic_params,
                dt_ms=pre["dt_ms"])
            log.info("pre-pacing done: %d beats, residual drift %.3e",
                     pre["beats"], drift)
        else:
            u0, w0 = ionic.initial_state()
        self.ep_solver.set_state(np.full(self.fine_mesh.num_vertices, u0),
                                 np.tile(w0, (self.fine_mesh.num_vertices, 1)),
                                 t=0.0)
        # scar tissue holds its resting state
        frozen = self.eta_fine <= 0.0
        if np.any(frozen):
            ur, wr = ionic.initial_state()
            self.ep_solver.u[frozen] = ur
            self.ep_solver.w[frozen] = wr

        if not (self.with_mechanics and self.with_circulation):
            return
        ed_volume = self.cfg["initialization"]["ed_volume_ml"]
        if ed_volume is not None:
            d0, p_ed = inflate_to_volume(self.coarse_mesh, self.mech_solver,
                                         float(ed_volume))
            self.mech_state = MechState(d0, np.zeros_like(d0))
            self.p_lv = p_ed / self.mult_solver.mmhg_to_pa
            log.info("end-diastolic inflation: p = %.1f Pa, V = %.2f mL",
                     p_ed, ed_volume)
        v3d = coupling.cavity_volume(self.endo_geom, self.cavity,
                                     self.mech_state.d) * coupling.M3_TO_ML
        self.circ_state[circulation.IDX_V_LV] = v3d

    # -- streams -----------------------------------------------------------

    def _open_streams(self, append: bool):
        mode = "a" if append else "w"
        self._files = {}
        if self.mode != "0d" and self.probe_vertices:
            f = open(self.run_dir / "probes.csv", mode, newline="\n")
            if not append:
                cols = ["t_s"]
                for i in range(len(self.probe_vertices)):
                    cols += [f"u_p{i}_mv", f"ca_p{i}_um"]
                f.write(",".join(cols) + "\n")
            self._files["probes"] = f
        if self.with_circulation:
            f = open(self.run_dir / "circulation.csv", mode, newline="\n")
            if not append:
                cols = CIRC_COLUMNS if self.mode == "em" else CIRC_COLUMNS[:-1]
                f.write(",".join(cols) + "\n")
            self._files["circulation"] = f
        if self.with_mechanics:
            f = open(self.run_dir / "tension.csv", mode, newline="\n")
            if not append:
                f.write(",".join(TENSION_COLUMNS) + "\n")
            self._files["tension"] = f

    def _close_streams(self):
        for f in getattr(self, "_files", {}).values():
            f.close()
        self._files = {}

    def _write_probes(self):
        if "probes" not in self._files:
            return
        ca = self.ep_solver.calcium_um()
        row = [self.ep_solver.t]
        for v in self.probe_vertices:
            row += [self.ep_solver.u[v], ca[v]]
        self._files["probes"].write(_fmt_row(row) + "\n")

    def _write_circulation(self, q: dict, v3d: float | None):
        if "circulation" not in self._files:
            return
        row = [self.t, *self.circ_state,
               self.p_lv if self.p_lv is not None else
               circulation.chamber_pressures(self.t, self.circ_state,
                                             self.circ_params, None)["LV"],
               q["MV"], q["AV"], q["TV"], q["PV"]]
        if self.mode == "em":
            row.append(v3d if v3d is not None else np.nan)
        self._files["circulation"].write(_fmt_row(row) + "\n")

    def _write_tension(self, ta):
        if "tension" not in self._files:
            return
        row = [self.t, float(ta.min()), float(ta.mean()), float(ta.max())]
        self._files["tension"].write(_fmt_row(row) + "\n")

    def _write_vtk_snapshot(self):
        stride = self.cfg["outputs"]["vtk_stride"]
        if not stride or self.step_index % stride:
            return
        tag = f"{self.step_index:07d}"
        if self.mode != "0d":
            write_vtk(self.run_dir / f"ep_{tag}.vtk", self.fine_mesh,
                      point_scalars={"u_mv": self.ep_solver.u,
                                     "ca_um": self.ep_solver.calcium_um(),
                                     "eta": self.eta_fine})
        if self.with_mechanics:
            d = self.mech_state.d.reshape(-1, self.coarse_mesh.dim)
            write_vtk(self.run_dir / f"mech_{tag}.vtk", self.coarse_mesh,
                      point_vectors={"displacement_m": d}, displaced_by=d)

    # -- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path=None):
        path = Path(path) if path else self.run_dir / "checkpoint.npz"
        data = {
            "format_version": np.array([CHECKPOINT_VERSION]),
            "t": np.array([self.t]),
            "step_index": np.array([self.step_index]),
            "mode": np.array([self.mode]),
        }
        if self.mode != "0d":
            data.update(
                ep_u=self.ep_solver.u, ep_w=self.ep_solver.w,
                ep_t=np.array([self.ep_solver.t]),
                ep_hist=np.array(self.ep_solver._hist),
                ep_order=np.array([self.ep_solver._order]))
        if self.with_mechanics:
            a = self.act_state
            data.update(mech_d=self.mech_state.d, mech_v=self.mech_state.v,
                        act_cb=a.c_b, act_fb=a.f_b, act_slp=a.sl_prev,
                        act_slf=a.sl_filt, act_dsl=a.dsl_filt)
        if self.with_circulation:
            data.update(circ=self.circ_state,
                        p_lv=np.array([self.p_lv if self.p_lv is not None
                                       else np.nan]))
        np.savez(path, **data)
        return path

    def load_checkpoint(self, path):
        with np.load(path, allow_pickle=False) as z:
            if int(z["format_version"][0]) != CHECKPOINT_VERSION:
                raise ValueError("checkpoint format version mismatch")
            self.t = float(z["t"][0])
            self.step_index = int(z["step_index"][0])
            if self.mode != "0d":
                self.ep_solver.u = z["ep_u"].copy()
                self.ep_solver.w = z["ep_w"].copy()
                self.ep_solver.t = float(z["ep_t"][0])
                self.ep_solver._hist = [r.copy() for r in z["ep_hist"]]
                self.ep_solver._order = int(z["ep_order"][0])
            if self.with_mechanics:
                self.mech_state = MechState(z["mech_d"].copy(), z["mech_v"].copy())
                self.act_state = activation.ActivationState(
                    z["act_cb"].copy(), z["act_fb"].copy(), z["act_slp"].copy(),
                    z["act_slf"].copy(), z["act_dsl"].copy())
            if self.with_circulation:
                self.circ_state = z["circ"].copy()
                p = float(z["p_lv"][0])
                self.p_lv = None if np.isnan(p) else p

    # -- the staggered loop --------------------------------------------------

    def _macro_step_0d(self):
        q = circulation.valve_flows(self.t, self.circ_state, self.circ_params,
                                    None)
        self._write_circulation(q, None)
        self.circ_state = self.circ_solver.step(self.circ_state, self.t)

    def _ep_substeps(self):
        for _ in range(self.n_sub):
            self.ep_solver.step()
            if (round(self.ep_solver.t / self.tau) % self.probe_stride) == 0:
                self._write_probes()

    def _macro_step_em(self):
        # (1) electrophysiology against the frozen deformation
        self._ep_substeps()

        # (2) activation from transferred calcium and the lagged stretch
        ca_fine = self.ep_solver.calcium_um()
        ca_qp = self.intergrid.fine_to_coarse_qp(ca_fine)
        F_qp = self.mech_solver.deformation_gradients(self.mech_state.d)
        sl, _ = activation.compute_sl(F_qp, self.coarse_fibers.f0_q,
                                      self.act_params.sl0)
        _, ta_qp = activation.activation_step(self.act_state, ca_qp, sl,
                                              self.dt, self.act_params)
        self._write_tension(ta_qp)

        # (3) mechanics (+ volume-consistency multiplier for the ventricle)
        if self.with_circulation:
            state0 = self.mech_state

            def mech_trial(p_pa):
                d, _ = self.mech_solver.newton(state0.d, ta_qp, p_pa,
                                               d_prev=state0.d, v_prev=state0.v)
                v3d = coupling.cavity_volume(self.endo_geom, self.cavity, d) \
                    * coupling.M3_TO_ML
                return d, v3d

            def circ_trial(p_mmhg):
                c = self.circ_solver.step(self.circ_state, self.t, p_mmhg)
                return c, c[circulation.IDX_V_LV]

            p, mech_res, circ_res, resid = self.mult_solver.solve(
                mech_trial, circ_trial, self.p_lv)
            d_new, v3d = mech_res
            self.mech_state = MechState(d_new, (d_new - state0.d) / self.dt)
            self.circ_state, _ = circ_res
            self.p_lv = p
            self.last_constraint_residual = resid
            q = circulation.valve_flows(self.t + self.dt, self.circ_state,
                                        self.circ_params, p)
        else:
            self.mech_state = self.mech_solver.step(self.mech_state, ta_qp, 0.0)
            q = None
            v3d = None

        # (4) bookkeeping and the deformation hand-off to the next macro step
        if self.with_circulation:
            self._write_circulation(q, v3d)
        F_v = self.intergrid.deformation_at_fine_vertices(self.mech_state.d)
        F_fine_qp = self.intergrid.deformation_at_fine_qp(self.mech_state.d)
        self.ep_solver.set_deformation(F_v, F_fine_qp)

    def _macro_step_ep(self):
        self._ep_substeps()

    def run(self, t_stop: float | None = None, append_streams: bool = False):
        """March to t_stop (default t_final). On sub-solver failure a
        checkpoint and failure report are written and SolverFailure raised."""
        t_stop = self.t_final if t_stop is None else t_stop
        self._open_streams(append_streams)
        stepper = {"0d": self._macro_step_0d, "ep": self._macro_step_ep,
                   "em": self._macro_step_em}[self.mode]
        wall0 = _time.time()
        try:
            while self.t < t_stop - 1e-12:
                stepper()
                self.t += self.dt
                self.step_index += 1
                self._write_vtk_snapshot()
                ck = self.cfg["outputs"]["checkpoint_stride"]
                if ck and self.step_index % ck == 0:
                    self.save_checkpoint()
        except Exception as exc:
            ckpt = self.save_checkpoint(self.run_dir / "failure_checkpoint.npz")
            report = {
                "error": str(exc), "type": type(exc).__name__,
                "t": self.t, "step_index": self.step_index,
                "checkpoint": str(ckpt),
            }
            (self.run_dir / "failure_report.json").write_text(
                json.dumps(report, indent=2))
            self._close_streams()
            raise SolverFailure(f"{type(exc).__name__}: {exc}") from exc
        self._close_streams()
        log.info("run finished: %d macro steps in %.1f s wall",
                 self.step_index, _time.time() - wall0)

    # -- manifest ------------------------------------------------------------

    def write_manifest(self) -> dict:
        manifest = {
            "package_version": __version__,
            "mode": self.mode,
            "variant": self.cfg["variant"]["name"],
            "config_hash": cfgmod.config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "time": {"dt_s": self.dt, "tau_s": self.tau,
                     "t_final_s": self.t_final},
            "config": self.cfg,
        }
        (self.run_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=str))
        return manifest


def run_simulation(cfg: dict, mode: str, run_dir) -> RunOutputs:
    """Build, initialize, run to completion and return the run artifacts."""
    sim = Simulation(cfg, mode, run_dir)
    manifest = sim.write_manifest()
    sim.initialize()
    sim.run()
    sim.save_checkpoint()
    return RunOutputs(sim.run_dir, manifest)
