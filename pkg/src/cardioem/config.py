"""Run configuration: YAML schema with full defaults, strict validation
(unknown keys rejected with their path), and constructors for the simulation
building blocks. Geometry lengths are given in millimeters and converted to
meters here; every tabulated physical parameter ships as a default so a bare
config reproduces the reference parameterization.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from . import activation, circulation, ep, ionic, mechanics
from .mesh import Region


class ConfigError(ValueError):
    """Schema violation; message carries the offending key path."""


DEFAULTS = {
    "geometry": {
        "kind": "slab",
        "slab": {
            "extent_mm": [20.0, 20.0],
            "h_mm": 0.5,
            "h_mech_mm": 2.0,
        },
        "lv": {
            "endo_radii_mm": [25.0, 25.0, 60.0],
            "epi_radii_mm": [35.0, 35.0, 70.0],
            "truncation_mm": 0.0,
            "resolution_ep": 10,
            "n_trans_ep": 2,
            "resolution_mech": 6,
            "n_trans_mech": 2,
        },
    },
    "fibers": {
        "alpha_endo_deg": 60.0,
        "alpha_epi_deg": -60.0,
        "beta_endo_deg": -20.0,
        "beta_epi_deg": 20.0,
        "slab_angle_deg": 0.0,
    },
    "eta_regions": [],
    "variant": {
        "name": "E",
        "g_sac": 100.0,
        "u_rev_mv": 0.0,
    },
    "ionic": {
        "omega_ca": 0.48,
        "scar_leak_per_ms": 0.05,
        "prepacing": {"period_s": 0.45, "beats": 20, "dt_ms": 0.02},
    },
    "ep": {
        "sigma_l": 0.7643e-4,
        "sigma_t": 0.3494e-4,
        "sigma_n": 0.1125e-4,
        "lin_tol": 1e-10,
    },
    "protocol": {
        "stimuli": [
            {
                "center_mm": [0.0, 0.0, 0.0],
                "radius_mm": 2.0,
                "amplitude_v_per_s": 17.0,
                "duration_s": 3e-3,
                "onset_s": 0.0,
            }
        ],
    },
    "activation": {
        "mu": 10.0,
        "gamma": 30.0,
        "q": 2.0,
        "kd_bar_um": 0.4,
        "alpha_kd_um_per_um": -0.2083,
        "k_off": 40.0,
        "k_basic": 8.0,
        "mu_fp0": 32.255,
        "mu_fp1": 0.768,
        "r0": 134.31,
        "alpha": 25.184,
        "a_xb_pa": 160.0e6,
        "sl0_um": 1.9,
        "xb_scale": 2.0e-3,
        "velocity_sens": 0.3,
        "ramp_lo_um": 1.4,
        "ramp_hi_um": 2.4,
        "theta_filter_s": 5e-3,
    },
    "mechanics": {
        "kappa_pa": 50.0e3,
        "a_pa": 0.88e3,
        "b_ff": 8.0,
        "b_ss": 6.0,
        "b_nn": 3.0,
        "b_fs": 12.0,
        "b_fn": 3.0,
        "b_sn": 3.0,
        "rho": 1.0e3,
        "epi_support": {
            "k_perp": 2.0e5,
            "k_par": 2.0e4,
            "c_perp": 2.0e4,
            "c_par": 2.0e3,
        },
        "slab_support": {"k": 1.0e5, "c": 1.0e3},
        "newton": {
            "tol": 1e-6,
            "abs_tol": 1e-8,
            "max_iter": 30,
            "max_halvings": 8,
        },
    },
    "circulation": {
        "r_ar_sys": 0.64,
        "r_ar_pul": 0.032116,
        "r_ven_sys": 0.32,
        "r_ven_pul": 0.035684,
        "c_ar_sys": 1.2,
        "c_ar_pul": 10.0,
        "c_ven_sys": 60.0,
        "c_ven_pul": 16.0,
        "l_ar_sys": 5e-3,
        "l_ar_pul": 5e-4,
        "l_ven_sys": 5e-4,
        "l_ven_pul": 5e-4,
        "e_la_pass": 0.18,
        "e_ra_pass": 0.07,
        "e_rv_pass": 0.05,
        "e_la_act": 0.07,
        "e_ra_act": 0.06,
        "e_rv_act": 0.55,
        "v0_la": 4.0,
        "v0_ra": 4.0,
        "v0_rv": 16.0,
        "r_min": 0.0075,
        "r_max": 75006.2,
        "period_s": 0.8,
        "ventricle_onset_frac": 0.0,
        "ventricle_duration_frac": 0.3,
        "atrium_onset_frac": 0.85,
        "atrium_duration_frac": 0.15,
        "lv_elastance": {"e_pass": 0.08, "e_act": 2.75, "v0": 5.0},
        "initial_state": None,
    },
    "coupling": {"tol_ml": 1e-3, "max_iter": 20},
    "refconfig": {
        "enabled": False,
        "p_unload_pa": 1.5e3,
        "omega": 0.7,
        "tol_frac": 1e-3,
        "max_iter": 50,
    },
    "initialization": {"ed_volume_ml": None},
    "time": {"dt_s": 5e-4, "tau_s": 5e-5, "t_final_s": 4.0},
    "outputs": {
        "probe_points_mm": [],
        "probe_stride_ms": 1.0,
        "vtk_stride": 0,
        "checkpoint_stride": 0,
    },
    "seed": 0,
}

_REGION_SCHEMA = {
    "shape": "sphere",
    "eta": 1.0,
    "center_mm": [0.0, 0.0, 0.0],
    "radius_mm": 1.0,
    "radii_mm": [1.0, 1.0, 1.0],
    "axis": [0.0, 0.0, 1.0],
}
_STIM_SCHEMA = DEFAULTS["protocol"]["stimuli"][0]

REQUIRED_KEYS = ("geometry.kind", "time.t_final_s")


def _merge(path: str, defaults, user):
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"'{path}': expected a mapping")
        out = {}
        for key, dval in defaults.items():
            sub = f"{path}.{key}" if path else key
            if user is not None and key in user:
                out[key] = _merge(sub, dval, user[key])
            else:
                out[key] = copy.deepcopy(dval)
        unknown = set(user) - set(defaults)
        if unknown:
            bad = sorted(f"{path}.{k}" if path else k for k in unknown)
            raise ConfigError(f"unknown configuration key(s): {', '.join(bad)}")
        return out
    if isinstance(defaults, list) and defaults and isinstance(defaults[0], dict):
        if user is None:
            return copy.deepcopy(defaults)
        if not isinstance(user, list):
            raise ConfigError(f"'{path}': expected a list")
        schema = _STIM_SCHEMA if "stimuli" in path else _REGION_SCHEMA
        return [_merge(f"{path}[{i}]", schema, item) for i, item in enumerate(user)]
    if path.endswith("eta_regions"):
        if user is None:
            return []
        if not isinstance(user, list):
            raise ConfigError(f"'{path}': expected a list")
        return [_merge(f"{path}[{i}]", _REGION_SCHEMA, item)
                for i, item in enumerate(user)]
    return copy.deepcopy(user)


def resolve(user_config: dict | None) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys."""
    cfg = _merge("", DEFAULTS, user_config or {})
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    if cfg["geometry"]["kind"] not in ("slab", "lv"):
        raise ConfigError("'geometry.kind': must be 'slab' or 'lv'")
    if cfg["variant"]["name"] not in ep.VARIANT_NAMES:
        raise ConfigError(
            f"'variant.name': must be one of {ep.VARIANT_NAMES}")
    for i, reg in enumerate(cfg["eta_regions"]):
        if not (0.0 <= reg["eta"] <= 1.0):
            raise ConfigError(f"'eta_regions[{i}].eta': must lie in [0, 1]")
        if reg["shape"] not in ("sphere", "ellipsoid", "cylinder"):
            raise ConfigError(
                f"'eta_regions[{i}].shape': must be sphere, ellipsoid or cylinder")
    t = cfg["time"]
    if t["dt_s"] <= 0 or t["tau_s"] <= 0 or t["t_final_s"] <= 0:
        raise ConfigError("'time': dt_s, tau_s, t_final_s must be positive")
    ratio = t["dt_s"] / t["tau_s"]
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("'time': dt_s must be an integer multiple of tau_s")
    if cfg["ionic"]["omega_ca"] <= 0:
        raise ConfigError("'ionic.omega_ca': must be positive")


def load(path) -> dict:
    with open(path) as fh:
        user = yaml.safe_load(fh)
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError("top level of the config file must be a mapping")
    return resolve(user)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- constructors ------------------------------------------------------------

MM = 1e-3


def build_regions(cfg: dict) -> list[Region]:
    out = []
    for reg in cfg["eta_regions"]:
        out.append(Region(
            shape=reg["shape"],
            eta=float(reg["eta"]),
            center=tuple(v * MM for v in reg["center_mm"]),
            radius=float(reg["radius_mm"]) * MM,
            radii=tuple(v * MM for v in reg["radii_mm"]),
            axis=tuple(reg["axis"]),
        ))
    return out


def build_protocol(cfg: dict) -> ep.StimulusProtocol:
    stims = []
    for s in cfg["protocol"]["stimuli"]:
        stims.append(ep.Stimulus(
            center=tuple(v * MM for v in s["center_mm"]),
            radius=float(s["radius_mm"]) * MM,
            amplitude=float(s["amplitude_v_per_s"]) * 1e3,  # V/s -> mV/s
            duration=float(s["duration_s"]),
            onset=float(s["onset_s"]),
        ))
    return ep.StimulusProtocol(stims)


def build_variant(cfg: dict) -> ep.EpVariant:
    v = cfg["variant"]
    return ep.EpVariant(v["name"], g_sac=float(v["g_sac"]),
                        u_rev=float(v["u_rev_mv"]))


def build_conductivities(cfg: dict) -> ep.Conductivities:
    e = cfg["ep"]
    return ep.Conductivities(e["sigma_l"], e["sigma_t"], e["sigma_n"])


def build_ionic_params(cfg: dict) -> ionic.IonicParams:
    i = cfg["ionic"]
    return ionic.IonicParams(omega_ca=i["omega_ca"],
                             scar_leak_per_ms=i["scar_leak_per_ms"])


def build_activation_params(cfg: dict) -> activation.ActivationParams:
    a = cfg["activation"]
    return activation.ActivationParams(
        mu=a["mu"], gamma=a["gamma"], q=a["q"], kd_bar=a["kd_bar_um"],
        alpha_kd=a["alpha_kd_um_per_um"], k_off=a["k_off"],
        k_basic=a["k_basic"], mu_fp0=a["mu_fp0"], mu_fp1=a["mu_fp1"],
        r0=a["r0"], alpha=a["alpha"], a_xb=a["a_xb_pa"], sl0=a["sl0_um"],
        xb_scale=a["xb_scale"], velocity_sens=a["velocity_sens"],
        ramp_lo=a["ramp_lo_um"], ramp_hi=a["ramp_hi_um"],
        theta_filter=a["theta_filter_s"])


def build_material(cfg: dict) -> mechanics.MaterialParams:
    m = cfg["mechanics"]
    return mechanics.MaterialParams(
        kappa=m["kappa_pa"], a=m["a_pa"], b_ff=m["b_ff"], b_ss=m["b_ss"],
        b_nn=m["b_nn"], b_fs=m["b_fs"], b_fn=m["b_fn"], b_sn=m["b_sn"],
        rho=m["rho"])


def build_epi_support(cfg: dict) -> mechanics.EpicardialSupport:
    s = cfg["mechanics"]["epi_support"]
    return mechanics.EpicardialSupport(s["k_perp"], s["k_par"], s["c_perp"],
                                       s["c_par"])


def build_slab_support(cfg: dict) -> mechanics.SlabSupport:
    s = cfg["mechanics"]["slab_support"]
    return mechanics.SlabSupport(s["k"], s["c"])


def build_circ_params(cfg: dict) -> circulation.CircParams:
    c = cfg["circulation"]
    return circulation.CircParams(
        r_ar_sys=c["r_ar_sys"], r_ar_pul=c["r_ar_pul"],
        r_ven_sys=c["r_ven_sys"], r_ven_pul=c["r_ven_pul"],
        c_ar_sys=c["c_ar_sys"], c_ar_pul=c["c_ar_pul"],
        c_ven_sys=c["c_ven_sys"], c_ven_pul=c["c_ven_pul"],
        l_ar_sys=c["l_ar_sys"], l_ar_pul=c["l_ar_pul"],
        l_ven_sys=c["l_ven_sys"], l_ven_pul=c["l_ven_pul"],
        e_la_pass=c["e_la_pass"], e_ra_pass=c["e_ra_pass"],
        e_rv_pass=c["e_rv_pass"], e_la_act=c["e_la_act"],
        e_ra_act=c["e_ra_act"], e_rv_act=c["e_rv_act"],
        v0_la=c["v0_la"], v0_ra=c["v0_ra"], v0_rv=c["v0_rv"],
        r_min=c["r_min"], r_max=c["r_max"], period=c["period_s"],
        ventricle_timing=circulation.ChamberTiming(
            c["ventricle_onset_frac"], c["ventricle_duration_frac"]),
        atrium_timing=circulation.ChamberTiming(
            c["atrium_onset_frac"], c["atrium_duration_frac"]),
        e_lv_pass=c["lv_elastance"]["e_pass"],
        e_lv_act=c["lv_elastance"]["e_act"],
        v0_lv=c["lv_elastance"]["v0"])


def initial_circ_state(cfg: dict) -> np.ndarray:
    init = cfg["circulation"]["initial_state"]
    if init is None:
        return circulation.default_initial_state()
    arr = np.asarray(init, dtype=float)
    if arr.shape != (12,):
        raise ConfigError("'circulation.initial_state': expected 12 values")
    return arr
