"""Closed-loop lumped circulation: four chambers as time-varying elastances,
systemic/pulmonary arterial and venous RLC compartments, valves as non-ideal
diodes. Explicit 4th-order Runge-Kutta stepping with a startup stability
check against the stiffest circuit time constant.

Units: mL, mmHg, s. State vector (12,):

    [V_LA, V_LV, V_RA, V_RV,
     p_AR_SYS, p_VEN_SYS, p_AR_PUL, p_VEN_PUL,
     Q_AR_SYS, Q_VEN_SYS, Q_AR_PUL, Q_VEN_PUL]

In coupled mode the LV pressure is supplied externally (the 3D model replaces
the LV elastance element); in standalone mode an LV elastance closes the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATE_NAMES = (
    "V_LA", "V_LV", "V_RA", "V_RV",
    "p_AR_SYS", "p_VEN_SYS", "p_AR_PUL", "p_VEN_PUL",
    "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL",
)

IDX_V_LA, IDX_V_LV, IDX_V_RA, IDX_V_RV = 0, 1, 2, 3
IDX_P_AR_SYS, IDX_P_VEN_SYS, IDX_P_AR_PUL, IDX_P_VEN_PUL = 4, 5, 6, 7
IDX_Q_AR_SYS, IDX_Q_VEN_SYS, IDX_Q_AR_PUL, IDX_Q_VEN_PUL = 8, 9, 10, 11


@dataclass
class ChamberTiming:
    """Activation pulse: squared half-sine of the given duration starting at
    onset (fractions of the heartbeat period)."""

    onset_frac: float
    duration_frac: float


@dataclass
class CircParams:
    # external circulation
    r_ar_sys: float = 0.64        # mmHg s/mL
    r_ar_pul: float = 0.032116
    r_ven_sys: float = 0.32
    r_ven_pul: float = 0.035684
    c_ar_sys: float = 1.2         # mL/mmHg
    c_ar_pul: float = 10.0
    c_ven_sys: float = 60.0
    c_ven_pul: float = 16.0
    l_ar_sys: float = 5e-3        # mmHg s^2/mL
    l_ar_pul: float = 5e-4
    l_ven_sys: float = 5e-4
    l_ven_pul: float = 5e-4
    # cardiac chambers
    e_la_pass: float = 0.18       # mmHg/mL
    e_ra_pass: float = 0.07
    e_rv_pass: float = 0.05
    e_la_act: float = 0.07
    e_ra_act: float = 0.06
    e_rv_act: float = 0.55
    v0_la: float = 4.0            # mL
    v0_ra: float = 4.0
    v0_rv: float = 16.0
    # valves
    r_min: float = 0.0075
    r_max: float = 75006.2
    # timing
    period: float = 0.8           # s
    ventricle_timing: ChamberTiming = field(
        default_factory=lambda: ChamberTiming(0.0, 0.3))
    atrium_timing: ChamberTiming = field(
        default_factory=lambda: ChamberTiming(0.85, 0.15))
    # standalone LV elastance (the 3D model replaces it in coupled runs;
    # values are artifact defaults, not tabulated ones)
    e_lv_pass: float = 0.08
    e_lv_act: float = 2.75
    v0_lv: float = 5.0

    def __post_init__(self):
        for name in ("r_ar_sys", "r_ar_pul", "r_ven_sys", "r_ven_pul",
                     "c_ar_sys", "c_ar_pul", "c_ven_sys", "c_ven_pul"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def default_initial_state() -> np.ndarray:
    return np.array([
        65.0, 120.0, 65.0, 145.0,     # chamber volumes, mL
        70.0, 24.0, 22.0, 12.0,       # compartment pressures, mmHg
        0.0, 0.0, 0.0, 0.0,           # fluxes, mL/s
    ])


def activation_pulse(t: float, period: float, timing: ChamberTiming) -> float:
    """Periodic squared half-sine in [0, 1]."""
    tau = (t / period - timing.onset_frac) % 1.0
    if tau < timing.duration_frac:
        return float(np.sin(np.pi * tau / timing.duration_frac) ** 2)
    return 0.0


def elastance(t: float, chamber: str, params: CircParams) -> float:
    """Time-varying elastance E_pass + E_act_max * pulse(t) (mmHg/mL)."""
    if chamber in ("LA", "RA"):
        timing = params.atrium_timing
        e_pass = params.e_la_pass if chamber == "LA" else params.e_ra_pass
        e_act = params.e_la_act if chamber == "LA" else params.e_ra_act
    elif chamber == "RV":
        timing = params.ventricle_timing
        e_pass, e_act = params.e_rv_pass, params.e_rv_act
    elif chamber == "LV":
        timing = params.ventricle_timing
        e_pass, e_act = params.e_lv_pass, params.e_lv_act
    else:
        raise ValueError(f"unknown chamber '{chamber}'")
    return e_pass + e_act * activation_pulse(t, params.period, timing)


def valve_flow(dp: float, params: CircParams) -> float:
    """Non-ideal diode: Q = dp/R_min forward, dp/R_max reverse."""
    return dp / params.r_min if dp >= 0.0 else dp / params.r_max


def chamber_pressures(t: float, c: np.ndarray, params: CircParams,
                      p_lv: float | None) -> dict:
    p_la = elastance(t, "LA", params) * (c[IDX_V_LA] - params.v0_la)
    p_ra = elastance(t, "RA", params) * (c[IDX_V_RA] - params.v0_ra)
    p_rv = elastance(t, "RV", params) * (c[IDX_V_RV] - params.v0_rv)
    if p_lv is None:
        p_lv = elastance(t, "LV", params) * (c[IDX_V_LV] - params.v0_lv)
    return {"LA": p_la, "LV": float(p_lv), "RA": p_ra, "RV": p_rv}


def valve_flows(t: float, c: np.ndarray, params: CircParams,
                p_lv: float | None) -> dict:
    p = chamber_pressures(t, c, params, p_lv)
    return {
        "MV": valve_flow(p["LA"] - p["LV"], params),
        "AV": valve_flow(p["LV"] - c[IDX_P_AR_SYS], params),
        "TV": valve_flow(p["RA"] - p["RV"], params),
        "PV": valve_flow(p["RV"] - c[IDX_P_AR_PUL], params),
    }


def circ_rhs(t: float, c: np.ndarray, params: CircParams,
             p_lv: float | None = None) -> np.ndarray:
    """dc/dt; p_lv in mmHg or None for the standalone LV elastance."""
    p = chamber_pressures(t, c, params, p_lv)
    q = valve_flows(t, c, params, p_lv)

    dc = np.empty(12)
    dc[IDX_V_LA] = c[IDX_Q_VEN_PUL] - q["MV"]
    dc[IDX_V_LV] = q["MV"] - q["AV"]
    dc[IDX_V_RA] = c[IDX_Q_VEN_SYS] - q["TV"]
    dc[IDX_V_RV] = q["TV"] - q["PV"]
    dc[IDX_P_AR_SYS] = (q["AV"] - c[IDX_Q_AR_SYS]) / params.c_ar_sys
    dc[IDX_P_VEN_SYS] = (c[IDX_Q_AR_SYS] - c[IDX_Q_VEN_SYS]) / params.c_ven_sys
    dc[IDX_P_AR_PUL] = (q["PV"] - c[IDX_Q_AR_PUL]) / params.c_ar_pul
    dc[IDX_P_VEN_PUL] = (c[IDX_Q_AR_PUL] - c[IDX_Q_VEN_PUL]) / params.c_ven_pul
    dc[IDX_Q_AR_SYS] = (-params.r_ar_sys * c[IDX_Q_AR_SYS]
                        + c[IDX_P_AR_SYS] - c[IDX_P_VEN_SYS]) / params.l_ar_sys
    dc[IDX_Q_VEN_SYS] = (-params.r_ven_sys * c[IDX_Q_VEN_SYS]
                         + c[IDX_P_VEN_SYS] - p["RA"]) / params.l_ven_sys
    dc[IDX_Q_AR_PUL] = (-params.r_ar_pul * c[IDX_Q_AR_PUL]
                        + c[IDX_P_AR_PUL] - c[IDX_P_VEN_PUL]) / params.l_ar_pul
    dc[IDX_Q_VEN_PUL] = (-params.r_ven_pul * c[IDX_Q_VEN_PUL]
                         + c[IDX_P_VEN_PUL] - p["LA"]) / params.l_ven_pul
    return dc


def total_blood_volume(c: np.ndarray, params: CircParams) -> float:
    """Chamber volumes plus compartment stored volumes (conserved quantity)."""
    return float(
        c[IDX_V_LA] + c[IDX_V_LV] + c[IDX_V_RA] + c[IDX_V_RV]
        + params.c_ar_sys * c[IDX_P_AR_SYS] + params.c_ven_sys * c[IDX_P_VEN_SYS]
        + params.c_ar_pul * c[IDX_P_AR_PUL] + params.c_ven_pul * c[IDX_P_VEN_PUL])


def stiffest_time_constant(params: CircParams) -> float:
    """Smallest circuit time constant (s), for the explicit-step check."""
    taus = [
        params.l_ar_sys / params.r_ar_sys,
        params.l_ar_pul / params.r_ar_pul,
        params.l_ven_sys / params.r_ven_sys,
        params.l_ven_pul / params.r_ven_pul,
        params.r_min * params.c_ar_sys,
        params.r_min * params.c_ar_pul,
        params.r_min / (params.e_la_pass + params.e_la_act),
        params.r_min / (params.e_ra_pass + params.e_ra_act),
        params.r_min / (params.e_rv_pass + params.e_rv_act),
        np.sqrt(params.l_ar_sys * params.c_ar_sys),
        np.sqrt(params.l_ar_pul * params.c_ar_pul),
    ]
    return float(min(taus))


class CircSolver:
    """Explicit RK4 integrator with instability detection."""

    def __init__(self, params: CircParams | None = None, dt: float = 5e-4,
                 safety: float = 0.5):
        self.params = params or CircParams()
        self.dt = float(dt)
        tau_min = stiffest_time_constant(self.params)
        if self.dt > safety * tau_min:
            raise ValueError(
                f"explicit step dt = {self.dt} exceeds {safety} x smallest "
                f"time constant {tau_min:.4g} s")

    def step(self, c: np.ndarray, t: float, p_lv: float | None = None,
             dt: float | None = None) -> np.ndarray:
        h = self.dt if dt is None else dt
        par = self.params
        k1 = circ_rhs(t, c, par, p_lv)
        k2 = circ_rhs(t + h / 2, c + h / 2 * k1, par, p_lv)
        k3 = circ_rhs(t + h / 2, c + h / 2 * k2, par, p_lv)
        k4 = circ_rhs(t + h, c + h * k3, par, p_lv)
        c_new = c + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        self._check(c_new, t + h)
        return c_new

    @staticmethod
    def _check(c: np.ndarray, t: float):
        if np.any(c[:4] < 0.0):
            bad = STATE_NAMES[int(np.argmin(c[:4]))]
            raise RuntimeError(f"circulation unstable: {bad} < 0 at t = {t:.4f} s")
        if np.any(np.abs(c[4:8]) > 500.0):
            bad = STATE_NAMES[4 + int(np.argmax(np.abs(c[4:8])))]
            raise RuntimeError(
                f"circulation unstable: |{bad}| > 500 mmHg at t = {t:.4f} s")


def run_standalone(params: CircParams | None = None, n_beats: int = 20,
                   dt: float = 5e-4, c0: np.ndarray | None = None,
                   record: bool = True):
    """Standalone (all-elastance) closed-loop run.

    Returns (c_final, history) with history rows
    [t, c(12), p_LV, Q_MV, Q_AV, Q_TV, Q_PV] per step when record is True.
    """
    params = params or CircParams()
    solver = CircSolver(params, dt)
    c = default_initial_state().copy() if c0 is None else np.asarray(c0, float).copy()
    t = 0.0
    steps = int(round(n_beats * params.period / dt))
    rows = []
    for _ in range(steps):
        if record:
            p = chamber_pressures(t, c, params, None)
            q = valve_flows(t, c, params, None)
            rows.append([t, *c, p["LV"], q["MV"], q["AV"], q["TV"], q["PV"]])
        c = solver.step(c, t)
        t += dt
    return c, (np.asarray(rows) if record else None)
