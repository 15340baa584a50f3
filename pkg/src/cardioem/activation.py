"""Active-tension generation: a reduced two-state sarcomere model behind the
calcium/length/velocity interface of the full 20-ODE mean-field description.

States per material point: calcium-bound fraction of regulatory units c_b and
force-bearing crossbridge fraction f_b, plus low-pass-filtered sarcomere
length and shortening velocity (the velocity feedback is filtered to keep the
staggered mechanics coupling stable).

Calcium binds with a length-dependent dissociation constant
k_d(SL) = kd_bar + alpha_kd (SL - SL0); crossbridges attach at a rate scaling
with the bound fraction and detach faster while the sarcomere moves
(force-velocity surrogate). Tension:

    T_a = a_xb * xb_scale * f_b * ramp(SL)

with a piecewise-linear overlap ramp in SL. Impairment eta never enters here;
heterogeneity arrives through the calcium input only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class ActivationParams:
    """Sarcomere constants. The regulatory-unit steady-state and crossbridge
    cycling rates of the full model (mu, gamma, q, mu_fp0, mu_fp1, r0, alpha)
    are carried for reporting; the reduced kinetics use kd_bar, alpha_kd,
    k_off, k_basic, a_xb and sl0 plus the reduced-model constants below."""

    mu: float = 10.0
    gamma: float = 30.0
    q: float = 2.0
    kd_bar: float = 0.4          # uM
    alpha_kd: float = -0.2083    # uM/um
    k_off: float = 40.0          # 1/s
    k_basic: float = 8.0         # 1/s
    mu_fp0: float = 32.255       # 1/s
    mu_fp1: float = 0.768        # 1/s
    r0: float = 134.31           # 1/s
    alpha: float = 25.184
    a_xb: float = 160.0e6        # Pa
    sl0: float = 1.9             # um

    # reduced-model constants
    xb_scale: float = 2.0e-3     # dimensionless upscaling of f_b to stress
    velocity_sens: float = 0.3   # s/um, detachment speed-up per |dSL/dt|
    ramp_lo: float = 1.4         # um, zero-overlap length
    ramp_hi: float = 2.4         # um, full-overlap length
    theta_filter: float = 5e-3   # s, feedback low-pass time constant
    kd_floor: float = 0.05       # uM, guards the linear k_d(SL) law

    def __post_init__(self):
        if self.a_xb <= 0 or self.sl0 <= 0:
            raise ValueError("a_xb and sl0 must be positive")


@dataclass
class ActivationState:
    """Arrays over material points."""

    c_b: np.ndarray
    f_b: np.ndarray
    sl_prev: np.ndarray
    sl_filt: np.ndarray
    dsl_filt: np.ndarray

    @classmethod
    def rest(cls, n: int, params: ActivationParams) -> "ActivationState":
        return cls(
            c_b=np.zeros(n),
            f_b=np.zeros(n),
            sl_prev=np.full(n, params.sl0),
            sl_filt=np.full(n, params.sl0),
            dsl_filt=np.zeros(n),
        )

    def copy(self) -> "ActivationState":
        return ActivationState(self.c_b.copy(), self.f_b.copy(),
                               self.sl_prev.copy(), self.sl_filt.copy(),
                               self.dsl_filt.copy())


def compute_sl(F, f0, sl0: float):
    """Sarcomere length and fiber invariant: SL = sl0 * sqrt(I4f), I4f = |F f0|^2."""
    F = np.asarray(F, dtype=float)
    detF = np.linalg.det(F)
    if np.any(detF <= 0):
        raise ValueError("det F <= 0 in sarcomere length evaluation")
    Ff = np.einsum("...ij,...j->...i", F, f0)
    i4f = np.einsum("...i,...i->...", Ff, Ff)
    return sl0 * np.sqrt(i4f), i4f


def lowpass_alpha(dt: float, theta: float) -> float:
    """Exponential smoothing coefficient: DC gain exactly 1; theta -> 0 is
    pass-through."""
    if theta <= 0.0:
        return 1.0
    return 1.0 - np.exp(-dt / theta)


def stabilize_feedback(raw, dt: float, theta: float, initial: float = 0.0):
    """First-order low-pass over a uniformly sampled sequence."""
    a = lowpass_alpha(dt, theta)
    out = np.empty(len(raw))
    y = initial
    for i, r in enumerate(raw):
        y += a * (r - y)
        out[i] = y
    return out


def overlap_ramp(sl, params: ActivationParams):
    return np.clip((sl - params.ramp_lo) / (params.ramp_hi - params.ramp_lo),
                   0.0, 1.0)


def tension(state: ActivationState, params: ActivationParams) -> np.ndarray:
    return params.a_xb * params.xb_scale * state.f_b * overlap_ramp(
        state.sl_filt, params)


def activation_step(state: ActivationState, ca_um, sl, dt: float,
                    params: ActivationParams):
    """Advance the kinetics by dt (s) given calcium (uM) and sarcomere length
    (um); returns (state, T_a in Pa). The state is updated in place; the
    shortening velocity is derived from the SL history and filtered."""
    ca = np.maximum(np.asarray(ca_um, dtype=float), 0.0)
    sl = np.asarray(sl, dtype=float)

    a = lowpass_alpha(dt, params.theta_filter)
    raw_rate = (sl - state.sl_prev) / dt
    state.dsl_filt += a * (raw_rate - state.dsl_filt)
    state.sl_filt += a * (sl - state.sl_filt)
    state.sl_prev = sl.copy()

    kd = np.maximum(params.kd_bar + params.alpha_kd * (state.sl_filt - params.sl0),
                    params.kd_floor)
    dc = params.k_off * ((ca / kd) * (1.0 - state.c_b) - state.c_b)
    detach = 1.0 + params.velocity_sens * np.abs(state.dsl_filt)
    df = params.k_basic * (state.c_b * (1.0 - state.f_b) - detach * state.f_b)

    state.c_b += dt * dc
    state.f_b += dt * df
    if np.any(state.c_b < 0) or np.any(state.c_b > 1) or \
       np.any(state.f_b < 0) or np.any(state.f_b > 1):
        log.debug("activation state clamped to [0, 1]")
        np.clip(state.c_b, 0.0, 1.0, out=state.c_b)
        np.clip(state.f_b, 0.0, 1.0, out=state.f_b)

    return state, tension(state, params)


def activation_rhs(y, ca_um, sl, dsl, params: ActivationParams):
    """Plain ODE right-hand side for (c_b, f_b) at fixed inputs; reference
    integrators use this to cross-check activation_step."""
    c_b, f_b = y
    kd = max(params.kd_bar + params.alpha_kd * (sl - params.sl0), params.kd_floor)
    dc = params.k_off * ((ca_um / kd) * (1.0 - c_b) - c_b)
    detach = 1.0 + params.velocity_sens * abs(dsl)
    df = params.k_basic * (c_b * (1.0 - f_b) - detach * f_b)
    return np.array([dc, df])
