"""Balloon-Windkessel transform from synaptic activity to BOLD.

Per region, the vasodilatory signal s, inflow f, volume v and
deoxyhemoglobin content q follow

    ds/dt = z - kappa*s - gamma_h*(f - 1)
    df/dt = s
    tau_h dv/dt = f - v^(1/alpha)
    tau_h dq/dt = f*(1 - (1-rho)^(1/f))/rho - v^(1/alpha) * q/v

with z the excitatory gating input, integrated by Euler steps on the
neural sampling grid, and

    BOLD = V0 * (k1*(1 - q) + k2*(1 - q/v) + k3*(1 - v)).

Constants are the canonical published values; they are not fitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dmf import InstabilityError


@dataclass(frozen=True)
class HemoConstants:
    kappa: float = 0.65      # 1/s, signal decay
    gamma_h: float = 0.41    # 1/s, flow-dependent elimination
    tau_h: float = 0.98      # s, transit time
    alpha: float = 0.32      # Grubb exponent
    rho: float = 0.34        # resting oxygen extraction
    V0: float = 0.02         # resting venous volume fraction

    def __post_init__(self):
        for name in ("kappa", "gamma_h", "tau_h", "alpha", "rho", "V0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def k1(self) -> float:
        return 7.0 * self.rho

    @property
    def k2(self) -> float:
        return 2.0

    @property
    def k3(self) -> float:
        return 2.0 * self.rho - 0.2


REST_STATE = (0.0, 1.0, 1.0, 1.0)  # (s, f, v, q)


def bold_transform(neural: np.ndarray, dt_n_ms: float, tr_ms: float,
                   constants: HemoConstants = HemoConstants()) -> np.ndarray:
    """BOLD series sampled once per tr_ms from neural drive at dt_n_ms.

    `neural` is (n_samples, n_regions) excitatory gating; integration
    starts from the rest state (0, 1, 1, 1). Output has
    floor(duration / tr_ms) rows, where duration = n_samples * dt_n_ms;
    row k is the signal after integrating up to time (k+1) * tr_ms.
    """
    neural = np.ascontiguousarray(np.asarray(neural, dtype=float))
    if neural.ndim != 2 or neural.shape[0] == 0:
        raise ValueError("neural must be a non-empty (time, regions) array")
    if tr_ms < dt_n_ms:
        raise ValueError("tr_ms must be at least dt_n_ms")
    steps, n = neural.shape
    duration_ms = steps * dt_n_ms
    n_out = int(np.floor(duration_ms / tr_ms + 1e-9))
    # step index after which sample k (time (k+1)*tr_ms) is recorded
    times = np.arange(1, n_out + 1, dtype=float) * tr_ms
    emit = np.ceil(times / dt_n_ms - 1e-9).astype(np.int64) - 1
    emit = emit[emit < steps]

    s = np.zeros(n)
    f = np.ones(n)
    v = np.ones(n)
    q = np.ones(n)
    out = np.empty((len(emit), n))
    c = constants
    wrote, bad = _kernels.balloon_steps(
        neural, dt_n_ms * 1e-3, s, f, v, q, c.kappa, c.gamma_h, c.tau_h,
        c.alpha, c.rho, c.V0, c.k1, c.k2, c.k3, emit, out)
    if bad >= 0:
        raise InstabilityError(bad)
    return out
