"""Generating parameters for synthetic cohorts.

The synthetic stand-in data must give the optimizer a non-degenerate
target: the generating point sits in a live, near-critical regime (slow
collective modes over the heavy-tailed modular graph), which makes the
model FC strongly structured and makes fitness genuinely sensitive to the
parameters. Values were calibrated on the default 28-region cohort; all
lie inside the search ranges.
"""

from __future__ import annotations

import numpy as np

from .connectome import RSN_LABELS
from .dmf import DmfParams, RsnParamTable

# near-critical homogeneous generating point (noise amplitude kept small so
# stochastic runs stay in the linear neighbourhood of the fixed point)
_TRUTH_BASE = dict(
    a_E=375.0, b_E=124.4, d_E=0.141, W_E=1.0, tau_E=166.0,
    a_I=730.0, b_I=174.0, d_I=0.081, W_I=0.56, tau_I=9.8,
    w_EE=0.95, w_EI=1.4, w_IE=1.42, w_II=0.37,
    I_b=0.281, J=0.09, gamma=0.373, gamma_I=1.2, sigma=0.002, g=0.90,
)

# parameters varied across the seven networks in the heterogeneous truth,
# as (low, high) of a linear spread over the canonical label order
_TRUTH_SPREAD = {
    "tau_E": (120.0, 198.0),
    "w_EE": (0.75, 1.15),
    "I_b": (0.255, 0.305),
}


def default_truth() -> DmfParams:
    """Homogeneous generating parameters for synthetic subjects."""
    return DmfParams(**_TRUTH_BASE)


def rsn_varying_truth() -> RsnParamTable:
    """Heterogeneous generating parameters (per-network spread)."""
    base = default_truth()
    per_rsn = {}
    for r, label in enumerate(RSN_LABELS):
        overrides = {}
        for name, (lo, hi) in _TRUTH_SPREAD.items():
            overrides[name] = float(np.linspace(lo, hi, len(RSN_LABELS))[r])
        per_rsn[label] = base.replace(**overrides)
    return RsnParamTable(per_rsn)


def truth_by_name(name: str):
    if name == "homogeneous":
        return default_truth()
    if name == "rsn-varying":
        return rsn_varying_truth()
    raise ValueError(f"unknown truth preset {name!r}; "
                     f"use 'homogeneous' or 'rsn-varying'")
