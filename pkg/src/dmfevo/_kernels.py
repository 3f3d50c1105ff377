"""Compiled inner loops for the mean-field dynamics.

All drift arithmetic lives in `_drift_into`, shared by the public drift
wrapper, the damped fixed-point solver and the Euler-Maruyama integrator,
so the three paths are bit-identical. Region parameters are passed as
(n_regions, 20) float64 arrays in the canonical index order of
:mod:`dmfevo.dmf`.
"""

import numpy as np
from numba import njit, prange

# parameter column indices (canonical order, see dmf.PARAM_NAMES)
A_E, B_E, D_E, W_E, TAU_E, A_I, B_I, D_I, W_I, TAU_I = 0, 1, 2, 3, 4, 5, 6, 7, 8, 9
W_EE, W_EI, W_IE, W_II, I_B, J, GAMMA, GAMMA_I, SIGMA, G = (
    10, 11, 12, 13, 14, 15, 16, 17, 18, 19)

RATE_SCALE = 1e-3  # Hz -> 1/ms


@njit(cache=True)
def transfer_scalar(x, d):
    """H in Hz for x = a*I - b; removable singularity at x = 0."""
    if abs(x) < 1e-9:
        return 1.0 / d
    if x < 0.0:
        e = np.exp(d * x)
        return x * e / (e - 1.0)
    return x / (1.0 - np.exp(-d * x))


@njit(cache=True)
def _drift_into(P, sc, se, si, dse, dsi):
    """Write dS_E/dt, dS_I/dt (1/ms) into dse, dsi; return max |drift|."""
    n = se.shape[0]
    m = 0.0
    for i in range(n):
        cpl = 0.0
        for j in range(n):
            cpl += sc[i, j] * se[j]
        p = P[i]
        ie = (p[I_B] + p[W_E] * p[J] * p[W_EE] * se[i]
              - p[J] * p[W_EI] * si[i] + p[G] * p[J] * cpl)
        ii = p[W_I] * p[J] * p[W_IE] * se[i] - p[J] * p[W_II] * si[i]
        he = transfer_scalar(p[A_E] * ie - p[B_E], p[D_E])
        hi = transfer_scalar(p[A_I] * ii - p[B_I], p[D_I])
        dse[i] = -se[i] / p[TAU_E] + (1.0 - se[i]) * p[GAMMA] * he * RATE_SCALE
        dsi[i] = -si[i] / p[TAU_I] + p[GAMMA_I] * hi * RATE_SCALE
        a = abs(dse[i])
        if a > m:
            m = a
        a = abs(dsi[i])
        if a > m:
            m = a
    return m


@njit(cache=True, parallel=True)
def fixed_point_batch(P, sc, s0, eta, tol, max_iter):
    """Damped iteration S <- S + eta*drift(S) per batch entry, independently.

    P: (B, n, 20); returns states (B, 2, n), converged flags and iteration
    counts. Entries are fully independent, so results do not depend on the
    batch composition or the number of threads.
    """
    B, n, _ = P.shape
    states = np.empty((B, 2, n))
    converged = np.zeros(B, dtype=np.int64)
    iters = np.zeros(B, dtype=np.int64)
    for b in prange(B):
        se = np.full(n, s0)
        si = np.full(n, s0)
        dse = np.empty(n)
        dsi = np.empty(n)
        used = max_iter
        ok = 0
        for it in range(max_iter):
            m = _drift_into(P[b], sc, se, si, dse, dsi)
            if not np.isfinite(m):
                used = it
                break
            if m < tol:
                used = it
                ok = 1
                break
            for i in range(n):
                se[i] += eta * dse[i]
                si[i] += eta * dsi[i]
        states[b, 0] = se
        states[b, 1] = si
        converged[b] = ok
        iters[b] = used
    return states, converged, iters


@njit(cache=True)
def euler_maruyama_block(P, sc, se, si, noise, dt, step0, emit_steps,
                         emit_pos, out_se, out_si):
    """Advance len(noise) Euler-Maruyama steps in place, recording samples.

    noise: (steps, 2, n) standard normals; global index of row t is
    step0 + t. After completing step s, the state is recorded when s equals
    emit_steps[emit_pos] (then emit_pos advances). S_E is clamped to [0, 1]
    and S_I to [0, inf) after every step. Returns (emit_pos, first_bad_step)
    with first_bad_step == -1 when all states stayed finite.
    """
    steps = noise.shape[0]
    n = se.shape[0]
    n_emit = emit_steps.shape[0]
    sqdt = np.sqrt(dt)
    dse = np.empty(n)
    dsi = np.empty(n)
    for t in range(steps):
        _drift_into(P, sc, se, si, dse, dsi)
        bad = False
        for i in range(n):
            v = se[i] + dse[i] * dt + P[i, SIGMA] * sqdt * noise[t, 0, i]
            if not np.isfinite(v):
                bad = True
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            se[i] = v
            w = si[i] + dsi[i] * dt + P[i, SIGMA] * sqdt * noise[t, 1, i]
            if not np.isfinite(w):
                bad = True
            if w < 0.0:
                w = 0.0
            si[i] = w
        if bad:
            return emit_pos, step0 + t
        if emit_pos < n_emit and step0 + t == emit_steps[emit_pos]:
            for i in range(n):
                out_se[emit_pos, i] = se[i]
                out_si[emit_pos, i] = si[i]
            emit_pos += 1
    return emit_pos, -1


@njit(cache=True)
def balloon_steps(z, dt_s, s, f, v, q, kappa, gamma_h, tau_h, alpha, rho,
                  v0, k1, k2, k3, emit_steps, out):
    """Euler steps of the hemodynamic ODE driven by z (steps, n).

    State arrays s, f, v, q advance in place; after completing step t the
    BOLD signal is recorded if t equals the next entry of emit_steps.
    Returns (n_written, first_bad_step).
    """
    steps = z.shape[0]
    n = s.shape[0]
    n_emit = emit_steps.shape[0]
    inv_alpha = 1.0 / alpha
    wrote = 0
    for t in range(steps):
        bad = False
        for i in range(n):
            fi = f[i]
            vi = v[i]
            vexp = vi ** inv_alpha
            ds = z[t, i] - kappa * s[i] - gamma_h * (fi - 1.0)
            df = s[i]
            dv = (fi - vexp) / tau_h
            dq = (fi * (1.0 - (1.0 - rho) ** (1.0 / fi)) / rho
                  - vexp * q[i] / vi) / tau_h
            s[i] += dt_s * ds
            f[i] += dt_s * df
            v[i] += dt_s * dv
            q[i] += dt_s * dq
            if not (np.isfinite(s[i]) and np.isfinite(f[i])
                    and np.isfinite(v[i]) and np.isfinite(q[i])):
                bad = True
        if bad:
            return wrote, t
        if wrote < n_emit and t == emit_steps[wrote]:
            for i in range(n):
                out[wrote, i] = v0 * (k1 * (1.0 - q[i])
                                      + k2 * (1.0 - q[i] / v[i])
                                      + k3 * (1.0 - v[i]))
            wrote += 1
    return wrote, -1
