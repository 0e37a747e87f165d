"""Scalar toy plant ``dw/dt = u`` driven by the sliding-mode controller.

The plant output is the controlled variable itself (unit derivative, no other
inputs), so on the surface the error should follow the linear ODE
``de/dt = -k e - C`` whose solution is ``analytic_error``.
"""
from __future__ import annotations

import numpy as np

from .controller import SlidingState, apply_control, compute_error, control_law, update_sliding_surface


def analytic_error(t, k: float, C: float, e0: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return (e0 + C / k) * np.exp(-k * t) - C / k


def simulate_toy(k: float, C: float, e0: float, dt: float = 0.01, horizon: float = 10.0,
                 control_gain: float = 0.05, surface_rule: str = "trapezoid", C1: float = 0.0):
    """Closed-loop error trajectory sampled at ``t = 0, dt, ..., horizon``.

    Returns ``(t, e, s)``.
    """
    n = int(round(horizon / dt))
    state = SlidingState(k=k, control_gain=control_gain, C=C, C1=C1, dt=dt, surface_rule=surface_rule)
    w_ref = np.zeros(1)
    w = w_ref - e0
    state.prev_malicious = w.copy()
    jac, theta = np.ones(1), np.zeros(1)
    es, ss = np.empty(n + 1), np.empty(n + 1)
    for i in range(n + 1):
        e = compute_error(w_ref, w)
        s = update_sliding_surface(state, e)
        es[i], ss[i] = e[0], s[0]
        if i < n:
            w = apply_control(state, control_law(state, e, s, jac, theta))[0]
    return np.arange(n + 1) * dt, es, ss


def rms_tracking_error(k: float, C: float, e0: float, **kw) -> float:
    t, e, _ = simulate_toy(k, C, e0, **kw)
    return float(np.sqrt(np.mean((e - analytic_error(t, k, C, e0)) ** 2)))
