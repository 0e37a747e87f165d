"""Sliding-mode poisoning controller.

The attacker treats the global model as the output of a nonlinear plant whose
input is the (shared) malicious model. Per round it

1. measures the error ``e_t = w_ref - w_t``,
2. integrates the sliding surface ``s_t = C1 + sum dt * (de/dt + k e + C)``,
3. computes the control ``u_t = J^-1 (k e_t + gain * sign(s_t) - Theta_t + C)``,
4. moves the malicious model one Euler step ``w'_{t+1} = w'_t + dt u_t``.

On the surface ``s = 0`` the error obeys ``de/dt = -k e - C`` and settles at
``-C/k``, i.e. the global model settles at ``w_ref + C/k``.

All vector operations are coordinate-wise; the aggregator derivative ``J`` is
approximated by a diagonal.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ControllerFault, InvalidInput
from .rng import RngStream, as_generator


class JacobianMode(str, Enum):
    ANALYTIC_FEDAVG = "analytic-fedavg"
    FINITE_DIFFERENCE = "finite-difference"


class ThetaMode(str, Enum):
    OMNISCIENT = "omniscient"
    PROXY = "proxy"
    SIMPLIFIED = "simplified"


class SurfaceRule(str, Enum):
    """Quadrature for the ``k e + C`` part of the surface integral.

    ``left`` pairs with the explicit Euler plant step and turns the closed loop
    into the exact discrete reaching law ``s_{t+1} = s_t - dt * gain * sign(s_t)``
    when the plant model is exact. ``trapezoid`` makes motion on the surface
    second-order accurate in ``dt`` (used for the continuous-time toy).
    """
    LEFT = "left"
    RIGHT = "right"
    TRAPEZOID = "trapezoid"


def _vec(x, r: int) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        return np.full(r, float(v))
    if v.shape != (r,):
        raise InvalidInput(f"expected a scalar or a length-{r} vector, got shape {v.shape}")
    return v.copy()


@dataclass
class SlidingState:
    k: float
    control_gain: float
    C: np.ndarray | float = 0.0
    C1: np.ndarray | float = 0.0
    dt: float = 1.0
    jacobian_mode: JacobianMode = JacobianMode.ANALYTIC_FEDAVG
    theta_mode: ThetaMode = ThetaMode.OMNISCIENT
    eps_jac: float = 1e-6
    surface_rule: SurfaceRule = SurfaceRule.LEFT
    boundary_layer: float | None = None
    jitter: float = 0.0
    s: np.ndarray | None = None
    prev_e: np.ndarray | None = None
    prev_malicious: np.ndarray | None = None
    prev_prev_malicious: np.ndarray | None = None
    prev_aggregate: np.ndarray | None = None
    prev_theta: np.ndarray | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.k <= 0 or self.control_gain <= 0 or self.dt <= 0 or self.eps_jac <= 0:
            raise InvalidInput("k, control_gain, dt and eps_jac must be positive")
        self.jacobian_mode = JacobianMode(self.jacobian_mode)
        self.theta_mode = ThetaMode(self.theta_mode)
        self.surface_rule = SurfaceRule(self.surface_rule)

    def offset(self, r: int) -> np.ndarray:
        return _vec(self.C, r)

    def set_objective(self, C) -> None:
        """Change the offset mid-run; the surface keeps its integral."""
        self.C = np.asarray(C, dtype=np.float64).copy()


def compute_error(w_tilde: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    w_t = np.asarray(w_t, dtype=np.float64)
    if w_tilde.shape != w_t.shape:
        raise InvalidInput(f"length mismatch: {w_tilde.shape} vs {w_t.shape}")
    return w_tilde - w_t


def update_sliding_surface(state: SlidingState, e_t: np.ndarray) -> np.ndarray:
    """Advance the discrete surface integral by one step and return ``s_t``.

    The first call only initialises: ``s_0 = C1`` and the stored previous error
    becomes ``e_0``.
    """
    e_t = np.asarray(e_t, dtype=np.float64)
    r = e_t.size
    if state.prev_e is None or state.s is None:
        state.s = _vec(state.C1, r)
        state.prev_e = e_t.copy()
        return state.s.copy()
    C = state.offset(r)
    e_prev = state.prev_e
    if state.surface_rule is SurfaceRule.LEFT:
        drive = state.k * e_prev
    elif state.surface_rule is SurfaceRule.RIGHT:
        drive = state.k * e_t
    else:
        drive = 0.5 * state.k * (e_t + e_prev)
    # dt * (de/dt) with the backward difference is just the error increment
    state.s = state.s + (e_t - e_prev) + state.dt * (drive + C)
    state.prev_e = e_t.copy()
    return state.s.copy()


def switching(state: SlidingState, s: np.ndarray) -> np.ndarray:
    """``sign(s)`` with ``sign(0) = 0``, or a saturation inside the boundary layer."""
    if state.boundary_layer:
        return np.clip(s / state.boundary_layer, -1.0, 1.0)
    return np.sign(s)


def estimate_jacobian(state: SlidingState, w_t: np.ndarray, n_clients: int, n_malicious: int) -> np.ndarray:
    """Per-client derivative ``dF/dw'_i`` of the aggregate, one value per coordinate.

    ``analytic-fedavg`` returns ``1/N``. ``finite-difference`` divides the last
    aggregate step by the last malicious step (shared by the ``n_malicious``
    submitting clients, hence the division by ``n_malicious``); the benign share
    of the aggregate step, ``Theta * dt`` from the previous round, is removed
    first when known. Coordinates whose quotient is unusable -- tiny or
    non-finite denominator, non-positive estimate -- take the ``1/N`` fallback,
    as does every coordinate before two rounds of history exist. Everything is
    clamped to ``[eps_jac, 1/eps_jac]``.
    """
    w_t = np.asarray(w_t, dtype=np.float64)
    fallback = 1.0 / n_clients
    d = np.full(w_t.size, fallback)
    if state.jacobian_mode is JacobianMode.FINITE_DIFFERENCE and state.prev_aggregate is not None \
            and state.prev_prev_malicious is not None:
        dF = w_t - state.prev_aggregate
        if state.prev_theta is not None:
            dF = dF - state.dt * state.prev_theta
        dw = state.prev_malicious - state.prev_prev_malicious
        ok = np.abs(dw) >= state.eps_jac
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(ok, dF / np.where(ok, dw, 1.0), np.nan) / max(n_malicious, 1)
        d = np.where(~np.isfinite(q) | (q <= 0), fallback, q)
    return np.clip(d, state.eps_jac, 1.0 / state.eps_jac)


def estimate_theta(state: SlidingState, d: np.ndarray, *, benign_now=None, benign_prev=None,
                   proxy_now=None, proxy_prev=None, n_benign: int = 0,
                   omniscient_allowed: bool = True) -> np.ndarray:
    """Benign clients' contribution to the aggregate's velocity.

    ``omniscient``: ``sum_i d * (w_i(t) - w_i(t-1)) / dt`` over true benign models.
    ``proxy``: the malicious clients' own honest velocity, averaged, times
    ``n_benign * d``. ``simplified``: zero.
    """
    mode = state.theta_mode
    if mode is ThetaMode.SIMPLIFIED:
        return np.zeros_like(d)
    if mode is ThetaMode.OMNISCIENT:
        if not omniscient_allowed:
            raise ConfigError("omniscient Theta needs simulator-granted access to benign models")
        if benign_now is None or len(benign_now) == 0:
            return np.zeros_like(d)
        vel = (np.asarray(benign_now) - np.asarray(benign_prev)).sum(axis=0) / state.dt
        return d * vel
    if proxy_now is None or proxy_prev is None or len(proxy_now) == 0:
        return np.zeros_like(d)
    vel = (np.asarray(proxy_now) - np.asarray(proxy_prev)).mean(axis=0) / state.dt
    return n_benign * d * vel


def _check_finite(u: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(u)):
        raise ControllerFault("non-finite control command")
    return u


def control_law(state: SlidingState, e_t, s_t, jac, theta) -> np.ndarray:
    e_t = np.asarray(e_t, dtype=np.float64)
    C = state.offset(e_t.size)
    drive = state.k * e_t + state.control_gain * switching(state, np.asarray(s_t)) - theta + C
    return _check_finite(drive / jac)


def simplified_control_law(state: SlidingState, s_t, jac) -> np.ndarray:
    return _check_finite(state.control_gain * switching(state, np.asarray(s_t, dtype=np.float64)) / jac)


def apply_control(state: SlidingState, u_t: np.ndarray, n_submit: int = 1,
                  rng: RngStream | np.random.Generator | None = None) -> list[np.ndarray]:
    """Euler step of the malicious model; returns one submission per malicious client."""
    if state.prev_malicious is None:
        raise InvalidInput("controller has no malicious model yet")
    w_next = state.prev_malicious + state.dt * np.asarray(u_t, dtype=np.float64)
    state.prev_prev_malicious = state.prev_malicious
    state.prev_malicious = w_next
    if state.jitter > 0 and n_submit > 0:
        gen = as_generator(rng if rng is not None else 0)
        return [w_next + state.jitter * gen.standard_normal(w_next.size) for _ in range(n_submit)]
    return [w_next.copy() for _ in range(n_submit)]


def saturate_to_proxies(state: SlidingState, proxies, radius: float) -> np.ndarray:
    """Actuator saturation: clamp the malicious model coordinate-wise to
    ``mean +- radius * std`` of the attacker's own honest models. The clamped
    model becomes the controller's actuator state."""
    if radius <= 0:
        raise InvalidInput("saturation radius must be positive")
    P = np.asarray(proxies, dtype=np.float64)
    mu, sd = P.mean(axis=0), P.std(axis=0)
    state.prev_malicious = np.clip(state.prev_malicious, mu - radius * sd, mu + radius * sd)
    return state.prev_malicious


def calibrate_C(lib, w_tilde: np.ndarray, target_acc: float, k: float, tolerance: float = 0.02) -> np.ndarray:
    """Offset that moves the equilibrium ``w_tilde + C/k`` onto the checkpoint
    whose accuracy is closest to ``target_acc`` (fractions in [0, 1])."""
    w_tgt, acc = lib.nearest(target_acc)
    if abs(acc - target_acc) > tolerance:
        warnings.warn(f"closest reference checkpoint has accuracy {acc:.4f}, target {target_acc:.4f}")
    return k * (w_tgt - np.asarray(w_tilde, dtype=np.float64))
