"""Server-side aggregation rules.

All rules take client *models* and return the next global model. Rules that are
defined on updates (norm bounding, FLTrust, centered clipping) subtract
``global_model`` first and add it back afterwards. Ties in any selection step
go to the lowest client index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInput
from .rng import RngStream, as_generator


class AggregatorKind(str, Enum):
    FED_AVG = "fed_avg"
    MEDIAN = "coord_median"
    TRIMMED_MEAN = "trimmed_mean"
    NORM_BOUNDING = "norm_bounding"
    MULTI_KRUM = "multi_krum"
    BULYAN = "bulyan"
    FLTRUST = "fltrust"
    CENTERED_CLIPPING = "centered_clipping"
    DNC = "dnc"

    @property
    def selects(self) -> bool:
        return self in (AggregatorKind.MULTI_KRUM, AggregatorKind.BULYAN, AggregatorKind.DNC)


@dataclass
class AggregationInput:
    client_models: np.ndarray
    assumed_malicious_m: int = 0
    global_model: np.ndarray | None = None
    norm_bound_tau: float = 1.0
    cc_radius_tau: float = 10.0
    cc_iters: int = 3
    cc_center: np.ndarray | None = None
    server_root_update: np.ndarray | None = None
    mkrum_c: int | None = None
    bulyan_strict: bool = False
    dnc_subsample_dim: int = 1000
    dnc_filter_frac: float = 1.0
    dnc_iters: int = 1
    dnc_power_steps: int = 50
    rng: RngStream = field(default_factory=lambda: RngStream(0))

    def __post_init__(self):
        X = np.asarray(self.client_models, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise InvalidInput("client_models must be a non-empty (N, r) array")
        self.client_models = X
        if self.assumed_malicious_m < 0:
            raise InvalidInput("assumed_malicious_m must be >= 0")

    @property
    def n(self) -> int:
        return self.client_models.shape[0]

    def reference(self) -> np.ndarray:
        if self.global_model is None:
            return np.zeros(self.client_models.shape[1])
        return np.asarray(self.global_model, dtype=np.float64)


@dataclass
class AggregationOutcome:
    aggregate: np.ndarray
    selected_indices: list[int] | None = None
    weights: np.ndarray | None = None


def fed_avg(inp: AggregationInput) -> AggregationOutcome:
    return AggregationOutcome(inp.client_models.mean(axis=0))


def coord_median(inp: AggregationInput) -> AggregationOutcome:
    return AggregationOutcome(np.median(inp.client_models, axis=0))


def _trim(X: np.ndarray, b: int) -> np.ndarray:
    n = X.shape[0]
    if n <= 2 * b:
        raise InvalidInput(f"trimmed mean needs N > 2b, got N={n}, b={b}")
    S = np.sort(X, axis=0)
    return S[b:n - b].mean(axis=0)


def trimmed_mean(inp: AggregationInput) -> AggregationOutcome:
    return AggregationOutcome(_trim(inp.client_models, inp.assumed_malicious_m))


def _clip(U: np.ndarray, tau: float) -> np.ndarray:
    norms = np.linalg.norm(U, axis=1)
    over = norms > tau
    scale = np.ones_like(norms)
    scale[over] = tau / norms[over]
    return U * scale[:, None]


def norm_bounding(inp: AggregationInput) -> AggregationOutcome:
    if inp.norm_bound_tau <= 0:
        raise InvalidInput("norm_bound_tau must be positive")
    ref = inp.reference()
    U = _clip(inp.client_models - ref, inp.norm_bound_tau)
    return AggregationOutcome(ref + U.mean(axis=0))


def _sq_dists(X: np.ndarray) -> np.ndarray:
    # direct differences rather than the Gram identity: exact ties must stay ties
    n = X.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        diff = X[i + 1:] - X[i]
        D[i, i + 1:] = np.einsum("ij,ij->i", diff, diff)
    return D + D.T


def _krum_scores(D: np.ndarray, active: np.ndarray, q: int) -> np.ndarray:
    sub = D[np.ix_(active, active)]
    n = len(active)
    q = min(q, n - 1)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(sub[i], i)
        scores[i] = np.sort(others)[:q].sum() if q > 0 else 0.0
    return scores


def _check_krum(n: int, m: int) -> int:
    q = n - m - 2
    if q < 1:
        raise InvalidInput(f"Krum needs N >= m + 3, got N={n}, m={m}")
    return q


def krum_select(inp: AggregationInput) -> int:
    """Index of the client with the smallest sum of squared distances to its
    ``N - m - 2`` nearest neighbours."""
    q = _check_krum(inp.n, inp.assumed_malicious_m)
    D = _sq_dists(inp.client_models)
    return int(np.argmin(_krum_scores(D, np.arange(inp.n), q)))


def _multi_krum_indices(X: np.ndarray, m: int, c: int) -> list[int]:
    n = X.shape[0]
    q = _check_krum(n, m)
    if not 1 <= c <= n:
        raise InvalidInput(f"multi-Krum selection size must lie in [1, {n}], got {c}")
    D = _sq_dists(X)
    active = np.arange(n)
    chosen = []
    # the neighbour count stays N - m - 2 and is capped by what remains
    for _ in range(c):
        scores = _krum_scores(D, active, q)
        j = int(np.argmin(scores))
        chosen.append(int(active[j]))
        active = np.delete(active, j)
    return chosen


def multi_krum(inp: AggregationInput, c: int | None = None) -> AggregationOutcome:
    if c is None:
        c = inp.mkrum_c if inp.mkrum_c is not None else inp.n - inp.assumed_malicious_m
    chosen = _multi_krum_indices(inp.client_models, inp.assumed_malicious_m, c)
    return AggregationOutcome(inp.client_models[chosen].mean(axis=0), sorted(chosen))


def bulyan(inp: AggregationInput) -> AggregationOutcome:
    """Multi-Krum picks ``N - 2m`` candidates; each coordinate then averages the
    ``N - 4m`` candidate values closest to that coordinate's median."""
    n, m = inp.n, inp.assumed_malicious_m
    if n < 4 * m + 3:
        if inp.bulyan_strict:
            raise InvalidInput(f"Bulyan needs N >= 4m + 3, got N={n}, m={m}")
        warnings.warn(f"Bulyan with N={n} < 4m+3={4 * m + 3}; clamping selection sizes")
    theta = max(n - 2 * m, 1)
    beta = max(theta - 2 * m, 1)
    if m == 0:
        chosen = list(range(n))
    else:
        chosen = _multi_krum_indices(inp.client_models, m, theta)
    S = inp.client_models[chosen]
    med = np.median(S, axis=0)
    order = np.argsort(np.abs(S - med), axis=0, kind="stable")[:beta]
    agg = np.take_along_axis(S, order, axis=0).mean(axis=0)
    return AggregationOutcome(agg, sorted(chosen))


def fltrust(inp: AggregationInput) -> AggregationOutcome:
    g0 = inp.server_root_update
    if g0 is None:
        raise InvalidInput("FLTrust needs a server root update")
    g0 = np.asarray(g0, dtype=np.float64)
    g0_norm = np.linalg.norm(g0)
    if g0_norm == 0:
        raise InvalidInput("FLTrust root update is zero")
    ref = inp.reference()
    U = inp.client_models - ref
    norms = np.linalg.norm(U, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    scores = np.where(norms > 0, np.maximum(0.0, (U @ g0) / (safe * g0_norm)), 0.0)
    total = scores.sum()
    if total == 0:
        return AggregationOutcome(ref.copy(), weights=scores)
    Uhat = U * (g0_norm / safe)[:, None]
    return AggregationOutcome(ref + (scores @ Uhat) / total, weights=scores)


def centered_clipping(inp: AggregationInput) -> AggregationOutcome:
    if inp.cc_radius_tau <= 0 or inp.cc_iters < 1:
        raise InvalidInput("centered clipping needs tau > 0 and at least one iteration")
    X = inp.client_models
    v = np.asarray(inp.cc_center if inp.cc_center is not None else inp.reference(), dtype=np.float64).copy()
    for _ in range(inp.cc_iters):
        v = v + _clip(X - v, inp.cc_radius_tau).mean(axis=0)
    return AggregationOutcome(v)


def top_right_singular_vector(A: np.ndarray, steps: int, rng) -> np.ndarray:
    """Power iteration on ``A^T A`` from a seeded random start."""
    gen = as_generator(rng)
    v = gen.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(steps):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return np.zeros_like(v)
        v = w / nw
    return v


def dnc(inp: AggregationInput) -> AggregationOutcome:
    """Divide-and-conquer outlier removal.

    Each pass samples a coordinate subset, centres the sub-vectors, scores each
    client by its squared projection on the top singular direction and flags the
    ``ceil(filter_frac * m)`` largest positive scores. Clients never flagged in
    any pass survive and are averaged.
    """
    n, r = inp.client_models.shape
    if n < 2:
        raise InvalidInput("DnC needs at least two clients")
    if inp.dnc_iters < 1 or not 0 < inp.dnc_filter_frac:
        raise InvalidInput("invalid DnC parameters")
    d = min(max(int(inp.dnc_subsample_dim), 1), r)
    n_remove = min(math.ceil(inp.dnc_filter_frac * inp.assumed_malicious_m), n - 1)
    gen = as_generator(inp.rng)
    good = np.ones(n, dtype=bool)
    for _ in range(inp.dnc_iters):
        coords = np.sort(gen.choice(r, size=d, replace=False))
        sub = inp.client_models[:, coords]
        centred = sub - sub.mean(axis=0)
        v = top_right_singular_vector(centred, inp.dnc_power_steps, gen)
        scores = (centred @ v) ** 2
        # rounding in the column mean leaves ~1 ulp residue for identical clients
        tol = (1e-12 * max(1.0, float(np.abs(sub).max()))) ** 2 * d
        ranked = sorted(range(n), key=lambda i: (-scores[i], i))
        flagged = [i for i in ranked[:n_remove] if scores[i] > tol]
        good[flagged] = False
    survivors = [int(i) for i in np.flatnonzero(good)]
    return AggregationOutcome(inp.client_models[survivors].mean(axis=0), survivors)


RULES = {
    AggregatorKind.FED_AVG: fed_avg,
    AggregatorKind.MEDIAN: coord_median,
    AggregatorKind.TRIMMED_MEAN: trimmed_mean,
    AggregatorKind.NORM_BOUNDING: norm_bounding,
    AggregatorKind.MULTI_KRUM: multi_krum,
    AggregatorKind.BULYAN: bulyan,
    AggregatorKind.FLTRUST: fltrust,
    AggregatorKind.CENTERED_CLIPPING: centered_clipping,
    AggregatorKind.DNC: dnc,
}


def aggregate(kind: AggregatorKind | str, inp: AggregationInput) -> AggregationOutcome:
    out = RULES[AggregatorKind(kind)](inp)
    if not np.all(np.isfinite(out.aggregate)):
        raise InvalidInput(f"{AggregatorKind(kind).value} produced a non-finite aggregate")
    return out
