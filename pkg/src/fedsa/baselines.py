"""Untargeted baseline attacks: LIE, Min-Max and Min-Sum.

Each takes the malicious clients' honest local models as a stand-in for the
benign population and returns one crafted model. Statistics are taken on
updates relative to ``reference`` (the current global model); with no
reference the inputs are treated as updates already.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .errors import InvalidInput


def _as_updates(proxies, reference):
    X = np.asarray(proxies, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInput("need at least two proxy vectors")
    ref = np.zeros(X.shape[1]) if reference is None else np.asarray(reference, dtype=np.float64)
    return X - ref, ref


def lie_z(n_clients: int, n_malicious: int) -> float:
    """Largest z such that ``s = floor(N/2) + 1 - m`` benign clients still sit
    farther from the mean than the crafted value."""
    if n_malicious < 0 or 2 * n_malicious >= n_clients:
        raise InvalidInput(f"LIE needs m < N/2, got N={n_clients}, m={n_malicious}")
    s = n_clients // 2 + 1 - n_malicious
    return float(norm.ppf((n_clients - s) / n_clients))


def lie_attack(benign_proxies, n_clients: int, n_malicious: int, reference=None,
               z: float | None = None) -> np.ndarray:
    U, ref = _as_updates(benign_proxies, reference)
    if z is None:
        z = lie_z(n_clients, n_malicious)
    elif 2 * n_malicious >= n_clients:
        raise InvalidInput(f"LIE needs m < N/2, got N={n_clients}, m={n_malicious}")
    return ref + U.mean(axis=0) - z * U.std(axis=0)


def _direction(U: np.ndarray, mode: str) -> np.ndarray:
    mu = U.mean(axis=0)
    if mode == "unit-mean":
        nrm = np.linalg.norm(mu)
        return -mu / nrm if nrm > 0 else np.zeros_like(mu)
    if mode == "std":
        return -U.std(axis=0)
    if mode == "sign":
        return -np.sign(mu)
    raise InvalidInput(f"unknown perturbation mode {mode!r}")


def _pairwise(U: np.ndarray) -> np.ndarray:
    diff = U[:, None, :] - U[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def min_max_feasible(U: np.ndarray, cand: np.ndarray) -> bool:
    D = _pairwise(U)
    return float(np.linalg.norm(U - cand, axis=1).max()) <= float(D.max())


def min_sum_feasible(U: np.ndarray, cand: np.ndarray) -> bool:
    D = _pairwise(U)
    return float((np.linalg.norm(U - cand, axis=1) ** 2).sum()) <= float((D ** 2).sum(axis=1).max())


def _search_gamma(U, p, bound_fn, lhs_fn, iters: int = 50):
    D = _pairwise(U)
    bound = bound_fn(D)
    mu = U.mean(axis=0)
    if D.max() == 0 or not np.any(p):
        return 0.0, mu

    def ok(g):
        return lhs_fn(U, mu + g * p) <= bound

    lo, hi = 0.0, 10.0 * float(D.max())
    if ok(hi):
        return hi, mu + hi * p
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, mu + lo * p


def min_max_attack(benign_proxies, perturb_mode: str = "unit-mean", reference=None,
                   return_gamma: bool = False):
    """Push along the perturbation direction as far as the crafted update stays
    within the benign diameter of every benign update."""
    U, ref = _as_updates(benign_proxies, reference)
    gamma, cand = _search_gamma(
        U, _direction(U, perturb_mode),
        lambda D: float(D.max()),
        lambda U_, c: float(np.linalg.norm(U_ - c, axis=1).max()))
    return (ref + cand, gamma) if return_gamma else ref + cand


def min_sum_attack(benign_proxies, perturb_mode: str = "unit-mean", reference=None,
                   return_gamma: bool = False):
    """Same search, but bounding the crafted update's sum of squared distances
    by the largest such sum over benign updates."""
    U, ref = _as_updates(benign_proxies, reference)
    gamma, cand = _search_gamma(
        U, _direction(U, perturb_mode),
        lambda D: float((D ** 2).sum(axis=1).max()),
        lambda U_, c: float((np.linalg.norm(U_ - c, axis=1) ** 2).sum()))
    return (ref + cand, gamma) if return_gamma else ref + cand
