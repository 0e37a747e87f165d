"""Slow, independent reference implementations used to cross-check the fast
code paths, plus the suites behind ``fedsa oracle-check``.

The aggregator oracles share no code with ``aggregators``: plain loops,
Python sorting and a full SVD in place of power iteration.
"""
from __future__ import annotations

import itertools
import math
import warnings

import numpy as np

from . import aggregators as agg
from . import rng as tags
from .model import MlpModel, loss_grad
from .rng import RngStream, as_generator
from .toy import rms_tracking_error

ODE_GRID = list(itertools.product((0.5, 1.0, 2.0), (0.0, 0.2), (1.0, -1.0)))


def _rows(X):
    return [list(map(float, row)) for row in np.asarray(X, dtype=np.float64)]


def _norm(v):
    return math.sqrt(sum(a * a for a in v))


def _sub(a, b):
    return [x - y for x, y in zip(a, b)]


def oracle_fed_avg(X):
    rows = _rows(X)
    return np.array([sum(col) / len(rows) for col in zip(*rows)])


def oracle_median(X):
    out = []
    for col in zip(*_rows(X)):
        s = sorted(col)
        n = len(s)
        out.append(s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2]))
    return np.array(out)


def oracle_trimmed_mean(X, b):
    out = []
    for col in zip(*_rows(X)):
        s = sorted(col)[b:len(col) - b]
        out.append(sum(s) / len(s))
    return np.array(out)


def oracle_clip(u, tau):
    n = _norm(u)
    return list(u) if n <= tau else [x * tau / n for x in u]


def oracle_norm_bounding(X, ref, tau):
    clipped = [oracle_clip(_sub(x, ref), tau) for x in _rows(X)]
    return np.array(ref) + oracle_fed_avg(clipped), clipped


def _sqdist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def oracle_multi_krum(X, m, c):
    rows = _rows(X)
    n = len(rows)
    q = n - m - 2
    remaining = list(range(n))
    chosen = []
    for _ in range(c):
        best, best_score = None, None
        for i in remaining:
            d = sorted(_sqdist(rows[i], rows[j]) for j in remaining if j != i)
            score = sum(d[:min(q, len(d))])
            if best_score is None or score < best_score:
                best, best_score = i, score
        chosen.append(best)
        remaining.remove(best)
    chosen.sort()
    return oracle_fed_avg([rows[i] for i in chosen]), chosen


def oracle_bulyan(X, m):
    rows = _rows(X)
    n = len(rows)
    theta = max(n - 2 * m, 1)
    beta = max(theta - 2 * m, 1)
    chosen = list(range(n)) if m == 0 else oracle_multi_krum(X, m, theta)[1]
    sel = [rows[i] for i in chosen]
    med = oracle_median(sel)
    out = []
    for j in range(len(rows[0])):
        vals = sorted(((abs(v[j] - med[j]), k, v[j]) for k, v in enumerate(sel)))[:beta]
        out.append(sum(v for _, _, v in vals) / beta)
    return np.array(out), chosen


def oracle_fltrust(X, ref, g0):
    g0 = list(map(float, g0))
    n0 = _norm(g0)
    num = [0.0] * len(g0)
    total = 0.0
    for x in _rows(X):
        u = _sub(x, ref)
        nu = _norm(u)
        if nu == 0:
            continue
        ts = max(0.0, sum(a * b for a, b in zip(u, g0)) / (nu * n0))
        total += ts
        num = [acc + ts * a * n0 / nu for acc, a in zip(num, u)]
    if total == 0:
        return np.array(ref, dtype=np.float64)
    return np.array(ref) + np.array(num) / total


def oracle_centered_clipping(X, center, tau, iters):
    v = list(map(float, center))
    steps = []
    for _ in range(iters):
        step = oracle_fed_avg([oracle_clip(_sub(x, v), tau) for x in _rows(X)])
        steps.append(float(np.linalg.norm(step)))
        v = [a + b for a, b in zip(v, step)]
    return np.array(v), steps


def oracle_dnc(X, m, filter_frac=1.0):
    """Single pass over all coordinates with an exact SVD. Returns survivors and
    the ratio of the top two singular values (power iteration needs a gap)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    centred = X - X.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    gap = sv[0] / sv[1] if len(sv) > 1 and sv[1] > 0 else math.inf
    scores = [float(np.dot(row, vt[0]) ** 2) for row in centred]
    n_remove = min(math.ceil(filter_frac * m), n - 1)
    ranked = sorted(range(n), key=lambda i: (-scores[i], i))[:n_remove]
    flagged = {i for i in ranked if scores[i] > 1e-18}
    survivors = [i for i in range(n) if i not in flagged]
    return oracle_fed_avg(X[survivors]), survivors, gap


# -- suites ------------------------------------------------------------------

def _instance(gen, n_lo=1, n_hi=10, r_hi=6):
    n = int(gen.integers(n_lo, n_hi + 1))
    r = int(gen.integers(1, r_hi + 1))
    scale = float(gen.choice([1e-3, 1.0, 1e3]))
    return gen.standard_normal((n, r)) * scale, gen.standard_normal(r) * scale


def _close(a, b, tol=1e-9):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and bool(np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b))))


def check_aggregators(instances: int = 200, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Fast rule vs brute-force oracle on random small instances (N <= 10, r <= 6)."""
    gen = as_generator(RngStream(seed, (tags.ORACLE,)))
    results = []

    def suite(name, one):
        bad = 0
        for _ in range(instances):
            bad += not one()
        results.append((name, bad == 0, f"{instances - bad}/{instances} instances agree"))

    def fa():
        X, _ = _instance(gen)
        return _close(agg.fed_avg(agg.AggregationInput(X)).aggregate, oracle_fed_avg(X))

    def med():
        X, _ = _instance(gen)
        out = agg.coord_median(agg.AggregationInput(X)).aggregate
        return _close(out, oracle_median(X)) and bool(np.all(out >= X.min(0)) and np.all(out <= X.max(0)))

    def tm():
        X, _ = _instance(gen, n_lo=3)
        b = int(gen.integers(0, (X.shape[0] - 1) // 2 + 1))
        return _close(agg.trimmed_mean(agg.AggregationInput(X, b)).aggregate, oracle_trimmed_mean(X, b))

    def nb():
        X, ref = _instance(gen)
        tau = float(gen.uniform(0.1, 3.0)) * float(np.abs(X).max())
        out = agg.norm_bounding(agg.AggregationInput(X, global_model=ref, norm_bound_tau=tau)).aggregate
        want, clipped = oracle_norm_bounding(X, list(ref), tau)
        bounded = all(_norm(u) <= tau * (1 + 1e-12) + 1e-12 for u in clipped)
        return _close(out, want) and bounded

    def mk():
        X, _ = _instance(gen, n_lo=3)
        n = X.shape[0]
        m = int(gen.integers(0, n - 2))
        c = int(gen.integers(1, n + 1))
        out = agg.multi_krum(agg.AggregationInput(X, m), c)
        want, chosen = oracle_multi_krum(X, m, c)
        return out.selected_indices == chosen and _close(out.aggregate, want)

    def bu():
        X, _ = _instance(gen, n_lo=3)
        n = X.shape[0]
        m = int(gen.integers(0, (n - 3) // 4 + 1))
        out = agg.bulyan(agg.AggregationInput(X, m, bulyan_strict=True))
        want, chosen = oracle_bulyan(X, m)
        return out.selected_indices == chosen and _close(out.aggregate, want)

    def ft():
        X, ref = _instance(gen)
        g0 = gen.standard_normal(X.shape[1]) * float(np.abs(X).max())
        out = agg.fltrust(agg.AggregationInput(X, global_model=ref, server_root_update=g0)).aggregate
        want = oracle_fltrust(X, list(ref), g0)
        bounded = np.linalg.norm(out - ref) <= np.linalg.norm(g0) * (1 + 1e-9)
        return _close(out, want) and bool(bounded)

    def cc():
        X, ref = _instance(gen)
        tau = float(gen.uniform(0.05, 2.0)) * float(np.abs(X).max())
        iters = int(gen.integers(1, 6))
        out = agg.centered_clipping(agg.AggregationInput(X, cc_radius_tau=tau, cc_iters=iters, cc_center=ref)).aggregate
        want, steps = oracle_centered_clipping(X, ref, tau, iters)
        contracting = all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(steps, steps[1:]))
        return _close(out, want) and contracting

    def dn():
        while True:
            X, _ = _instance(gen, n_lo=3)
            n, r = X.shape
            m = int(gen.integers(1, max(2, n // 2)))
            want, survivors, gap = oracle_dnc(X, m)
            if gap >= 1.5:
                break
        out = agg.dnc(agg.AggregationInput(X, m, dnc_subsample_dim=r, dnc_power_steps=200,
                                           rng=RngStream(int(gen.integers(1 << 30)))))
        return out.selected_indices == survivors and _close(out.aggregate, want)

    suite("fed_avg", fa)
    suite("coord_median", med)
    suite("trimmed_mean", tm)
    suite("norm_bounding", nb)
    suite("multi_krum", mk)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        suite("bulyan", bu)
    suite("fltrust", ft)
    suite("centered_clipping", cc)
    suite("dnc", dn)
    return results


def check_ode(tol: float = 1e-3) -> list[tuple[str, bool, str]]:
    worst = max(rms_tracking_error(k, C, e0, dt=0.01, horizon=10.0) for k, C, e0 in ODE_GRID)
    return [("ode_toy", worst <= tol, f"worst RMS tracking error {worst:.3e} over {len(ODE_GRID)} settings")]


def gradient_check(n_nets: int = 100, seed: int = 0, h: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences over
    random small networks (at most 200 parameters)."""
    gen = as_generator(RngStream(seed, (tags.GRADCHECK,)))
    worst = 0.0
    for _ in range(n_nets):
        while True:
            d_in = int(gen.integers(1, 9))
            hidden = [int(x) for x in gen.integers(1, 9, size=int(gen.integers(0, 3)))]
            k = int(gen.integers(2, 6))
            dims = (d_in, *hidden, k)
            model = MlpModel.uniform(dims, gen, 1.0)
            if model.r <= 200:
                break
        n = int(gen.integers(1, 9))
        x = gen.standard_normal((n, d_in))
        y = gen.integers(0, k, size=n)
        _, g = loss_grad(model, x, y)
        fd = np.empty_like(g)
        p = model.params
        for i in range(p.size):
            old = p[i]
            p[i] = old + h
            lp, _ = loss_grad(model, x, y)
            p[i] = old - h
            lm, _ = loss_grad(model, x, y)
            p[i] = old
            fd[i] = (lp - lm) / (2 * h)
        rel = np.abs(g - fd) / np.maximum(np.abs(g) + np.abs(fd), 1e-7)
        worst = max(worst, float(rel.max()))
    return worst


def run_all(instances: int = 200, seed: int = 0) -> list[tuple[str, bool, str]]:
    return check_aggregators(instances, seed) + check_ode()
