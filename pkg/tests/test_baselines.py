import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsa.baselines import (_as_updates, _direction, lie_attack, lie_z, min_max_attack, min_max_feasible,
                             min_sum_attack, min_sum_feasible)
from fedsa.errors import InvalidInput


def test_lie_zero_spread_returns_mean():
    P = np.tile([0.4, -1.0], (3, 1))
    assert np.array_equal(lie_attack(P, 50, 5), P.mean(axis=0))


def test_lie_arithmetic():
    # proxies [0.5], [1.5]: mean 1, population std 0.5
    out = lie_attack(np.array([[0.5], [1.5]]), 50, 5, z=0.7)
    assert np.isclose(out[0], 0.65)


def test_lie_z_desk_config():
    # s = 25 + 1 - 5 = 21 -> Phi^-1(29/50)
    assert np.isclose(lie_z(50, 5), 0.20189, atol=1e-4)


@pytest.mark.parametrize("n,m", [(10, 1), (20, 4), (50, 5), (50, 24), (100, 10)])
def test_lie_within_five_sigma(n, m, gen):
    P = gen.standard_normal((6, 4))
    mu, sd = P.mean(0), P.std(0)
    out = lie_attack(P, n, m)
    assert np.all(out <= mu + 1e-12) and np.all(out >= mu - 5 * sd - 1e-12)


def test_lie_rejects_majority():
    with pytest.raises(InvalidInput):
        lie_attack(np.zeros((2, 1)), 10, 5)


def test_lie_relative_to_reference():
    ref = np.array([10.0])
    out = lie_attack(np.array([[10.5], [11.5]]), 50, 5, reference=ref, z=0.7)
    assert np.isclose(out[0], 10.65)


@pytest.mark.parametrize("attack", [min_max_attack, min_sum_attack])
def test_identical_proxies_return_mean(attack):
    P = np.tile([1.0, 2.0], (4, 1))
    out, gamma = attack(P, return_gamma=True)
    assert gamma == 0.0 and np.array_equal(out, P.mean(axis=0))


def test_min_max_two_points():
    # mean 1, unit-mean direction -1, diameter 2: cand = 1 - g must satisfy |cand - 2| <= 2
    out, gamma = min_max_attack(np.array([[0.0], [2.0]]), return_gamma=True)
    assert np.isclose(gamma, 1.0, atol=1e-12)
    assert np.isclose(out[0], 0.0, atol=1e-12)


def test_min_sum_two_points():
    # sum_i (cand - x_i)^2 <= 4 with cand = 1 - g -> (1-g)^2 + (1+g)^2 <= 4 -> g <= 1
    out, gamma = min_sum_attack(np.array([[0.0], [2.0]]), return_gamma=True)
    assert np.isclose(gamma, 1.0, atol=1e-12)


@pytest.mark.parametrize("attack,feasible", [(min_max_attack, min_max_feasible),
                                             (min_sum_attack, min_sum_feasible)])
@pytest.mark.parametrize("mode", ["unit-mean", "std", "sign"])
@given(seed=st.integers(0, 10**6))
def test_binary_search_contract(attack, feasible, mode, seed):
    gen = np.random.default_rng(seed)
    P = gen.standard_normal((5, 4)) + gen.standard_normal(4)
    out, gamma = attack(P, mode, return_gamma=True)
    U, _ = _as_updates(P, None)
    p = _direction(U, mode)
    assert feasible(U, out)
    if gamma > 0:
        assert not feasible(U, U.mean(0) + 1.01 * gamma * p)


def test_unknown_direction():
    with pytest.raises(InvalidInput):
        min_max_attack(np.eye(2), "nope")


def test_needs_two_proxies():
    with pytest.raises(InvalidInput):
        min_sum_attack(np.ones((1, 3)))
