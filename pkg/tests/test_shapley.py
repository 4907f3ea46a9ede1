import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedms.axioms import add_null_player, permutation_shapley, symmetrize, table_utility
from fedms.data import synth_blobs
from fedms.nn import TrainConfig, init_model, local_update
from fedms.shapley import (
    GtgConfig,
    SubsetUtilityCache,
    best_subset,
    class_accuracy,
    class_difficulty,
    exact_class_shapley,
    exact_shapley_from_utility,
    gtg_class_shapley,
    gtg_shapley_from_utility,
    model_average,
    tmr_class_shapley,
)


def _coalition_oracle(table):
    """Shapley by the coalition-weight formula, written out independently."""
    n = table.shape[0].bit_length() - 1
    phi = np.zeros((n, table.shape[1]))
    for i in range(n):
        others = [p for p in range(n) if p != i]
        for k in range(n):
            for s in itertools.combinations(others, k):
                mask = sum(1 << p for p in s)
                w = math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n)
                phi[i] += w * (table[mask | 1 << i] - table[mask])
    return phi


def test_class_accuracy_examples():
    assert class_accuracy(np.diag([5, 7, 9])).tolist() == [1, 1, 1]
    assert class_accuracy(np.array([[3, 1], [0, 4]])).tolist() == [0.75, 1.0]
    assert class_accuracy(np.array([[0, 4], [4, 0]])).tolist() == [0, 0]
    with pytest.raises(ValueError):
        class_accuracy(np.array([[1, 0], [0, 0]]))


def test_model_average_cases():
    a, b = init_model([3, 2], 0), init_model([3, 2], 1)
    base = init_model([3, 2], 2)
    assert model_average([a, b], [5, 9], base, [0]).weights.tolist() == a.weights.tolist()
    assert np.allclose(model_average([a, b], [4, 4], base, [0, 1]).weights, (a.weights + b.weights) / 2)
    assert model_average([a, b], [4, 4], base, []) is base


def test_three_player_oracle():
    table = np.random.default_rng(3).random((8, 4))
    phi, _ = exact_shapley_from_utility(3, table_utility(table), normalize=True)
    assert np.abs(phi - permutation_shapley(table)).max() <= 1e-12
    assert np.abs(phi - _coalition_oracle(table)).max() <= 1e-12


def test_unnormalized_scale():
    table = np.random.default_rng(1).random((16, 3))
    norm, _ = exact_shapley_from_utility(4, table_utility(table), True)
    lit, _ = exact_shapley_from_utility(4, table_utility(table), False)
    assert np.allclose(lit, 4 * norm, rtol=0, atol=1e-13)


def test_refuses_large_exact():
    with pytest.raises(ValueError):
        exact_shapley_from_utility(17, lambda s: np.zeros(1))


games = st.integers(1, 6).flatmap(
    lambda n: st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).random((1 << n, 3)))
)


@settings(max_examples=60, deadline=None)
@given(games, st.integers(0, 2**32 - 1))
def test_axioms_hold(table, seed):
    n = table.shape[0].bit_length() - 1
    phi, _ = exact_shapley_from_utility(n, table_utility(table))
    assert np.allclose(phi.sum(axis=0), table[-1] - table[0], rtol=0, atol=1e-9)
    other = np.random.default_rng(seed).random(table.shape)
    phi_o, _ = exact_shapley_from_utility(n, table_utility(other))
    phi_sum, _ = exact_shapley_from_utility(n, table_utility(table + other))
    assert np.allclose(phi_sum, phi + phi_o, rtol=0, atol=1e-9)
    null, _ = exact_shapley_from_utility(n + 1, table_utility(add_null_player(table)))
    assert np.abs(null[n]).max() <= 1e-9
    if n >= 2:
        sym, _ = exact_shapley_from_utility(n, table_utility(symmetrize(table, 0, n - 1)))
        assert np.allclose(sym[0], sym[n - 1], rtol=0, atol=1e-9)


@pytest.fixture(scope="module")
def cohort():
    d = synth_blobs(3, 30, 4, 1.0, seed=0)
    val = synth_blobs(3, 10, 4, 1.0, seed=0)
    base = init_model([4, 5, 3], 0)
    models = [
        local_update(base, d.subset(np.arange(k, len(d), 3)), TrainConfig(epochs=2, batch_size=8, seed=k))
        for k in range(3)
    ]
    return models, [30.0, 30.0, 30.0], base, val


def test_identical_models_get_identical_rows(cohort):
    models, sizes, base, val = cohort
    twins = [models[0], models[0], models[1]]
    m, _ = exact_class_shapley(twins, sizes, base, val)
    assert np.array_equal(m.values[0], m.values[1])


def test_exact_class_shapley_is_efficient(cohort):
    models, sizes, base, val = cohort
    m, cache = exact_class_shapley(models, sizes, base, val, client_ids=[4, 7, 9], round_index=3)
    assert m.client_ids == (4, 7, 9) and m.round_index == 3
    assert len(cache) == 8
    assert np.allclose(m.values.sum(axis=0), cache[(4, 7, 9)] - cache[()], atol=1e-12)


def _cache(entries, c=2):
    cache = SubsetUtilityCache(c)
    for s, v in entries.items():
        cache[s] = np.broadcast_to(np.asarray(v, dtype=float), (c,)).copy()
    return cache


def test_best_subset_worked_example():
    best, v = best_subset(_cache({(): 0.2, (0,): [0.9, 0.1], (1,): [0.4, 0.5], (0, 1): [0.6, 0.6]}))
    assert best == (0, 1) and v.tolist() == [0.6, 0.6]


def test_best_subset_full_dominates_and_ties():
    assert best_subset(_cache({(): 0, (0,): 0.1, (1,): 0.2, (0, 1): 0.9}))[0] == (0, 1)
    tied = _cache({(): 0, (0, 1): 0.5, (0, 1, 2): 0.5, (2,): 0.1})
    assert best_subset(tied)[0] == (0, 1)


def test_class_difficulty_examples():
    z = np.array([0.1, 0.5])
    oracle = np.exp(z) / np.exp(z).sum()
    beta = class_difficulty(np.array([0.9, 0.5]), 1.0)
    assert np.allclose(beta, oracle, rtol=0, atol=1e-15)
    assert beta == pytest.approx([0.4013, 0.5987], abs=1e-4)
    assert np.allclose(class_difficulty(np.full(4, 0.3)), 0.25)
    assert np.allclose(class_difficulty(np.array([0.0, 1.0, 0.4]), 1e6), 1 / 3, atol=1e-5)


def test_class_difficulty_shift_invariant():
    v = np.array([0.25, 0.5, 0.75, 0.125])
    assert np.array_equal(class_difficulty(v), class_difficulty(v + 0.125))


def test_gtg_infinite_between_threshold_truncates(cohort):
    models, sizes, base, val = cohort
    cfg = GtgConfig(eps_between=math.inf, seed=0)
    m, beta, best = gtg_class_shapley(models, sizes, base, val, cfg, client_ids=[2, 5, 8])
    assert np.all(m.values == 0)
    assert best == (2, 5, 8)
    assert beta.sum() == pytest.approx(1.0)


def test_gtg_matches_exact_on_scripted_game():
    table = np.random.default_rng(7).random((16, 3))
    exact, _ = exact_shapley_from_utility(4, table_utility(table))
    res = gtg_shapley_from_utility(4, table_utility(table), GtgConfig(0, 0, 500, 1e-12, seed=1))
    assert res.rounds == 500
    assert np.abs(res.phi - exact).max() <= 0.02


def test_gtg_is_deterministic(cohort):
    models, sizes, base, val = cohort
    cfg = GtgConfig(seed=42)
    a = gtg_class_shapley(models, sizes, base, val, cfg)
    b = gtg_class_shapley(models, sizes, base, val, cfg)
    assert np.array_equal(a[0].values, b[0].values)
    assert np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_gtg_config_validation():
    with pytest.raises(ValueError):
        GtgConfig(max_permutations=0)


def test_tmr_degenerate_is_exact(cohort):
    models, sizes, base, val = cohort
    exact, _ = exact_class_shapley(models, sizes, base, val)
    tmr = tmr_class_shapley(models, sizes, base, val, 1.0, 5, 0.0)
    assert np.array_equal(exact.values, tmr.values)


def test_tmr_infinite_skip_is_zero(cohort):
    models, sizes, base, val = cohort
    assert np.all(tmr_class_shapley(models, sizes, base, val, 0.9, 1, math.inf).values == 0)


def test_tmr_decay_scales_exact_values(cohort):
    models, sizes, base, val = cohort
    exact, _ = exact_class_shapley(models, sizes, base, val)
    tmr = tmr_class_shapley(models, sizes, base, val, 0.5, 2, 0.0)
    # scaling by a power of two is exact, so an exact entry 0.4 is stored as 0.1
    assert np.array_equal(tmr.values, exact.values * 0.25)


def test_single_player_gets_whole_gain():
    table = np.array([[0.2, 0.7], [0.9, 0.1]])
    phi, _ = exact_shapley_from_utility(1, table_utility(table))
    assert np.array_equal(phi[0], table[1] - table[0])


def test_maverick_reward_positive_when_it_always_helps_its_class():
    from fedms.selection import shapley_rewards

    rng = np.random.default_rng(0)
    table = rng.random((16, 3))
    # player 0 adds 0.3 to class 2 in every coalition and nothing elsewhere
    for mask in range(16):
        if mask & 1:
            table[mask] = table[mask ^ 1] + np.array([0.0, 0.0, 0.3])
    phi, _ = exact_shapley_from_utility(4, table_utility(table))
    beta = class_difficulty(rng.random(3))
    assert shapley_rewards(phi, beta, [0, 1, 2, 3])[0] > 0
