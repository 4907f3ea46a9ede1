"""Class-wise Shapley valuation of client updates.

Utilities here are vectors (one accuracy per class) rather than scalars, so
every engine returns a clients x classes matrix.  The generic ``*_from_utility``
engines work on any callable ``utility(subset) -> vector``; the model-based
wrappers build that callable from reconstructed sub-models scored on the
server's validation set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .nn import ModelParams, evaluate

MAX_EXACT_PLAYERS = 16

Subset = tuple[int, ...]
Utility = Callable[[Subset], np.ndarray]


@dataclass(frozen=True)
class GtgConfig:
    eps_between: float = 1e-3
    eps_within: float = 1e-3
    max_permutations: int = 50
    convergence_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_permutations < 1:
            raise ValueError("max_permutations must be >= 1")
        if self.eps_between < 0 or self.eps_within < 0:
            raise ValueError("truncation thresholds must be >= 0")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")


@dataclass
class ClassShapleyMatrix:
    values: np.ndarray
    client_ids: tuple[int, ...]
    round_index: int = 0

    def row(self, client_id: int) -> np.ndarray:
        return self.values[self.client_ids.index(client_id)]


class SubsetUtilityCache:
    """Per-class accuracy of every evaluated sub-model, keyed by sorted client ids."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self._values: dict[Subset, np.ndarray] = {}

    def __contains__(self, subset) -> bool:
        return _key(subset) in self._values

    def __getitem__(self, subset) -> np.ndarray:
        return self._values[_key(subset)]

    def __setitem__(self, subset, value) -> None:
        v = np.asarray(value, dtype=np.float64)
        if v.shape != (self.num_classes,):
            raise ValueError(f"utility vector must have length {self.num_classes}")
        self._values[_key(subset)] = v

    def __len__(self) -> int:
        return len(self._values)

    def items(self):
        return self._values.items()

    def subsets(self) -> list[Subset]:
        return list(self._values)


def _key(subset: Iterable[int]) -> Subset:
    return tuple(sorted(int(i) for i in subset))


# --- utilities --------------------------------------------------------------


def class_accuracy(confusion: np.ndarray) -> np.ndarray:
    cm = np.asarray(confusion)
    totals = cm.sum(axis=1)
    if (totals < 1).any():
        missing = np.flatnonzero(totals < 1).tolist()
        raise ValueError(f"no validation samples for class(es) {missing}")
    return np.diag(cm) / totals


def model_average(
    client_models: Sequence[ModelParams],
    client_sizes: Sequence[float],
    base_model: ModelParams,
    subset: Iterable[int],
) -> ModelParams:
    """Size-weighted mean of the models at positions ``subset``; ``base_model`` if empty."""
    members = sorted(subset)
    if not members:
        return base_model
    shape = client_models[members[0]].layer_sizes
    if any(client_models[i].layer_sizes != shape for i in members):
        raise ValueError("client models have mismatched shapes")
    sizes = np.array([client_sizes[i] for i in members], dtype=np.float64)
    if (sizes <= 0).any():
        raise ValueError("client sizes must be positive")
    coef = sizes / sizes.sum()
    stacked = np.stack([client_models[i].weights for i in members])
    return ModelParams(shape, coef @ stacked)


def model_utility(
    client_models: Sequence[ModelParams],
    client_sizes: Sequence[float],
    base_model: ModelParams,
    val_set,
) -> Utility:
    """Memoised ``positions -> class accuracy of the averaged sub-model``."""
    memo: dict[Subset, np.ndarray] = {}

    def utility(subset: Subset) -> np.ndarray:
        key = _key(subset)
        if key not in memo:
            model = model_average(client_models, client_sizes, base_model, key)
            memo[key] = class_accuracy(evaluate(model, val_set))
        return memo[key]

    utility.memo = memo
    return utility


# --- exact enumeration ------------------------------------------------------


def _members(mask: int, n: int) -> Subset:
    return tuple(i for i in range(n) if mask >> i & 1)


def exact_shapley_from_utility(
    n_players: int, utility: Utility, normalize: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``utility`` on all 2**n subsets and combine the marginal gains.

    Returns ``(phi, table)`` where ``table[mask]`` is the utility of the subset
    whose members are the set bits of ``mask``.  With ``normalize=False`` the
    1/n factor is dropped, so the values sum to n * (V(all) - V(empty)).
    """
    if n_players < 1:
        raise ValueError("empty cohort")
    if n_players > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact enumeration refused for {n_players} > {MAX_EXACT_PLAYERS} players")
    rows = [np.asarray(utility(_members(m, n_players)), dtype=np.float64) for m in range(1 << n_players)]
    table = np.ascontiguousarray(np.stack(rows))
    return kernels.shapley_from_table(table, n_players, bool(normalize)), table


def exact_class_shapley(
    client_models: Sequence[ModelParams],
    client_sizes: Sequence[float],
    base_model: ModelParams,
    val_set,
    normalize: bool = True,
    client_ids: Sequence[int] | None = None,
    round_index: int = 0,
) -> tuple[ClassShapleyMatrix, SubsetUtilityCache]:
    n = len(client_models)
    ids = tuple(range(n)) if client_ids is None else tuple(client_ids)
    utility = model_utility(client_models, client_sizes, base_model, val_set)
    phi, table = exact_shapley_from_utility(n, utility, normalize)
    return ClassShapleyMatrix(phi, ids, round_index), _table_cache(table, ids)


def _table_cache(table: np.ndarray, ids: Sequence[int]) -> SubsetUtilityCache:
    n = len(ids)
    cache = SubsetUtilityCache(table.shape[1])
    for mask in range(table.shape[0]):
        cache[[ids[i] for i in _members(mask, n)]] = table[mask]
    return cache


# --- best set and class difficulty -----------------------------------------


def best_subset(cache: SubsetUtilityCache) -> tuple[Subset, np.ndarray]:
    """Nonempty cached subset with the largest summed class accuracy.

    Ties go to the smaller subset, then to the lexicographically smaller id list.
    """
    candidates = [(s, v) for s, v in cache.items() if s]
    if not candidates:
        raise ValueError("cache holds no nonempty subset")
    best, v = min(candidates, key=lambda sv: (-float(sv[1].sum()), len(sv[0]), sv[0]))
    return best, v


def class_difficulty(class_acc: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax of (1 - accuracy) / T: poorly learned classes get more weight."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    v = np.asarray(class_acc, dtype=np.float64)
    # (1 - v)/T minus its max; any constant offset in v drops out before exp
    e = np.exp((v.min() - v) / temperature)
    return e / e.sum()


# --- GTG (Monte Carlo with truncation) --------------------------------------


@dataclass
class GtgResult:
    phi: np.ndarray
    rounds: int
    evaluations: int
    truncated: bool
    evaluated: dict[Subset, np.ndarray]


def gtg_shapley_from_utility(
    n_players: int, utility: Utility, config: GtgConfig, normalize: bool = True
) -> GtgResult:
    """Permutation-sampling Shapley estimate with between- and within-round truncation.

    Each Monte Carlo round draws n permutations, the k-th one starting with
    player k.  A player's estimate is the running mean of its per-round mean
    marginal gain.  ``evaluated`` maps every subset whose utility was actually
    computed (positions, sorted) to its utility vector.
    """
    if n_players < 1:
        raise ValueError("empty cohort")
    evaluated: dict[Subset, np.ndarray] = {}

    def value(subset: Subset) -> np.ndarray:
        key = _key(subset)
        if key not in evaluated:
            evaluated[key] = np.asarray(utility(key), dtype=np.float64)
        return evaluated[key]

    full = tuple(range(n_players))
    v0 = value(())
    vN = value(full)
    phi = np.zeros((n_players, v0.shape[0]))
    if np.abs(vN - v0).sum() <= config.eps_between:
        return GtgResult(phi, 0, len(evaluated), True, evaluated)

    rng = np.random.default_rng(config.seed)
    r = 0
    while True:
        r += 1
        gains = np.zeros_like(phi)
        for first in range(n_players):
            rest = rng.permutation([p for p in full if p != first])
            perm = [first, *rest.tolist()]
            prev = v0
            for j in range(1, n_players + 1):
                if np.abs(vN - prev).sum() >= config.eps_within:
                    cur = value(tuple(perm[:j]))
                else:
                    cur = prev
                gains[perm[j - 1]] += cur - prev
                prev = cur
        updated = ((r - 1) * phi + gains / n_players) / r
        change = np.abs(updated - phi).max()
        phi = updated
        if change < config.convergence_tol or r >= config.max_permutations:
            break
    if not normalize:
        phi = phi * n_players
    return GtgResult(phi, r, len(evaluated), False, evaluated)


def gtg_class_shapley(
    client_models: Sequence[ModelParams],
    client_sizes: Sequence[float],
    base_model: ModelParams,
    val_set,
    gtg_config: GtgConfig,
    temperature: float = 1.0,
    normalize: bool = True,
    client_ids: Sequence[int] | None = None,
    round_index: int = 0,
) -> tuple[ClassShapleyMatrix, np.ndarray, Subset]:
    n = len(client_models)
    if n == 0:
        raise ValueError("empty cohort")
    ids = tuple(range(n)) if client_ids is None else tuple(client_ids)
    utility = model_utility(client_models, client_sizes, base_model, val_set)
    res = gtg_shapley_from_utility(n, utility, gtg_config, normalize)
    matrix = ClassShapleyMatrix(res.phi, ids, round_index)
    if res.truncated:
        best, v_hat = tuple(sorted(ids)), res.evaluated[tuple(range(n))]
    else:
        cache = SubsetUtilityCache(res.phi.shape[1])
        for subset, v in res.evaluated.items():
            cache[[ids[i] for i in subset]] = v
        best, v_hat = best_subset(cache)
    return matrix, class_difficulty(v_hat, temperature), best


# --- TMR (decayed, round-skipping exact) ------------------------------------


def tmr_class_shapley(
    client_models: Sequence[ModelParams],
    client_sizes: Sequence[float],
    base_model: ModelParams,
    val_set,
    round_decay: float,
    round_index: int,
    skip_threshold: float,
    normalize: bool = True,
    client_ids: Sequence[int] | None = None,
    return_cache: bool = False,
):
    """Exact class-wise values scaled by ``round_decay ** round_index``.

    Rounds whose total gain sum_c |V(all) - V(empty)| does not exceed
    ``skip_threshold`` are skipped: all-zero values and only the empty and
    full subsets are evaluated.
    """
    if not 0 < round_decay <= 1:
        raise ValueError("round_decay must be in (0, 1]")
    n = len(client_models)
    if n > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact enumeration refused for {n} > {MAX_EXACT_PLAYERS} players")
    ids = tuple(range(n)) if client_ids is None else tuple(client_ids)
    utility = model_utility(client_models, client_sizes, base_model, val_set)
    v0, vN = utility(()), utility(tuple(range(n)))
    if np.abs(vN - v0).sum() <= skip_threshold:
        matrix = ClassShapleyMatrix(np.zeros((n, v0.shape[0])), ids, round_index)
        cache = SubsetUtilityCache(v0.shape[0])
        cache[()] = v0
        cache[ids] = vN
    else:
        phi, table = exact_shapley_from_utility(n, utility, normalize)
        matrix = ClassShapleyMatrix(phi * round_decay**round_index, ids, round_index)
        cache = _table_cache(table, ids)
    return (matrix, cache) if return_cache else matrix

