"""Randomised checks of the Shapley axioms on scripted utility games.

A scripted game is a (2**n, C) table: row ``mask`` is the per-class utility
of the coalition whose members are the set bits of ``mask``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .shapley import exact_shapley_from_utility


def random_game(n_players: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((1 << n_players, n_classes))


def table_utility(table: np.ndarray):
    def utility(subset):
        mask = 0
        for i in subset:
            mask |= 1 << i
        return table[mask]

    return utility


def shapley_of_table(table: np.ndarray, normalize: bool = True) -> np.ndarray:
    n = int(table.shape[0]).bit_length() - 1
    phi, _ = exact_shapley_from_utility(n, table_utility(table), normalize)
    return phi


def permutation_shapley(table: np.ndarray) -> np.ndarray:
    """Average marginal gain over all n! orderings (brute force)."""
    n = int(table.shape[0]).bit_length() - 1
    phi = np.zeros((n, table.shape[1]))
    count = 0
    for order in itertools.permutations(range(n)):
        mask = 0
        for p in order:
            phi[p] += table[mask | 1 << p] - table[mask]
            mask |= 1 << p
        count += 1
    return phi / count


def symmetrize(table: np.ndarray, a: int, b: int) -> np.ndarray:
    """Make players ``a`` and ``b`` interchangeable: V(S) = V(swap(S))."""
    out = table.copy()
    for mask in range(table.shape[0]):
        has_a, has_b = mask >> a & 1, mask >> b & 1
        if has_a != has_b:
            swapped = mask ^ (1 << a) ^ (1 << b)
            if mask < swapped:
                out[swapped] = out[mask]
    return out


def add_null_player(table: np.ndarray) -> np.ndarray:
    """Append a player (highest index) whose presence never changes utility."""
    return np.concatenate([table, table])


@dataclass
class AxiomReport:
    trials: int = 0
    worst: dict[str, float] = field(
        default_factory=lambda: {k: 0.0 for k in ("efficiency", "symmetry", "null", "additivity", "oracle")}
    )

    def update(self, name: str, err: float) -> None:
        self.worst[name] = max(self.worst[name], float(err))

    def passed(self, tol: float = 1e-9, oracle_tol: float = 1e-12) -> dict[str, bool]:
        return {
            k: v <= (oracle_tol if k == "oracle" else tol) for k, v in self.worst.items()
        }


def check_game(table: np.ndarray, other: np.ndarray, rng: np.random.Generator, report: AxiomReport) -> None:
    n = int(table.shape[0]).bit_length() - 1
    phi = shapley_of_table(table)
    full = table.shape[0] - 1
    report.update("efficiency", np.abs(phi.sum(axis=0) - (table[full] - table[0])).max())
    report.update("oracle", np.abs(phi - permutation_shapley(table)).max())
    report.update(
        "additivity",
        np.abs(shapley_of_table(table + other) - (phi + shapley_of_table(other))).max(),
    )
    if n >= 2:
        a, b = rng.choice(n, size=2, replace=False)
        sym = shapley_of_table(symmetrize(table, a, b))
        report.update("symmetry", np.abs(sym[a] - sym[b]).max())
    null_phi = shapley_of_table(add_null_player(table))
    report.update("null", np.abs(null_phi[n]).max())


def run_axiom_suite(
    max_players: int, trials: int, seed: int, n_classes: int = 3, min_players: int = 1
) -> AxiomReport:
    rng = np.random.default_rng(seed)
    report = AxiomReport()
    lo = max(1, min(min_players, max_players))
    for _ in range(trials):
        n = int(rng.integers(lo, max_players + 1))
        check_game(random_game(n, n_classes, rng), random_game(n, n_classes, rng), rng, report)
        report.trials += 1
    return report
