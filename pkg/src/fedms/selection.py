"""Client selection: contribution-score sampling and the baseline selectors."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .nn import cosine_similarity


@dataclass
class ContributionState:
    accumulated: np.ndarray  # clients x classes, decayed class-wise values
    scores: np.ndarray  # per-client contribution score
    beta: np.ndarray  # class difficulty
    alpha: float = 0.6
    temperature: float = 1.0
    scalar: np.ndarray | None = None  # decayed class-summed values (S-FedAvg, GreedyFed)

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.scalar is None:
            self.scalar = np.zeros(self.accumulated.shape[0])

    @classmethod
    def initial(cls, num_clients: int, num_classes: int, alpha: float = 0.6, temperature: float = 1.0):
        return cls(
            accumulated=np.zeros((num_clients, num_classes)),
            scores=np.zeros(num_clients),
            beta=np.full(num_classes, 1.0 / num_classes),
            alpha=alpha,
            temperature=temperature,
        )

    @property
    def num_clients(self) -> int:
        return self.accumulated.shape[0]


@dataclass
class RewardsLedger:
    num_clients: int
    per_round: dict[int, dict[int, float]] = field(default_factory=dict)
    cumulative: np.ndarray = None

    def __post_init__(self):
        if self.cumulative is None:
            self.cumulative = np.zeros(self.num_clients)

    def record(self, round_index: int, rewards: dict[int, float]) -> None:
        if round_index in self.per_round:
            raise ValueError(f"round {round_index} already recorded")
        self.per_round[round_index] = dict(rewards)
        for i in sorted(rewards):
            self.cumulative[i] += rewards[i]

    def replay(self) -> np.ndarray:
        total = np.zeros(self.num_clients)
        for t in sorted(self.per_round):
            for i in sorted(self.per_round[t]):
                total[i] += self.per_round[t][i]
        return total


# --- contribution scores ----------------------------------------------------


def _check_ids(ids: Sequence[int], num_clients: int) -> list[int]:
    ids = [int(i) for i in ids]
    bad = [i for i in ids if not 0 <= i < num_clients]
    if bad:
        raise IndexError(f"client id(s) {bad} out of range for {num_clients} clients")
    return ids


def accumulate_scores(
    state: ContributionState, phi_round: np.ndarray, selected_ids: Sequence[int], alpha: float | None = None
) -> ContributionState:
    """Exponentially blend this round's class-wise values into the selected rows."""
    alpha = state.alpha if alpha is None else alpha
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    ids = _check_ids(selected_ids, state.num_clients)
    phi = np.asarray(phi_round, dtype=np.float64)
    if phi.shape != (len(ids), state.accumulated.shape[1]):
        raise ValueError("phi rows must match selected ids one to one")
    acc = state.accumulated.copy()
    scalar = state.scalar.copy()
    acc[ids] = alpha * acc[ids] + (1 - alpha) * phi
    scalar[ids] = alpha * scalar[ids] + (1 - alpha) * phi.sum(axis=1)
    return replace(state, accumulated=acc, scalar=scalar)


def contribution_scores(state: ContributionState) -> np.ndarray:
    if abs(state.beta.sum() - 1.0) > 1e-9:
        raise ValueError("beta is not normalised")
    return state.accumulated @ state.beta


def selection_probabilities(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    e = np.exp(s - s.max())
    return e / e.sum()


def shapley_rewards(phi_round: np.ndarray, beta: np.ndarray, selected_ids: Sequence[int]) -> dict[int, float]:
    beta = np.asarray(beta, dtype=np.float64)
    if abs(beta.sum() - 1.0) > 1e-9:
        raise ValueError("beta is not normalised")
    r = np.asarray(phi_round, dtype=np.float64) @ beta
    return {int(i): float(r[k]) for k, i in enumerate(selected_ids)}


def init_scores_cosine(client_models, aggregate_model) -> np.ndarray:
    """1 - cos(w_i, w_agg): updates pointing away from the aggregate score higher."""
    return np.array([1.0 - cosine_similarity(m, aggregate_model) for m in client_models])


# --- samplers ---------------------------------------------------------------


def sample_cohort(probs: np.ndarray, m: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw ``m`` distinct ids one at a time, renormalising after each draw."""
    p = np.asarray(probs, dtype=np.float64).copy()
    if (p < 0).any():
        raise ValueError("negative probability")
    if m > int((p > 0).sum()):
        raise ValueError(f"cannot draw {m} clients: only {(p > 0).sum()} have positive probability")
    chosen = []
    for _ in range(m):
        cdf = np.cumsum(p / p.sum())
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, len(p) - 1)
        while p[i] == 0:  # guards float edge at the top of the cdf
            i -= 1
        chosen.append(i)
        p[i] = 0.0
    return tuple(sorted(chosen))


def select_random(num_clients: int, m: int, rng: np.random.Generator) -> tuple[int, ...]:
    if m > num_clients:
        raise ValueError(f"cohort size {m} exceeds {num_clients} clients")
    return tuple(sorted(int(i) for i in rng.choice(num_clients, size=m, replace=False)))


def _top_m(values: np.ndarray, candidates: Sequence[int], m: int) -> tuple[int, ...]:
    ranked = sorted(candidates, key=lambda i: (-values[i], i))
    return tuple(sorted(ranked[:m]))


def select_poc(local_losses, candidate_size: int, m: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Power-of-choice: sample ``d`` candidates, keep the ``m`` with highest loss."""
    losses = np.asarray(local_losses, dtype=np.float64)
    if m > candidate_size:
        raise ValueError(f"cohort size {m} exceeds candidate set size {candidate_size}")
    candidates = select_random(len(losses), candidate_size, rng)
    return _top_m(losses, candidates, m)


def select_emd(
    client_sizes,
    emd_values,
    round_index: int,
    weight: float,
    decay: float,
    m: int,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Size-proportional sampling plus an EMD bonus that fades as decay**t."""
    if weight < 0 or not 0 < decay <= 1:
        raise ValueError("need weight >= 0 and decay in (0, 1]")
    sizes = np.asarray(client_sizes, dtype=np.float64)
    w = sizes / sizes.sum() + weight * decay**round_index * np.asarray(emd_values, dtype=np.float64)
    return sample_cohort(w / w.sum(), m, rng)


def select_sfedavg(scalar_sv, m: int, epsilon: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Softmax over accumulated values, with an epsilon-probability uniform round."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    sv = np.asarray(scalar_sv, dtype=np.float64)
    if rng.random() < epsilon:
        return select_random(len(sv), m, rng)
    return sample_cohort(selection_probabilities(sv), m, rng)


def select_greedy(scalar_sv, m: int) -> tuple[int, ...]:
    sv = np.asarray(scalar_sv, dtype=np.float64)
    if m > len(sv):
        raise ValueError(f"cohort size {m} exceeds {len(sv)} clients")
    return _top_m(sv, range(len(sv)), m)
