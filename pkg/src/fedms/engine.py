"""Round loop: select, train locally, value the cohort, update scores, aggregate."""
from __future__ import annotations

import gzip
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from . import selection as S
from .config import ExperimentConfig
from .nn import ModelParams, TrainConfig, evaluate, init_model, local_update, mean_loss
from .shapley import (
    GtgConfig,
    best_subset,
    class_accuracy,
    class_difficulty,
    exact_class_shapley,
    gtg_class_shapley,
    model_average,
    tmr_class_shapley,
)

log = logging.getLogger(__name__)

# stream tags for per-purpose seeding
_DATA, _SPLIT, _PARTITION, _INIT, _SELECT, _BATCH, _SHAPLEY = range(1, 8)


class RoundFailed(RuntimeError):
    def __init__(self, round_index: int, cause: BaseException):
        super().__init__(f"round {round_index} failed: {cause}")
        self.round_index = round_index


def stream_seed(master: int, tag: int, *path: int) -> int:
    return int(np.random.SeedSequence([master, tag, *path]).generate_state(1, np.uint64)[0])


def stream_rng(master: int, tag: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, tag, *path]))


@dataclass
class RoundRecord:
    round: int
    cohort: tuple[int, ...]
    best_set: tuple[int, ...]
    val_class_acc: np.ndarray
    test_acc: float
    beta: np.ndarray
    rewards: dict[int, float]
    phi: np.ndarray
    wall_ms: float = 0.0

    def same_as(self, other: "RoundRecord") -> bool:
        """Bitwise equality of everything except timing."""
        return (
            self.round == other.round
            and self.cohort == other.cohort
            and self.best_set == other.best_set
            and np.array_equal(self.val_class_acc, other.val_class_acc)
            and self.test_acc == other.test_acc
            and np.array_equal(self.beta, other.beta)
            and self.rewards == other.rewards
            and np.array_equal(self.phi, other.phi)
        )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: list[RoundRecord]
    initial_test_acc: float
    cumulative_rewards: np.ndarray
    mavericks: list[int]
    client_ids: list[int]  # original id of every simulated client
    num_classes: int
    final_model: ModelParams | None = None

    @property
    def num_clients(self) -> int:
        return len(self.client_ids)

    @property
    def final_test_acc(self) -> float:
        return self.records[-1].test_acc if self.records else self.initial_test_acc

    @property
    def maverick_reward_ratio(self) -> float | None:
        mav = [i for i in range(self.num_clients) if i in self.mavericks]
        rest = [i for i in range(self.num_clients) if i not in self.mavericks]
        if not mav or not rest:
            return None
        denom = float(np.mean(self.cumulative_rewards[rest]))
        if denom == 0:
            return None
        return float(np.mean(self.cumulative_rewards[mav])) / denom

    def summary(self) -> dict:
        return {
            "strategy": self.config.strategy,
            "engine": self.config.engine,
            "num_rounds": len(self.records),
            "num_clients": self.num_clients,
            "client_ids": self.client_ids,
            "mavericks": self.mavericks,
            "initial_test_acc": self.initial_test_acc,
            "final_test_acc": self.final_test_acc,
            "cumulative_rewards": [float(r) for r in self.cumulative_rewards],
            "maverick_reward_ratio": self.maverick_reward_ratio,
        }


# --- data setup -------------------------------------------------------------


def _read_maybe_gz(path: Path) -> bytes:
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).is_file():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def load_mnist(directory) -> tuple[D.LabeledDataset, D.LabeledDataset]:
    d = Path(directory)
    out = []
    for split in ("train", "t10k"):
        images = D.parse_idx_images(_read_maybe_gz(_find(d, f"{split}-images-idx3-ubyte")))
        labels = D.parse_idx_labels(_read_maybe_gz(_find(d, f"{split}-labels-idx1-ubyte")))
        if images.shape[0] != labels.shape[0]:
            raise D.IdxCountMismatchError(f"{split}: {images.shape[0]} images, {labels.shape[0]} labels")
        out.append(D.LabeledDataset(images, labels, 10))
    return out[0], out[1]


@dataclass
class Environment:
    """Everything that stays fixed across rounds."""

    train: D.LabeledDataset
    val: D.LabeledDataset
    test: D.LabeledDataset
    clients: list[D.LabeledDataset]
    client_ids: list[int]
    mavericks: list[int]  # positions within ``clients``
    layer_sizes: tuple[int, ...]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.clients], dtype=np.float64)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]


def build_environment(cfg: ExperimentConfig, drop_mavericks: bool = False) -> Environment:
    if cfg.dataset == "mnist":
        train, test_full = load_mnist(cfg.data_dir)
    else:
        blobs = D.synth_blobs(
            cfg.num_classes, cfg.per_class + cfg.test_per_class, cfg.dim, cfg.spread,
            stream_seed(cfg.seed, _DATA),
        )
        frac = cfg.test_per_class / (cfg.per_class + cfg.test_per_class)
        test_full, train = D.stratified_split(blobs, frac, stream_seed(cfg.seed, _DATA, 1))
    val, test = D.stratified_split(test_full, cfg.val_fraction, stream_seed(cfg.seed, _SPLIT))
    part = D.maverick_partition(
        train, cfg.total_clients, cfg.maverick_spec, stream_seed(cfg.seed, _PARTITION)
    )
    mav = part.mavericks
    keep = [i for i in range(cfg.total_clients) if not (drop_mavericks and i in mav)]
    clients = [part.client_data(train, i) for i in keep]
    empty = [keep[k] for k, c in enumerate(clients) if len(c) == 0]
    if empty:
        raise ValueError(f"client(s) {empty} received no data; use fewer clients")
    return Environment(
        train=train,
        val=val,
        test=test,
        clients=clients,
        client_ids=keep,
        mavericks=[k for k, i in enumerate(keep) if i in mav],
        layer_sizes=(train.dim, *cfg.hidden_sizes, train.num_classes),
    )


# --- the round --------------------------------------------------------------


def aggregate(client_models, client_sizes, subset) -> ModelParams:
    if not list(subset):
        raise ValueError("cannot aggregate an empty subset")
    return model_average(client_models, client_sizes, client_models[0], subset)


class Simulation:
    """Mutable round-loop state for one experiment run."""

    def __init__(self, cfg: ExperimentConfig, env: Environment):
        if cfg.cohort_size > len(env.clients):
            raise ValueError(
                f"cohort_size {cfg.cohort_size} exceeds the {len(env.clients)} available clients"
            )
        self.cfg = cfg
        self.env = env
        n = len(env.clients)
        self.state = S.ContributionState.initial(n, env.num_classes, cfg.alpha, cfg.temperature)
        self.ledger = S.RewardsLedger(n)
        self.select_rng = stream_rng(cfg.seed, _SELECT)
        self.pinned_scores: np.ndarray | None = None
        self.visited = np.zeros(n, dtype=bool)
        self._emd = None

    # selection ---------------------------------------------------------

    def _emd_values(self) -> np.ndarray:
        if self._emd is None:
            counts = np.stack([c.class_counts() for c in self.env.clients]).astype(np.float64)
            glob = counts.sum(axis=0) / counts.sum()
            self._emd = np.array([D.emd_discrete(row / row.sum(), glob) for row in counts])
        return self._emd

    def select(self, global_model: ModelParams, t: int) -> tuple[int, ...]:
        cfg, rng, n, m = self.cfg, self.select_rng, len(self.env.clients), self.cfg.cohort_size
        if cfg.strategy == "fedms":
            if self.pinned_scores is not None:
                scores, self.pinned_scores = self.pinned_scores, None
            else:
                scores = S.contribution_scores(self.state)
            self.state.scores = scores
            return S.sample_cohort(S.selection_probabilities(scores), m, rng)
        if cfg.strategy in ("fedavg", "fedprox"):
            return S.select_random(n, m, rng)
        if cfg.strategy == "sfedavg":
            return S.select_sfedavg(self.state.scalar, m, cfg.sfedavg_epsilon, rng)
        if cfg.strategy == "greedyfed":
            fresh = np.flatnonzero(~self.visited)
            if cfg.greedy_explore and fresh.size:
                picked = fresh[:m].tolist()
                if len(picked) < m:
                    sv = np.where(self.visited, self.state.scalar, -np.inf)
                    sv[picked] = np.inf
                    return S.select_greedy(sv, m)
                return tuple(picked)
            return S.select_greedy(self.state.scalar, m)
        if cfg.strategy == "poc":
            losses = [mean_loss(global_model, c) for c in self.env.clients]
            d = cfg.poc_candidates or min(n, max(2 * m, n // 2))
            return S.select_poc(losses, d, m, rng)
        if cfg.strategy == "fedemd":
            return S.select_emd(
                self.env.sizes, self._emd_values(), t, cfg.emd_weight, cfg.emd_decay, m, rng
            )
        raise ValueError(f"unknown strategy {cfg.strategy!r}")

    # valuation ---------------------------------------------------------

    def value(self, models, sizes, global_model, cohort, t):
        cfg, val = self.cfg, self.env.val
        if cfg.engine == "gtg":
            gtg = GtgConfig(
                cfg.eps_between, cfg.eps_within, cfg.max_permutations, cfg.convergence_tol,
                stream_seed(cfg.seed, _SHAPLEY, t),
            )
            matrix, beta, best = gtg_class_shapley(
                models, sizes, global_model, val, gtg, cfg.temperature, cfg.normalize_sv, cohort, t
            )
            return matrix.values, beta, best
        if cfg.engine == "exact":
            matrix, cache = exact_class_shapley(models, sizes, global_model, val, cfg.normalize_sv, cohort, t)
        else:
            matrix, cache = tmr_class_shapley(
                models, sizes, global_model, val, cfg.tmr_decay, t, cfg.tmr_skip_threshold,
                cfg.normalize_sv, cohort, return_cache=True,
            )
        best, v_hat = best_subset(cache)
        return matrix.values, class_difficulty(v_hat, cfg.temperature), best

    # one round ---------------------------------------------------------

    def run_round(self, global_model: ModelParams, t: int) -> tuple[ModelParams, RoundRecord]:
        cfg, env = self.cfg, self.env
        start = time.perf_counter()
        cohort = self.select(global_model, t)
        self.visited[list(cohort)] = True

        prox = cfg.strategy == "fedprox"
        models = []
        for i in cohort:
            tc = TrainConfig(
                cfg.epochs, cfg.batch_size, cfg.learning_rate,
                cfg.prox_mu if prox else 0.0, stream_seed(cfg.seed, _BATCH, t, env.client_ids[i]),
            )
            models.append(local_update(global_model, env.clients[i], tc, global_model if prox else None))
        sizes = env.sizes[list(cohort)]

        phi, beta, best = self.value(models, sizes, global_model, cohort, t)
        self.state = S.accumulate_scores(self.state, phi, cohort)
        self.state.beta = beta
        rewards = S.shapley_rewards(phi, beta, cohort)
        self.ledger.record(t, rewards)

        agg_set = best if (cfg.strategy == "fedms" and cfg.aggregate_best_subset) else cohort
        pos = [cohort.index(i) for i in agg_set]
        new_model = aggregate(models, sizes, pos)

        if cfg.strategy == "fedms" and t == 0:
            full = aggregate(models, sizes, range(len(cohort)))
            pinned = np.zeros(len(env.clients))
            pinned[list(cohort)] = S.init_scores_cosine(models, full)
            self.pinned_scores = pinned

        val_acc = class_accuracy(evaluate(new_model, env.val))
        test_cm = evaluate(new_model, env.test)
        record = RoundRecord(
            round=t,
            cohort=tuple(cohort),
            best_set=tuple(agg_set),
            val_class_acc=val_acc,
            test_acc=float(np.trace(test_cm) / test_cm.sum()),
            beta=beta,
            rewards=rewards,
            phi=phi,
            wall_ms=(time.perf_counter() - start) * 1e3,
        )
        return new_model, record


def run_round(sim: Simulation, global_model: ModelParams, t: int):
    try:
        return sim.run_round(global_model, t)
    except Exception as e:
        raise RoundFailed(t, e) from e


def run_experiment(cfg: ExperimentConfig, drop_mavericks: bool = False, progress=None) -> ExperimentReport:
    cfg.validate()
    env = build_environment(cfg, drop_mavericks)
    sim = Simulation(cfg, env)
    model = init_model(env.layer_sizes, stream_seed(cfg.seed, _INIT))
    cm = evaluate(model, env.test)
    initial = float(np.trace(cm) / cm.sum())
    records = []
    for t in range(cfg.num_rounds):
        model, rec = run_round(sim, model, t)
        records.append(rec)
        log.debug("round %d cohort=%s best=%s test=%.4f", t, rec.cohort, rec.best_set, rec.test_acc)
        if progress is not None:
            progress(rec)
    return ExperimentReport(
        config=cfg,
        records=records,
        initial_test_acc=initial,
        cumulative_rewards=sim.ledger.cumulative.copy(),
        mavericks=env.mavericks,
        client_ids=env.client_ids,
        num_classes=env.num_classes,
        final_model=model,
    )


def ablation_without_mavericks(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    if not cfg.maverick_spec:
        raise ValueError("ablation needs at least one Maverick in the config")
    return run_experiment(cfg, drop_mavericks=True, progress=progress)
