"""Experiment configuration: dataclass, INI parsing and emission.

The file format is plain INI with five sections.  Every key is optional;
unknown keys and sections are rejected so that typos fail loudly.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

STRATEGIES = ("fedms", "fedavg", "sfedavg", "fedemd", "fedprox", "greedyfed", "poc")
ENGINES = ("exact", "gtg", "tmr")
DATASETS = ("blobs", "mnist")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # [experiment]
    num_rounds: int = 100
    total_clients: int = 50
    cohort_size: int = 5
    seed: int = 0
    aggregate_best_subset: bool = True
    # [data]
    dataset: str = "blobs"
    data_dir: str = ""
    num_classes: int = 10
    per_class: int = 300
    test_per_class: int = 100
    dim: int = 16
    spread: float = 1.0
    mavericks: str = ""
    val_fraction: float = 0.1
    # [train]
    hidden: str = "128"
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 0.05
    prox_mu: float = 0.01
    # [shapley]
    engine: str = "gtg"
    unnormalized_sv: bool = False
    alpha: float = 0.6
    temperature: float = 1.0
    eps_between: float = 1e-3
    eps_within: float = 1e-3
    max_permutations: int = 50
    convergence_tol: float = 1e-3
    tmr_decay: float = 0.9
    tmr_skip_threshold: float = 1e-3
    # [strategy]
    strategy: str = "fedms"
    emd_weight: float = 1.0
    emd_decay: float = 0.99
    sfedavg_epsilon: float = 0.1
    poc_candidates: int = 0
    greedy_explore: bool = True

    @property
    def normalize_sv(self) -> bool:
        return not self.unnormalized_sv

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.hidden.replace(",", " ").split())

    @property
    def maverick_spec(self) -> dict[int, frozenset[int]]:
        return parse_maverick_spec(self.mavericks)

    def validate(self) -> None:
        """Raise ConfigError listing every violated constraint at once."""
        errs = []
        if self.num_rounds < 0:
            errs.append("num_rounds must be >= 0")
        if self.total_clients < 1:
            errs.append("total_clients must be >= 1")
        if not 1 <= self.cohort_size:
            errs.append("cohort_size must be >= 1")
        if self.cohort_size > self.total_clients:
            errs.append(
                f"cohort_size ({self.cohort_size}) exceeds total_clients ({self.total_clients})"
            )
        if self.strategy not in STRATEGIES:
            errs.append(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.engine not in ENGINES:
            errs.append(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.dataset not in DATASETS:
            errs.append(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "mnist" and not self.data_dir:
            errs.append("data_dir is required for dataset = mnist")
        if not 0 <= self.alpha <= 1:
            errs.append("alpha must be in [0, 1]")
        if not self.temperature > 0:
            errs.append("temperature must be > 0")
        if self.epochs < 0:
            errs.append("epochs must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            errs.append("learning_rate must be > 0")
        if self.prox_mu < 0:
            errs.append("prox_mu must be >= 0")
        if not 0 < self.val_fraction < 1:
            errs.append("val_fraction must be in (0, 1)")
        if self.num_classes < 2 or self.per_class < 1 or self.test_per_class < 2 or self.dim < 1:
            errs.append("blob sizes must be positive (num_classes >= 2, test_per_class >= 2)")
        if not self.spread > 0:
            errs.append("spread must be > 0")
        if self.max_permutations < 1:
            errs.append("max_permutations must be >= 1")
        if not self.convergence_tol > 0:
            errs.append("convergence_tol must be > 0")
        if self.eps_between < 0 or self.eps_within < 0:
            errs.append("eps_between and eps_within must be >= 0")
        if not 0 < self.tmr_decay <= 1:
            errs.append("tmr_decay must be in (0, 1]")
        if self.engine in ("exact", "tmr") and self.cohort_size > 16:
            errs.append(f"engine {self.engine} enumerates subsets; cohort_size must be <= 16")
        if self.emd_weight < 0 or not 0 < self.emd_decay <= 1:
            errs.append("emd_weight must be >= 0 and emd_decay in (0, 1]")
        if not 0 <= self.sfedavg_epsilon <= 1:
            errs.append("sfedavg_epsilon must be in [0, 1]")
        if self.poc_candidates and not self.cohort_size <= self.poc_candidates <= self.total_clients:
            errs.append("poc_candidates must lie between cohort_size and total_clients")
        try:
            if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
                errs.append("hidden must list positive layer widths")
        except ValueError:
            errs.append(f"hidden: cannot parse {self.hidden!r}")
        try:
            for c, owners in self.maverick_spec.items():
                if not 0 <= c < (10 if self.dataset == "mnist" else self.num_classes):
                    errs.append(f"mavericks: class {c} out of range")
                if any(not 0 <= i < self.total_clients for i in owners):
                    errs.append(f"mavericks: owner of class {c} out of range")
        except ValueError as e:
            errs.append(f"mavericks: {e}")
        if errs:
            raise ConfigError("; ".join(errs))


SECTIONS: dict[str, tuple[str, ...]] = {
    "experiment": ("num_rounds", "total_clients", "cohort_size", "seed", "aggregate_best_subset"),
    "data": (
        "dataset", "data_dir", "num_classes", "per_class", "test_per_class",
        "dim", "spread", "mavericks", "val_fraction",
    ),
    "train": ("hidden", "epochs", "batch_size", "learning_rate", "prox_mu"),
    "shapley": (
        "engine", "unnormalized_sv", "alpha", "temperature", "eps_between", "eps_within",
        "max_permutations", "convergence_tol", "tmr_decay", "tmr_skip_threshold",
    ),
    "strategy": ("strategy", "emd_weight", "emd_decay", "sfedavg_epsilon", "poc_candidates", "greedy_explore"),
}
# "name" under [strategy] reads more naturally than "strategy"
ALIASES = {("strategy", "name"): "strategy"}

_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_maverick_spec(text: str) -> dict[int, frozenset[int]]:
    """``"9:0; 8:1,2"`` -> {9: {0}, 8: {1, 2}}."""
    spec: dict[int, frozenset[int]] = {}
    for item in text.replace("\n", ";").split(";"):
        item = item.strip()
        if not item:
            continue
        cls, sep, owners = item.partition(":")
        if not sep:
            raise ValueError(f"expected 'class:client[,client]', got {item!r}")
        ids = frozenset(int(o) for o in owners.replace(",", " ").split())
        if not ids:
            raise ValueError(f"class {cls.strip()} lists no clients")
        c = int(cls)
        if c in spec:
            raise ValueError(f"class {c} listed twice")
        spec[c] = ids
    return spec


def format_maverick_spec(spec: dict[int, frozenset[int]]) -> str:
    return "; ".join(f"{c}:{','.join(str(i) for i in sorted(o))}" for c, o in sorted(spec.items()))


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            name = ALIASES.get((section, key), key)
            if name not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[name] = _coerce(name, raw)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def emit_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{'name' if key == 'strategy' else key} = {v}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    out = replace(cfg, **kw)
    out.validate()
    return out
