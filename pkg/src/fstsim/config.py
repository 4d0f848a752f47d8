"""Declarative experiment configuration with lossless JSON round-trips.

A config fully determines a run: tasks (objective family, rates, targets,
data synthesis), the client pool, the delay distribution, the algorithm
and its allocation knobs, evaluation cadence, stop conditions, and seeds.
``parse_config(serialize_config(cfg)) == cfg`` holds exactly; unknown keys
are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """A configuration is malformed or internally inconsistent."""


class AlgorithmKind(str, enum.Enum):
    FEDAST_STATIC = "fedast_static"
    FEDAST_DYNAMIC = "fedast_dynamic"
    MM_SYNC = "mm_sync"
    NO_BUFFER = "no_buffer"


_OBJECTIVE_KINDS = ("quadratic", "logistic", "tiny_mlp")


@dataclass(frozen=True)
class TaskConfig:
    """One task: objective family, local training knobs, data synthesis.

    Only the parameter group matching ``kind`` is read; the rest keep their
    defaults and are ignored (but still round-trip).
    """

    task_id: int
    kind: str = "quadratic"
    tau: int = 1
    eta_c: float = 0.1
    eta_s: float = 1.0
    target_metric: float = 0.9
    target_kind: str = "accuracy"
    batch_size: int = 1
    base_beta: float = 1.0
    r0: int = 8
    b0: int = 2
    l2: float = 0.0
    smoothness: float = 1.0
    # quadratic family
    dim: int = 1
    mu: float = 0.0
    sigma_g: float = 1.0
    points_per_client: int = 1
    local_spread: float = 0.0
    # classification families (logistic, tiny_mlp)
    n_features: int = 2
    n_classes: int = 2
    hidden_units: int = 8
    n_train: int = 512
    n_eval: int = 256
    center_scale: float = 3.0
    cluster_std: float = 1.0
    alpha: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[TaskConfig, ...]
    algorithm: str = AlgorithmKind.FEDAST_STATIC.value
    n_clients: int = 1000
    availability: float = 0.3
    k_sync: int = 30
    shift_factor: float = 1.0
    scale_factor: float = 2.0
    speed_mix: tuple[float, float, float] = (0.25, 0.50, 0.25)
    speed_multipliers: tuple[float, float, float] = (1.3, 1.0, 0.7)
    history_size: int = 8
    c_period: int | None = None
    tau_max: int | None = None
    drop_enforcement: bool = False
    ratio_cap: float = 37.0
    strict_ratio: bool = False
    eval_interval: float = 1.0
    stop_on_targets: bool = True
    max_sim_time: float | None = None
    max_rounds: int | None = None
    seed: int = 0
    runs: int = 1


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise ConfigError on any hard inconsistency."""
    if not cfg.tasks:
        raise ConfigError("config defines no tasks")
    ids = [t.task_id for t in cfg.tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate task ids: {ids}")
    try:
        AlgorithmKind(cfg.algorithm)
    except ValueError:
        raise ConfigError(
            f"unknown algorithm {cfg.algorithm!r}; choose from "
            f"{[a.value for a in AlgorithmKind]}"
        ) from None
    if cfg.n_clients < 1:
        raise ConfigError("n_clients must be at least 1")
    if not 0.0 < cfg.availability <= 1.0:
        raise ConfigError("availability must lie in (0, 1]")
    if cfg.k_sync < 1:
        raise ConfigError("k_sync must be at least 1")
    if cfg.shift_factor < 0 or cfg.scale_factor < 0:
        raise ConfigError("delay factors must be nonnegative")
    if cfg.shift_factor == 0 and cfg.scale_factor == 0:
        raise ConfigError("delay distribution is degenerate at zero")
    if len(cfg.speed_mix) != 3 or abs(sum(cfg.speed_mix) - 1.0) > 1e-9:
        raise ConfigError("speed_mix must be three fractions summing to 1")
    if len(cfg.speed_multipliers) != 3 or any(m <= 0 for m in cfg.speed_multipliers):
        raise ConfigError("speed_multipliers must be three positive factors")
    if cfg.history_size < 2:
        raise ConfigError("history_size must be at least 2")
    if cfg.c_period is not None and cfg.c_period < 1:
        raise ConfigError("c_period must be at least 1")
    if cfg.drop_enforcement and cfg.tau_max is None:
        raise ConfigError("drop_enforcement requires tau_max")
    if cfg.tau_max is not None and cfg.tau_max < 0:
        raise ConfigError("tau_max must be nonnegative")
    if cfg.ratio_cap <= 0:
        raise ConfigError("ratio_cap must be positive")
    if cfg.eval_interval <= 0:
        raise ConfigError("eval_interval must be positive")
    if not cfg.stop_on_targets and cfg.max_sim_time is None and cfg.max_rounds is None:
        raise ConfigError("no stop condition enabled")
    if cfg.max_sim_time is not None and cfg.max_sim_time <= 0:
        raise ConfigError("max_sim_time must be positive")
    if cfg.max_rounds is not None and cfg.max_rounds < 1:
        raise ConfigError("max_rounds must be at least 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg.runs < 1:
        raise ConfigError("runs must be at least 1")

    for t in cfg.tasks:
        where = f"task {t.task_id}"
        if t.kind not in _OBJECTIVE_KINDS:
            raise ConfigError(f"{where}: unknown objective kind {t.kind!r}")
        if t.tau < 1:
            raise ConfigError(f"{where}: tau must be at least 1")
        if t.eta_c <= 0 or t.eta_s <= 0:
            raise ConfigError(f"{where}: learning rates must be positive")
        if t.target_kind not in ("accuracy", "loss"):
            raise ConfigError(f"{where}: target_kind must be 'accuracy' or 'loss'")
        if t.batch_size < 1:
            raise ConfigError(f"{where}: batch_size must be at least 1")
        if t.base_beta <= 0:
            raise ConfigError(f"{where}: base_beta must be positive")
        if t.r0 < 1 or t.b0 < 1:
            raise ConfigError(f"{where}: r0 and b0 must be at least 1")
        if t.smoothness <= 0:
            raise ConfigError(f"{where}: smoothness must be positive")
        if t.l2 < 0:
            raise ConfigError(f"{where}: l2 must be nonnegative")
        if cfg.algorithm == AlgorithmKind.NO_BUFFER.value and t.b0 != 1:
            raise ConfigError(
                f"{where}: the no-buffer baseline aggregates every update alone; set b0=1"
            )
        if cfg.strict_ratio and t.r0 > cfg.ratio_cap * t.b0:
            raise ConfigError(
                f"{where}: r0={t.r0} exceeds ratio_cap ({cfg.ratio_cap:g}) x b0={t.b0}"
            )
        if t.kind == "quadratic":
            if t.dim < 1:
                raise ConfigError(f"{where}: dim must be at least 1")
            if t.sigma_g < 0 or t.local_spread < 0:
                raise ConfigError(f"{where}: spread parameters must be nonnegative")
            if t.points_per_client < 1:
                raise ConfigError(f"{where}: points_per_client must be at least 1")
        else:
            if t.n_features < 1 or t.n_classes < 2:
                raise ConfigError(f"{where}: need n_features >= 1 and n_classes >= 2")
            if t.kind == "tiny_mlp" and t.hidden_units < 1:
                raise ConfigError(f"{where}: hidden_units must be at least 1")
            if t.n_train < cfg.n_clients:
                raise ConfigError(
                    f"{where}: n_train={t.n_train} cannot cover {cfg.n_clients} clients"
                )
            if t.n_eval < 1:
                raise ConfigError(f"{where}: n_eval must be at least 1")
            if t.alpha <= 0:
                raise ConfigError(f"{where}: alpha must be positive")
            if t.n_train < t.n_classes or t.n_eval < t.n_classes:
                raise ConfigError(f"{where}: need at least one sample per class per split")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["tasks"] = [dict(t) for t in d["tasks"]]
    d["speed_mix"] = list(d["speed_mix"])
    d["speed_multipliers"] = list(d["speed_multipliers"])
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    d = dict(d)
    task_dicts = d.pop("tasks", None)
    if not isinstance(task_dicts, list):
        raise ConfigError("config needs a 'tasks' list")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"tasks"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    task_known = {f.name for f in dataclasses.fields(TaskConfig)}
    tasks = []
    for i, td in enumerate(task_dicts):
        if not isinstance(td, dict):
            raise ConfigError(f"tasks[{i}] must be an object")
        bad = set(td) - task_known
        if bad:
            raise ConfigError(f"tasks[{i}]: unknown keys {sorted(bad)}")
        if "task_id" not in td:
            raise ConfigError(f"tasks[{i}]: task_id is required")
        tasks.append(TaskConfig(**td))
    if "speed_mix" in d:
        d["speed_mix"] = tuple(d["speed_mix"])
    if "speed_multipliers" in d:
        d["speed_multipliers"] = tuple(d["speed_multipliers"])
    cfg = ExperimentConfig(tasks=tuple(tasks), **d)
    validate_config(cfg)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg))
