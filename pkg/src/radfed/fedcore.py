"""Federated orchestration: sampling, rounds, experiments, folds.

The engine is a deterministic in-process simulation.  Aggregation-
delayed training keeps m model replicas journeying across freshly
sampled clients for S redistribution steps before a plain (unweighted)
mean; the baselines aggregate every round, weighted by client size.
Client selection is uniform or proportional to accumulated importance
scores.  All randomness flows through streams derived from the master
seed and the (round, step, client) coordinates, so results do not depend
on scheduling.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ClientDataset
from .errors import ConfigError, NumericError, ParameterError
from .metrics import dl_divergence, evaluate, pooled_loss
from .model import (
    ModelFamily,
    ModelState,
    TrainingConfig,
    average_models,
    client_update,
    init_model,
    weighted_average_models,
)
from .rng import derive_rng

logger = logging.getLogger(__name__)

ALGORITHMS = ("fedavg", "fedprox", "radfed", "radfed_is")


@dataclass
class FederatedConfig:
    """All hyper-parameters of one federated run."""

    algorithm: str
    participation: float                 # fraction of training clients per step
    n_rounds: int                        # outer rounds
    training: TrainingConfig
    family: ModelFamily
    n_clients: int = 0                   # training-client count; 0 = from fold
    redistributions: int = 1             # inner steps (radfed family)
    alpha: float = 0.9                   # importance EMA mixing (radfed_is)
    prox_mu: float = 0.0                 # proximal strength (fedprox)
    l2: float = 0.0
    metric: str = "accuracy"
    eval_every: int = 1
    seed: int = 0
    fedavg_weighted: bool = True
    importance_mode: str = "batch_mean"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.participation <= 1:
            raise ConfigError("participation must be in (0, 1]")
        if self.n_rounds < 0:
            raise ConfigError("n_rounds must be nonnegative")
        if self.algorithm in ("radfed", "radfed_is") and self.redistributions < 1:
            raise ConfigError("redistributions must be at least 1")
        if self.algorithm == "radfed_is" and not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")

    def replicas(self, n_train_clients: int) -> int:
        return max(int(self.participation * n_train_clients), 1)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "participation": self.participation,
            "n_rounds": self.n_rounds,
            "n_clients": self.n_clients,
            "redistributions": self.redistributions,
            "alpha": self.alpha,
            "prox_mu": self.prox_mu,
            "l2": self.l2,
            "metric": self.metric,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "fedavg_weighted": self.fedavg_weighted,
            "importance_mode": self.importance_mode,
            "training": {
                "batch_size": self.training.batch_size,
                "epochs": self.training.epochs,
                "learning_rate": self.training.learning_rate,
                "prox_mu": self.training.prox_mu,
                "seed": self.training.seed,
            },
            "family": self.family.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FederatedConfig":
        training = TrainingConfig(**raw["training"])
        family = ModelFamily.from_dict(raw["family"])
        keys = {
            "algorithm", "participation", "n_rounds", "n_clients",
            "redistributions", "alpha", "prox_mu", "l2", "metric",
            "eval_every", "seed", "fedavg_weighted", "importance_mode",
        }
        kwargs = {k: raw[k] for k in keys if k in raw}
        return cls(training=training, family=family, **kwargs)


@dataclass
class ImportanceState:
    """Per-client unnormalized sampling weights."""

    scores: dict[int, float]


def init_importance(client_ids: list[int], value: float = 1.0) -> ImportanceState:
    """Neutral cold start: every client gets the same positive score."""
    return ImportanceState(scores={int(k): float(value) for k in client_ids})


def update_importance(
    state: ImportanceState, client_id: int, p_new: float, alpha: float
) -> ImportanceState:
    """EMA update of one client's score: (1-alpha)*old + alpha*new."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must be in (0, 1)")
    if p_new < 0:
        raise NumericError("importance score must be nonnegative", client_id=client_id)
    if client_id not in state.scores:
        raise ParameterError(f"unknown client {client_id}")
    scores = dict(state.scores)
    scores[client_id] = (1.0 - alpha) * scores[client_id] + alpha * p_new
    return ImportanceState(scores=scores)


def sample_uniform(
    client_ids: list[int], m: int, rng: np.random.Generator
) -> list[int]:
    """m distinct clients, uniform over m-subsets, order randomized."""
    if m > len(client_ids):
        raise ParameterError(f"cannot sample {m} of {len(client_ids)} clients")
    chosen = rng.choice(np.asarray(client_ids, dtype=np.int64), size=m, replace=False)
    return [int(k) for k in chosen]


def sample_importance(
    state: ImportanceState, m: int, rng: np.random.Generator
) -> list[int]:
    """m distinct clients, drawn sequentially proportional to scores.

    When the remaining positive mass runs out the rest are drawn
    uniformly (logged).
    """
    ids = sorted(state.scores)
    if m > len(ids):
        raise ParameterError(f"cannot sample {m} of {len(ids)} clients")
    remaining = list(ids)
    chosen: list[int] = []
    warned = False
    for _ in range(m):
        weights = [state.scores[k] for k in remaining]
        total = sum(weights)
        if total <= 0:
            if not warned:
                logger.warning(
                    "sample_importance: no positive scores left, falling back to uniform"
                )
                warned = True
            pick = int(rng.integers(len(remaining)))
        else:
            u = float(rng.uniform(0.0, total))
            acc = 0.0
            pick = len(remaining) - 1
            for idx, w in enumerate(weights):
                acc += w
                if u < acc:
                    pick = idx
                    break
        chosen.append(remaining.pop(pick))
    return chosen


@dataclass
class RoundRecord:
    """What one outer round did and measured."""

    round_index: int
    algorithm: str
    selected: list[list[int]]                  # client ids per redistribution step
    dl_per_step: list[float | None] = field(default_factory=list)
    val_metric: float | None = None
    val_loss: float | None = None
    dc: float | None = None
    duration_sec: float = 0.0


def _safe_dl(models: list[ModelState]) -> float | None:
    if len(models) < 2:
        return None
    norms = [float(np.linalg.norm(m.params)) for m in models]
    if any(n == 0.0 for n in norms) or not all(math.isfinite(n) for n in norms):
        return None
    with np.errstate(over="ignore", invalid="ignore"):
        value = dl_divergence(models)
    return value if math.isfinite(value) else None


def run_radfed_round(
    state: ModelState,
    clients: list[ClientDataset],
    cfg: FederatedConfig,
    round_index: int = 1,
    importance: ImportanceState | None = None,
) -> tuple[ModelState, RoundRecord, ImportanceState | None]:
    """One aggregation-delayed round.

    m replicas start from the global model; for each of S redistribution
    steps, m clients are sampled (uniform, or proportional to importance
    scores when a state is supplied) and replica i trains on the i-th
    sampled client.  After S steps the replicas are averaged with equal
    weights; client sizes are never read by aggregation.
    """
    by_id = {c.client_id: c for c in clients}
    ids = sorted(by_id)
    m = cfg.replicas(len(ids))
    if m > len(ids):
        raise ParameterError("more replicas than training clients")
    use_importance = importance is not None
    replicas = [state.copy() for _ in range(m)]
    selected: list[list[int]] = []
    dl_values: list[float | None] = []

    for s in range(1, cfg.redistributions + 1):
        sampling_rng = derive_rng(cfg.seed, "sample", round_index, s)
        if use_importance:
            picks = sample_importance(importance, m, sampling_rng)
        else:
            picks = sample_uniform(ids, m, sampling_rng)
        for i, k in enumerate(picks):
            train_rng = derive_rng(cfg.seed, "train", round_index, s, k)
            try:
                replicas[i], p_new = client_update(
                    replicas[i],
                    by_id[k],
                    cfg.training,
                    rng=train_rng,
                    importance_mode=cfg.importance_mode,
                )
            except NumericError as err:
                raise err.with_context(
                    round_index=round_index, step=s, client_id=k
                ) from err
            if use_importance:
                importance = update_importance(importance, k, p_new, cfg.alpha)
        selected.append(picks)
        dl_values.append(_safe_dl(replicas))

    new_state = average_models(replicas)
    record = RoundRecord(
        round_index=round_index,
        algorithm=cfg.algorithm,
        selected=selected,
        dl_per_step=dl_values,
    )
    return new_state, record, importance


def run_fedavg_round(
    state: ModelState,
    clients: list[ClientDataset],
    cfg: FederatedConfig,
    round_index: int = 1,
) -> tuple[ModelState, RoundRecord]:
    """One FedAvg/FedProx round: sample, train from the global model,
    aggregate weighted by client sizes (or unweighted when configured)."""
    by_id = {c.client_id: c for c in clients}
    ids = sorted(by_id)
    m = cfg.replicas(len(ids))
    if m > len(ids):
        raise ParameterError("more replicas than training clients")
    sampling_rng = derive_rng(cfg.seed, "sample", round_index, 1)
    picks = sample_uniform(ids, m, sampling_rng)

    anchor = state if cfg.algorithm == "fedprox" else None
    training = (
        replace(cfg.training, prox_mu=cfg.prox_mu)
        if cfg.algorithm == "fedprox"
        else cfg.training
    )
    updated: list[ModelState] = []
    sizes: list[int] = []
    for k in picks:
        train_rng = derive_rng(cfg.seed, "train", round_index, 1, k)
        try:
            new_state, _ = client_update(
                state, by_id[k], training, anchor=anchor, rng=train_rng,
                importance_mode=cfg.importance_mode,
            )
        except NumericError as err:
            raise err.with_context(round_index=round_index, step=1, client_id=k) from err
        updated.append(new_state)
        sizes.append(len(by_id[k]))

    if cfg.fedavg_weighted:
        new_state = weighted_average_models(updated, sizes)
    else:
        new_state = average_models(updated)
    record = RoundRecord(
        round_index=round_index,
        algorithm=cfg.algorithm,
        selected=[picks],
        dl_per_step=[_safe_dl(updated)],
    )
    return new_state, record


def run_round(
    state: ModelState,
    clients: list[ClientDataset],
    cfg: FederatedConfig,
    round_index: int,
    importance: ImportanceState | None = None,
) -> tuple[ModelState, RoundRecord, ImportanceState | None]:
    """Dispatch one round for any algorithm."""
    if cfg.algorithm in ("radfed", "radfed_is"):
        return run_radfed_round(state, clients, cfg, round_index, importance)
    state, record = run_fedavg_round(state, clients, cfg, round_index)
    return state, record, importance


@dataclass(frozen=True)
class FoldSpec:
    """By-client split: whole clients go to train, validation or test."""

    train_ids: tuple[int, ...]
    validation_ids: tuple[int, ...]
    test_ids: tuple[int, ...]


def make_folds(
    client_ids: list[int],
    n_folds: int,
    rng: np.random.Generator,
    nested: bool = False,
) -> list[FoldSpec]:
    """Cross-validation splits over whole clients.

    Clients are shuffled once and cut into n_folds groups; each group
    serves as the test set exactly once.  By default the validation
    group is chosen round-robin (the next group), giving n_folds splits;
    ``nested=True`` instead emits every (test, validation) combination.
    """
    if n_folds < 2:
        raise ParameterError("n_folds must be at least 2")
    if len(client_ids) < n_folds:
        raise ParameterError("fewer clients than folds")
    order = rng.permutation(np.asarray(client_ids, dtype=np.int64))
    groups = [tuple(int(v) for v in g) for g in np.array_split(order, n_folds)]
    folds = []
    for f in range(n_folds):
        test = groups[f]
        others = [g for i, g in enumerate(groups) if i != f]
        if nested:
            for v in range(len(others)):
                val = others[v]
                train = tuple(k for i, g in enumerate(others) if i != v for k in g)
                folds.append(FoldSpec(train_ids=train, validation_ids=val, test_ids=test))
        else:
            val = groups[(f + 1) % n_folds]
            train = tuple(
                k for i, g in enumerate(groups) if i != f and g is not val for k in g
            )
            folds.append(FoldSpec(train_ids=train, validation_ids=val, test_ids=test))
    return folds


@dataclass
class ExperimentResult:
    """Outcome of one (algorithm, seed, fold) cell."""

    final_state: ModelState
    best_state: ModelState
    best_round: int
    best_val_metric: float | None
    test_metric: float | None
    records: list[RoundRecord]


def run_experiment(
    cfg: FederatedConfig,
    clients: list[ClientDataset],
    fold: FoldSpec,
) -> ExperimentResult:
    """Run T rounds on the fold's training clients.

    Evaluates on the validation clients every ``eval_every`` rounds and
    tracks the best checkpoint; the final report evaluates that
    checkpoint on the test clients.
    """
    by_id = {c.client_id: c for c in clients}
    missing = [k for k in (*fold.train_ids, *fold.validation_ids, *fold.test_ids)
               if k not in by_id]
    if missing:
        raise ConfigError(f"fold references unknown clients {missing[:5]}")
    train_clients = [by_id[k] for k in fold.train_ids]
    val_clients = [by_id[k] for k in fold.validation_ids]
    test_clients = [by_id[k] for k in fold.test_ids]
    if not train_clients:
        raise ConfigError("fold has no training clients")
    if cfg.n_clients and cfg.n_clients != len(train_clients):
        raise ConfigError(
            f"config expects {cfg.n_clients} training clients, fold has {len(train_clients)}"
        )

    state = init_model(cfg.family, seed=cfg.seed, l2=cfg.l2)
    importance = (
        init_importance([c.client_id for c in train_clients])
        if cfg.algorithm == "radfed_is"
        else None
    )
    best_state = state.copy()
    best_round = 0
    best_val: float | None = None
    records: list[RoundRecord] = []

    for t in range(1, cfg.n_rounds + 1):
        started = time.perf_counter()
        state, record, importance = run_round(state, clients=train_clients, cfg=cfg,
                                              round_index=t, importance=importance)
        if val_clients and (t % cfg.eval_every == 0 or t == cfg.n_rounds):
            record.val_metric = evaluate(state, val_clients, cfg.metric)
            record.val_loss = pooled_loss(state, val_clients)
            if best_val is None or record.val_metric > best_val:
                best_val = record.val_metric
                best_state = state.copy()
                best_round = t
        record.duration_sec = time.perf_counter() - started
        records.append(record)

    if best_val is None:  # no validation pass happened
        best_state = state.copy()
        best_round = cfg.n_rounds
    test_metric = evaluate(best_state, test_clients, cfg.metric) if test_clients else None
    return ExperimentResult(
        final_state=state,
        best_state=best_state,
        best_round=best_round,
        best_val_metric=best_val,
        test_metric=test_metric,
        records=records,
    )
