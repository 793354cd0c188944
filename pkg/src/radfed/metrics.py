"""Divergence diagnostics and task metrics.

Two weight divergences: the signed relative difference of parameter
norms between a federated model and a centralized twin trained on the
same data, and the mean pairwise cosine divergence among local models
before aggregation.  Task metrics are accuracy, binary F1 and AUC.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import ClientDataset
from .errors import ParameterError, UndefinedMetricError
from .model import ModelState, TrainingConfig, client_update, init_model, loss_and_grad, predict, predict_proba
from .rng import derive_rng

METRICS = ("accuracy", "f1", "auc")


def dc_divergence(w_fl: ModelState, w_c: ModelState) -> float:
    """Signed relative difference of parameter norms, federated vs
    centralized.

    This compares norms only: opposite vectors of equal length score 0.
    See :func:`norm_distance` for the companion distance.
    """
    norm_c = float(np.linalg.norm(w_c.params))
    if norm_c == 0:
        raise UndefinedMetricError("centralized model has zero norm")
    return (float(np.linalg.norm(w_fl.params)) - norm_c) / norm_c


def norm_distance(w_fl: ModelState, w_c: ModelState) -> float:
    """Companion metric: ||w_fl - w_c|| / ||w_c||.

    Recorded alongside :func:`dc_divergence` because the norm difference
    can be 0 for very different models; this one cannot.
    """
    norm_c = float(np.linalg.norm(w_c.params))
    if norm_c == 0:
        raise UndefinedMetricError("centralized model has zero norm")
    return float(np.linalg.norm(w_fl.params - w_c.params)) / norm_c


def dl_divergence(models: list[ModelState]) -> float:
    """Mean over unordered model pairs of (1 - cosine similarity)."""
    if len(models) < 2:
        raise ParameterError("dl_divergence needs at least two models")
    stacked = np.stack([m.params for m in models])
    norms = np.linalg.norm(stacked, axis=1)
    if (norms == 0).any():
        raise UndefinedMetricError("a model has zero norm")
    cos = (stacked @ stacked.T) / np.outer(norms, norms)
    iu = np.triu_indices(len(models), k=1)
    return float(np.mean(1.0 - cos[iu]))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def accuracy_score(labels: np.ndarray, predictions: np.ndarray) -> float:
    return float(np.mean(labels == predictions))


def f1_score_binary(labels: np.ndarray, predictions: np.ndarray) -> float:
    """F1 of the positive class (label 1); 0 when undefined."""
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC; equals the pairwise correct-ranking probability
    with ties counted half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def evaluate(state: ModelState, clients: list[ClientDataset], metric: str) -> float:
    """Compute a task metric over the pooled samples of the clients."""
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}")
    if not clients:
        raise ParameterError("evaluate needs at least one client")
    x = np.vstack([c.features for c in clients])
    y = np.concatenate([c.labels for c in clients])
    if metric == "accuracy":
        return accuracy_score(y, predict(state, x))
    if not set(np.unique(y)) <= {0, 1}:
        raise ParameterError(f"{metric} requires binary labels")
    if metric == "f1":
        return f1_score_binary(y, predict(state, x))
    return auc_score(y, predict_proba(state, x)[:, 1])


def pooled_loss(state: ModelState, clients: list[ClientDataset]) -> float:
    """Mean loss over the pooled samples (no proximal term)."""
    x = np.vstack([c.features for c in clients])
    y = np.concatenate([c.labels for c in clients])
    loss, _ = loss_and_grad(state, x, y)
    return loss


@dataclass
class DivergenceTrace:
    """Per-round divergences from one paired federated/centralized run."""

    dc: list[float] = field(default_factory=list)
    dc_distance: list[float] = field(default_factory=list)
    dl: list[tuple[int, int, float]] = field(default_factory=list)  # (round, step, value)


def centralized_epoch(
    central: ModelState,
    clients: list[ClientDataset],
    training: TrainingConfig,
    rng: np.random.Generator,
) -> ModelState:
    """One epoch of mini-batch SGD on the pooled, globally shuffled data."""
    x = np.vstack([c.features for c in clients])
    y = np.concatenate([c.labels for c in clients])
    pooled = ClientDataset(
        client_id=-1, features=x, labels=y, n_classes=clients[0].n_classes
    )
    cfg = replace(training, epochs=1, prox_mu=0.0)
    updated, _ = client_update(central, pooled, cfg, rng=rng)
    return updated


def centralized_reference_run(
    cfg,
    clients: list[ClientDataset],
    participants_per_round: list[list[int]],
) -> list[ModelState]:
    """Centralized twin states, one per round.

    Each round trains one epoch on the union of that round's federated
    participants, from the same initialization as the federated run.
    """
    by_id = {c.client_id: c for c in clients}
    central = init_model(cfg.family, seed=cfg.seed, l2=cfg.l2)
    states = []
    for t, participants in enumerate(participants_per_round, start=1):
        chosen = [by_id[k] for k in sorted(set(participants))]
        central = centralized_epoch(
            central, chosen, cfg.training, derive_rng(cfg.seed, "central", t)
        )
        states.append(central.copy())
    return states


def centralized_twin_run(cfg, clients: list[ClientDataset]) -> DivergenceTrace:
    """Train a federated model and its centralized twin side by side.

    Both start from the same initialization; each round the twin trains
    one epoch on the concatenation of the round's participating clients'
    data with a global shuffle.  Records the norm divergence per round
    and the local-model divergence per redistribution step.
    """
    from . import fedcore  # local import: fedcore depends on this module

    state = init_model(cfg.family, seed=cfg.seed, l2=cfg.l2)
    central = state.copy()
    importance = (
        fedcore.init_importance([c.client_id for c in clients])
        if cfg.algorithm == "radfed_is"
        else None
    )
    trace = DivergenceTrace()
    for t in range(1, cfg.n_rounds + 1):
        state, record, importance = fedcore.run_round(
            state, clients, cfg, t, importance=importance
        )
        participants = [k for step in record.selected for k in step]
        chosen_ids = sorted(set(participants))
        by_id = {c.client_id: c for c in clients}
        central = centralized_epoch(
            central,
            [by_id[k] for k in chosen_ids],
            cfg.training,
            derive_rng(cfg.seed, "central", t),
        )
        trace.dc.append(dc_divergence(state, central))
        trace.dc_distance.append(norm_distance(state, central))
        for s, value in enumerate(record.dl_per_step, start=1):
            if value is not None:
                trace.dl.append((t, s, value))
    return trace
