"""Dataset ingestion, synthetic data generation and standardization."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import IngestionError, ParameterError
from .rng import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for a CSV dataset.

    One label column; every other used column is either numeric or
    categorical.  Columns not listed are ignored on load.
    """

    label: str
    numeric: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, path: str | Path) -> "DatasetSchema":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            label=raw["label"],
            numeric=tuple(raw.get("numeric", ())),
            categorical=tuple(raw.get("categorical", ())),
        )

    def to_json(self) -> str:
        return json.dumps(
            {"label": self.label, "numeric": list(self.numeric),
             "categorical": list(self.categorical)},
            sort_keys=True,
        )


@dataclass
class TabularDataset:
    """Labeled dataset with raw (not yet encoded) categorical features."""

    numeric: np.ndarray          # (N, n_numeric) float64
    categorical: np.ndarray      # (N, M) integer level codes
    labels: np.ndarray           # (N,) integer class codes
    schema: DatasetSchema
    class_names: tuple[str, ...]
    category_levels: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        self.numeric = np.asarray(self.numeric, dtype=np.float64)
        if self.numeric.ndim != 2:
            raise ParameterError("numeric features must be a 2-d matrix")
        self.categorical = np.asarray(self.categorical, dtype=np.int64)
        if self.categorical.ndim != 2:
            self.categorical = self.categorical.reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.numeric.shape[0] != n or self.categorical.shape[0] != n:
            raise ParameterError("feature matrices and labels disagree on sample count")

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_arities(self) -> tuple[int, ...]:
        return tuple(len(levels) for levels in self.category_levels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def configurations(self) -> np.ndarray:
        """Per-sample (class, category...) tuples as an (N, 1+M) array."""
        return np.column_stack([self.labels, self.categorical])

    def config_totals(self) -> dict[tuple[int, ...], int]:
        """Count samples per (class, category...) configuration."""
        totals: dict[tuple[int, ...], int] = {}
        for row in self.configurations():
            key = tuple(int(v) for v in row)
            totals[key] = totals.get(key, 0) + 1
        return totals


@dataclass
class ClientDataset:
    """One client's share of a dataset, with an encoded feature matrix.

    ``features`` holds numeric columns first (the ones standardization
    touches), followed by one-hot encoded categorical columns.
    """

    client_id: int
    features: np.ndarray         # (n, d) float64
    labels: np.ndarray           # (n,) integer class codes
    n_classes: int
    n_numeric: int = 0
    indices: np.ndarray | None = None
    categorical: np.ndarray | None = None
    feature_arities: tuple[int, ...] = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != len(self.labels):
            raise ParameterError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def class_ratios(self) -> np.ndarray:
        counts = self.class_counts().astype(np.float64)
        return counts / counts.sum()

    def feature_category_counts(self) -> list[np.ndarray]:
        if self.categorical is None:
            return []
        return [
            np.bincount(self.categorical[:, j], minlength=arity)
            for j, arity in enumerate(self.feature_arities)
        ]


def load_csv(
    path: str | Path,
    schema: DatasetSchema,
    class_names: tuple[str, ...] | None = None,
) -> TabularDataset:
    """Load a CSV file according to ``schema``.

    When ``class_names`` is given, label values outside it are rejected;
    otherwise the class universe is inferred from the file (sorted,
    numerically when all labels parse as integers).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        col_index = {name: i for i, name in enumerate(header)}
        for name in (schema.label, *schema.numeric, *schema.categorical):
            if name not in col_index:
                raise IngestionError(f"{path}: missing column {name!r}")
        rows = list(reader)

    label_col = col_index[schema.label]
    raw_labels = [row[label_col] for row in rows]
    if class_names is None:
        uniq = sorted(set(raw_labels))
        try:
            uniq.sort(key=int)
        except ValueError:
            pass
        class_names = tuple(uniq)
    class_code = {name: i for i, name in enumerate(class_names)}

    n = len(rows)
    numeric = np.zeros((n, len(schema.numeric)), dtype=np.float64)
    labels = np.zeros(n, dtype=np.int64)
    raw_cats: list[list[str]] = [[] for _ in schema.categorical]

    for r, row in enumerate(rows):
        rownum = r + 2  # header is row 1
        if len(row) != len(header):
            raise IngestionError(f"{path}: wrong field count", row=rownum)
        lbl = row[label_col]
        if lbl not in class_code:
            raise IngestionError(f"{path}: unknown label value {lbl!r}", row=rownum)
        labels[r] = class_code[lbl]
        for j, name in enumerate(schema.numeric):
            cell = row[col_index[name]]
            try:
                numeric[r, j] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{path}: unparseable value {cell!r} in column {name!r}",
                    row=rownum,
                ) from None
        for j, name in enumerate(schema.categorical):
            raw_cats[j].append(row[col_index[name]])

    category_levels = tuple(tuple(sorted(set(col))) for col in raw_cats)
    categorical = np.zeros((n, len(schema.categorical)), dtype=np.int64)
    for j, levels in enumerate(category_levels):
        code = {v: i for i, v in enumerate(levels)}
        categorical[:, j] = [code[v] for v in raw_cats[j]]

    return TabularDataset(
        numeric=numeric,
        categorical=categorical,
        labels=labels,
        schema=schema,
        class_names=class_names,
        category_levels=category_levels,
    )


def write_csv(dataset: TabularDataset, path_or_file) -> None:
    """Write a dataset to CSV (exact float round-trip via repr).

    Accepts a path or an open text file object.
    """
    schema = dataset.schema
    header = [*schema.numeric, *schema.categorical, schema.label]

    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in range(dataset.n_samples):
            row = [repr(float(v)) for v in dataset.numeric[r]]
            row += [
                dataset.category_levels[j][dataset.categorical[r, j]]
                for j in range(len(schema.categorical))
            ]
            row.append(dataset.class_names[dataset.labels[r]])
            writer.writerow(row)

    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="", encoding="utf-8") as fh:
            emit(fh)


def mixture_centers(n_classes: int, n_features: int, separation: float) -> np.ndarray:
    """Class centers used by :func:`synth_gaussian_mixture`."""
    centers = np.zeros((n_classes, n_features))
    for k in range(n_classes):
        axis = k % n_features
        centers[k, axis] = separation * (1 + k // n_features)
    return centers


def synth_gaussian_mixture(
    n_classes: int,
    n_features: int,
    separation: float,
    n_samples: int,
    seed: int,
) -> TabularDataset:
    """Gaussian blobs with unit variance and class centers spaced apart.

    The classes become linearly separable as ``separation`` grows; class
    membership is a balanced uniform draw.
    """
    if separation <= 0:
        raise ParameterError("separation must be positive")
    if n_classes < 2 or n_features < 1 or n_samples < 1:
        raise ParameterError("need n_classes >= 2, n_features >= 1, n_samples >= 1")
    rng = derive_rng(seed, "synth")
    labels = rng.integers(0, n_classes, size=n_samples)
    centers = mixture_centers(n_classes, n_features, separation)
    features = centers[labels] + rng.standard_normal((n_samples, n_features))
    schema = DatasetSchema(
        label="label",
        numeric=tuple(f"f{j}" for j in range(n_features)),
        categorical=(),
    )
    return TabularDataset(
        numeric=features,
        categorical=np.zeros((n_samples, 0), dtype=np.int64),
        labels=labels,
        schema=schema,
        class_names=tuple(str(k) for k in range(n_classes)),
        category_levels=(),
    )


def build_client_datasets(
    dataset: TabularDataset,
    assignments: list[np.ndarray],
) -> list[ClientDataset]:
    """Materialize per-client datasets from sample-index assignments.

    Categorical features are one-hot encoded here, after partitioning,
    using the dataset-wide category levels so every client shares one
    encoding.
    """
    arities = dataset.feature_arities
    clients = []
    for cid, idx in enumerate(assignments):
        idx = np.asarray(idx, dtype=np.int64)
        blocks = [dataset.numeric[idx]]
        for j, arity in enumerate(arities):
            onehot = np.zeros((len(idx), arity))
            onehot[np.arange(len(idx)), dataset.categorical[idx, j]] = 1.0
            blocks.append(onehot)
        clients.append(
            ClientDataset(
                client_id=cid,
                features=np.hstack(blocks) if blocks else np.zeros((len(idx), 0)),
                labels=dataset.labels[idx],
                n_classes=dataset.n_classes,
                n_numeric=dataset.numeric.shape[1],
                indices=idx,
                categorical=dataset.categorical[idx] if arities else None,
                feature_arities=arities,
            )
        )
    return clients


@dataclass
class StandardizationStats:
    """Per-feature location/scale, either shared or per client."""

    scope: str  # "global" | "local"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    per_client: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def _safe_std(values: np.ndarray) -> np.ndarray:
    std = values.std(axis=0)
    std[std <= 0] = 1.0  # zero-variance features become constant 0 after centering
    return std


def _apply(client: ClientDataset, mean: np.ndarray, std: np.ndarray) -> ClientDataset:
    features = client.features.copy()
    k = client.n_numeric
    features[:, :k] = (features[:, :k] - mean) / std
    return replace(client, features=features)


def standardize(
    clients: list[ClientDataset],
    scope: str = "global",
    stats: StandardizationStats | None = None,
) -> tuple[list[ClientDataset], StandardizationStats]:
    """Standardize the numeric feature columns of every client.

    Global scope pools the given clients to fit one mean/std (pass
    ``stats`` from a previous call to reuse a fit, e.g. apply training
    statistics to held-out clients).  Local scope fits each client on its
    own data.
    """
    if scope not in ("global", "local"):
        raise ParameterError(f"unknown standardization scope {scope!r}")
    if not clients:
        return [], StandardizationStats(scope=scope)
    n_numeric = clients[0].n_numeric
    if n_numeric == 0:
        logger.warning("standardize: no numeric features, returning data unchanged")
        return list(clients), StandardizationStats(scope=scope)

    if scope == "global":
        if stats is None:
            pooled = np.vstack([c.features[:, :n_numeric] for c in clients])
            stats = StandardizationStats(
                scope="global", mean=pooled.mean(axis=0), std=_safe_std(pooled)
            )
        return [_apply(c, stats.mean, stats.std) for c in clients], stats

    stats = StandardizationStats(scope="local")
    out = []
    for c in clients:
        block = c.features[:, :n_numeric]
        mean, std = block.mean(axis=0), _safe_std(block)
        stats.per_client[c.client_id] = (mean, std)
        out.append(_apply(c, mean, std))
    return out, stats
