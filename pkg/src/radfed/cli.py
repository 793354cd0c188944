"""Command-line entry point: gen, partition, run, metrics.

Every output embeds the hash of the resolved configuration and the
master seed, files are written atomically (temp + rename), and reruns of
the same inputs produce byte-identical data files.  Wall-clock timings
go to a sidecar so they never break reproducibility.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fedcore, metrics, partition as part_mod
from .data import (
    DatasetSchema,
    TabularDataset,
    build_client_datasets,
    load_csv,
    standardize,
    synth_gaussian_mixture,
    write_csv,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    IngestionError,
    InfeasibleError,
    ParameterError,
    RadfedError,
)
from .fedcore import FederatedConfig, FoldSpec, make_folds, run_experiment
from .model import ModelFamily, TrainingConfig, load_checkpoint, save_checkpoint
from .rng import derive_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


# ---------------------------------------------------------------------------
# Small IO helpers
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(value) -> str:
    """Deterministic cell formatting for CSV output."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = {
        "classes": args.classes,
        "features": args.features,
        "samples": args.samples,
        "separation": args.separation,
        "seed": args.seed,
    }
    spec_hash = content_hash(canonical_json(spec))
    dataset = synth_gaussian_mixture(
        n_classes=args.classes,
        n_features=args.features,
        separation=args.separation,
        n_samples=args.samples,
        seed=args.seed,
    )
    buffer = io.StringIO()
    buffer.write(f"# manifest_hash={spec_hash} seed={args.seed}\n")
    write_csv(dataset, buffer)
    atomic_write_text(out_dir / "dataset.csv", buffer.getvalue())
    atomic_write_text(
        out_dir / "schema.json",
        canonical_json(
            {
                "label": dataset.schema.label,
                "numeric": list(dataset.schema.numeric),
                "categorical": list(dataset.schema.categorical),
                "manifest_hash": spec_hash,
                "seed": args.seed,
            }
        ),
    )
    print(f"wrote {out_dir / 'dataset.csv'} ({dataset.n_samples} samples)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------


def _partition_payload(result: part_mod.PartitionResult, spec: dict, spec_hash: str) -> dict:
    return {
        "format": "radfed-partition",
        "manifest_hash": spec_hash,
        "seed": result.seed,
        "priors": {
            "mu": spec["mu"],
            "lambda": spec["lambda"],
            "theta": spec["theta"],
            "clients": spec["clients"],
        },
        "c_score": result.c_score,
        "matrix": result.counts.tolist(),
        "class_matrix": result.class_counts.tolist(),
        "configs": [list(u) for u in result.configs] if result.configs else None,
        "clients": [
            {"id": c.client_id, "sample_indices": c.indices.tolist()}
            for c in result.clients
        ],
    }


def write_partition_files(result, spec: dict, out_dir: Path) -> str:
    out_dir.mkdir(parents=True, exist_ok=True)
    spec_hash = content_hash(canonical_json(spec))
    atomic_write_text(
        out_dir / "partition.json",
        canonical_json(_partition_payload(result, spec, spec_hash)),
    )
    buffer = io.StringIO()
    buffer.write(f"# manifest_hash={spec_hash} seed={result.seed}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    n_classes = result.class_counts.shape[1]
    writer.writerow(["client", *[f"class_{k}" for k in range(n_classes)]])
    for cid, row in enumerate(result.class_counts):
        writer.writerow([cid, *[int(v) for v in row]])
    atomic_write_text(out_dir / "counts.csv", buffer.getvalue())
    return spec_hash


def _load_dataset(csv_path: str | Path, schema: DatasetSchema) -> TabularDataset:
    return load_csv(csv_path, schema)


def cmd_partition(args) -> int:
    categorical = tuple(s for s in (args.features or "").split(",") if s)
    with open(args.input, newline="", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                header = next(csv.reader([line]))
                break
        else:
            raise IngestionError(f"{args.input}: empty file")
    if args.label_col not in header:
        raise IngestionError(f"{args.input}: missing column {args.label_col!r}")
    numeric = tuple(
        name for name in header if name != args.label_col and name not in categorical
    )
    schema = DatasetSchema(label=args.label_col, numeric=numeric, categorical=categorical)
    dataset = _load_dataset(args.input, schema)

    priors = part_mod.DirichletPriors(
        mu=args.mu,
        lam=getattr(args, "lambda"),
        theta=args.theta,
        n_clients=args.clients,
        n_classes=dataset.n_classes,
        feature_arities=dataset.feature_arities if args.theta is not None else (),
    )
    result = part_mod.partition_dataset(
        dataset,
        priors,
        seed=args.seed,
        burn_in=args.burn_in,
        steps=args.steps,
        xi=args.xi,
    )
    empty = [c.client_id for c in result.clients if len(c) == 0]
    if empty:
        raise InfeasibleError(
            f"{len(empty)} clients received no samples (ids {empty[:5]}...); "
            "use fewer clients or more data"
        )
    spec = {
        "input": str(args.input),
        "label_col": args.label_col,
        "clients": args.clients,
        "mu": args.mu,
        "lambda": getattr(args, "lambda"),
        "theta": args.theta,
        "features": list(categorical),
        "burn_in": args.burn_in,
        "steps": args.steps,
        "xi": args.xi,
        "seed": args.seed,
    }
    write_partition_files(result, spec, Path(args.out))
    print(
        f"wrote {Path(args.out) / 'partition.json'} "
        f"(clients={args.clients}, c_score={result.c_score:.4f})"
    )
    return EXIT_OK


def load_partition(path: str | Path) -> dict:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw.get("format") != "radfed-partition":
        raise ConfigError(f"{path} is not a partition file")
    raw["assignments"] = [
        np.asarray(entry["sample_indices"], dtype=np.int64) for entry in raw["clients"]
    ]
    return raw


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def load_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"manifest {path} is not valid JSON: {err}") from None
    for key in ("dataset", "partition", "model", "algorithms", "seeds"):
        if key not in manifest:
            raise ConfigError(f"manifest is missing {key!r}")
    if not manifest["seeds"]:
        raise ConfigError("manifest needs at least one seed")
    base = Path(path).parent
    for key in ("csv", "schema"):
        if key in manifest["dataset"]:
            resolved = (base / manifest["dataset"][key]).resolve()
            if not resolved.exists():
                raise ConfigError(f"dataset {key} file {resolved} does not exist")
            manifest["dataset"][key] = str(resolved)
    if "file" in manifest["partition"]:
        resolved = (base / manifest["partition"]["file"]).resolve()
        if not resolved.exists():
            raise ConfigError(f"partition file {resolved} does not exist")
        manifest["partition"]["file"] = str(resolved)
    return manifest


def _build_family(model_spec: dict, n_features: int, n_classes: int) -> ModelFamily:
    kind = model_spec.get("kind", "logistic")
    if kind == "logistic":
        if n_classes != 2:
            raise ConfigError("logistic regression requires binary labels")
        return ModelFamily(kind="logistic", layer_sizes=(n_features,))
    if kind == "mlp":
        hidden = tuple(model_spec.get("hidden", (64, 64)))
        return ModelFamily(kind="mlp", layer_sizes=(n_features, *hidden, n_classes))
    raise ConfigError(f"unknown model kind {kind!r}")


def _build_config(
    manifest: dict, algo: str, spec: dict, seed: int, family: ModelFamily,
    n_train_clients: int,
) -> FederatedConfig:
    training_spec = spec.get("training")
    if not training_spec:
        raise ConfigError(f"algorithm {algo!r} is missing its training block")
    training = TrainingConfig(
        batch_size=training_spec["batch_size"],
        epochs=training_spec["epochs"],
        learning_rate=training_spec["learning_rate"],
        prox_mu=training_spec.get("prox_mu", 0.0),
        seed=seed,
    )
    return FederatedConfig(
        algorithm=algo,
        participation=spec.get("participation", 0.1),
        n_rounds=spec.get("n_rounds", 1),
        training=training,
        family=family,
        n_clients=n_train_clients,
        redistributions=spec.get("redistributions", 1),
        alpha=spec.get("alpha", 0.9),
        prox_mu=spec.get("prox_mu", 0.0),
        l2=manifest["model"].get("l2", 0.0),
        metric=manifest.get("metric", "accuracy"),
        eval_every=spec.get("eval_every", manifest.get("eval_every", 1)),
        seed=seed,
        fedavg_weighted=spec.get("fedavg_weighted", True),
        importance_mode=spec.get("importance_mode", "batch_mean"),
    )


def _prepare_clients(manifest: dict, partition_path: str):
    schema = DatasetSchema.from_json(manifest["dataset"]["schema"])
    dataset = _load_dataset(manifest["dataset"]["csv"], schema)
    part = load_partition(partition_path)
    clients = build_client_datasets(dataset, part["assignments"])
    fold_cfg = manifest.get("folds", {})
    folds = make_folds(
        [c.client_id for c in clients],
        n_folds=fold_cfg.get("n_folds", 5),
        rng=derive_rng(fold_cfg.get("seed", 0), "folds"),
        nested=fold_cfg.get("nested", False),
    )
    return dataset, clients, folds, part


def _standardized_for_fold(manifest: dict, clients, fold: FoldSpec):
    scope = manifest.get("standardization", "global")
    by_id = {c.client_id: c for c in clients}
    train = [by_id[k] for k in fold.train_ids]
    rest = [by_id[k] for k in (*fold.validation_ids, *fold.test_ids)]
    if scope == "global":
        train_std, stats = standardize(train, scope="global")
        rest_std, _ = standardize(rest, scope="global", stats=stats)
        return train_std + rest_std
    train_std, _ = standardize(train, scope="local")
    rest_std, _ = standardize(rest, scope="local")
    return train_std + rest_std


def _rounds_csv(records, manifest_hash: str, seed: int) -> str:
    buffer = io.StringIO()
    buffer.write(f"# manifest_hash={manifest_hash} seed={seed}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["round", "algorithm", "selected", "dl", "val_metric", "val_loss"])
    for rec in records:
        selected = ";".join(",".join(str(k) for k in step) for step in rec.selected)
        dl = ";".join("" if v is None else repr(v) for v in rec.dl_per_step)
        writer.writerow(
            [
                rec.round_index,
                rec.algorithm,
                selected,
                dl,
                _fmt(rec.val_metric),
                _fmt(rec.val_loss),
            ]
        )
    return buffer.getvalue()


def read_rounds_csv(path: Path) -> list[dict]:
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for raw in reader:
            rows.append(
                {
                    "round": int(raw["round"]),
                    "algorithm": raw["algorithm"],
                    "selected": [
                        [int(k) for k in step.split(",") if k]
                        for step in raw["selected"].split(";")
                    ],
                    "dl": [
                        None if v == "" else float(v)
                        for v in raw["dl"].split(";")
                    ],
                    "val_metric": float(raw["val_metric"]) if raw["val_metric"] else None,
                    "val_loss": float(raw["val_loss"]) if raw["val_loss"] else None,
                }
            )
    return rows


def _cell_dir(out_root: Path, algo: str, seed: int, fold_index: int) -> Path:
    return out_root / "cells" / algo / f"seed{seed}_fold{fold_index}"


def _cell_worker(payload: tuple) -> dict:
    """Run one (algorithm, seed, fold) cell and write its outputs."""
    manifest, partition_path, manifest_hash, partition_hash, out_root, algo, seed, fold_index = payload
    out_root = Path(out_root)
    _, clients, folds, _ = _prepare_clients(manifest, partition_path)
    fold = folds[fold_index]
    cell_clients = _standardized_for_fold(manifest, clients, fold)
    n_features = cell_clients[0].features.shape[1]
    n_classes = cell_clients[0].n_classes
    family = _build_family(manifest["model"], n_features, n_classes)
    cfg = _build_config(
        manifest, algo, manifest["algorithms"][algo], seed, family, len(fold.train_ids)
    )

    cell_path = _cell_dir(out_root, algo, seed, fold_index)
    cell_path.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    if manifest.get("save_round_checkpoints", False):
        ckpt_dir = cell_path / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        # run round by round so each aggregated model can be checkpointed
        result = _run_with_round_checkpoints(cfg, cell_clients, fold, ckpt_dir)
    else:
        result = run_experiment(cfg, cell_clients, fold)

    atomic_write_text(
        cell_path / "rounds.csv", _rounds_csv(result.records, manifest_hash, seed)
    )
    save_checkpoint(result.best_state, cell_path / "best.ckpt")
    save_checkpoint(result.final_state, cell_path / "final.ckpt")
    cell_info = {
        "algorithm": algo,
        "seed": seed,
        "fold_index": fold_index,
        "train_ids": list(fold.train_ids),
        "validation_ids": list(fold.validation_ids),
        "test_ids": list(fold.test_ids),
        "best_round": result.best_round,
        "best_val_metric": result.best_val_metric,
        "test_metric": result.test_metric,
        "metric": cfg.metric,
        "manifest_hash": manifest_hash,
        "partition_hash": partition_hash,
        "status": "ok",
    }
    atomic_write_text(cell_path / "cell.json", canonical_json(cell_info))
    cell_info["duration_sec"] = time.perf_counter() - started
    return cell_info


def _run_with_round_checkpoints(cfg, clients, fold, ckpt_dir: Path):
    """run_experiment, saving the aggregated model after every round."""
    from .model import init_model

    by_id = {c.client_id: c for c in clients}
    train_clients = [by_id[k] for k in fold.train_ids]
    result = run_experiment(cfg, clients, fold)
    # replay the deterministic round sequence to materialize checkpoints
    state = init_model(cfg.family, seed=cfg.seed, l2=cfg.l2)
    importance = (
        fedcore.init_importance([c.client_id for c in train_clients])
        if cfg.algorithm == "radfed_is"
        else None
    )
    for t in range(1, cfg.n_rounds + 1):
        state, _, importance = fedcore.run_round(
            state, train_clients, cfg, t, importance=importance
        )
        save_checkpoint(state, ckpt_dir / f"round_{t:04d}.ckpt")
    return result


def cmd_run(args) -> int:
    manifest = load_manifest(args.config)
    if args.partition:
        manifest["partition"] = {"file": str(Path(args.partition).resolve())}
    if args.algorithms:
        wanted = [a for a in args.algorithms.split(",") if a]
        unknown = [a for a in wanted if a not in manifest["algorithms"]]
        if unknown:
            raise ConfigError(f"manifest does not configure algorithms {unknown}")
        manifest["algorithms"] = {a: manifest["algorithms"][a] for a in wanted}
    if args.seed is not None:
        manifest["seeds"] = [args.seed]
    out_root = Path(args.out_dir or manifest.get("out_dir", "runs"))
    out_root.mkdir(parents=True, exist_ok=True)

    manifest_text = canonical_json(manifest)
    manifest_hash = content_hash(manifest_text)
    atomic_write_text(out_root / "manifest.json", manifest_text)

    # materialize the partition once so every cell shares it
    if "file" in manifest["partition"]:
        partition_path = manifest["partition"]["file"]
    else:
        spec = dict(manifest["partition"])
        schema = DatasetSchema.from_json(manifest["dataset"]["schema"])
        dataset = _load_dataset(manifest["dataset"]["csv"], schema)
        priors = part_mod.DirichletPriors(
            mu=spec.get("mu", 1.0),
            lam=spec.get("lambda", 0.1),
            theta=spec.get("theta"),
            n_clients=spec["clients"],
            n_classes=dataset.n_classes,
            feature_arities=dataset.feature_arities if spec.get("theta") else (),
        )
        result = part_mod.partition_dataset(
            dataset,
            priors,
            seed=spec.get("seed", 0),
            burn_in=spec.get("burn_in", 100_000),
            steps=spec.get("steps", 500_000),
            xi=spec.get("xi", 0.002),
        )
        write_partition_files(
            result,
            {
                "clients": spec["clients"],
                "mu": spec.get("mu", 1.0),
                "lambda": spec.get("lambda", 0.1),
                "theta": spec.get("theta"),
                "seed": spec.get("seed", 0),
            },
            out_root,
        )
        partition_path = str(out_root / "partition.json")
    partition_hash = content_hash(Path(partition_path).read_text(encoding="utf-8"))

    _, _, folds, _ = _prepare_clients(manifest, partition_path)
    grid = [
        (manifest, partition_path, manifest_hash, partition_hash, str(out_root),
         algo, seed, fold_index)
        for algo in manifest["algorithms"]
        for seed in manifest["seeds"]
        for fold_index in range(len(folds))
    ]

    workers = int(os.environ.get("RADFED_WORKERS", "1"))
    started = time.perf_counter()
    cells: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell_worker, payload) for payload in grid]
            for payload, future in zip(grid, futures):
                cells.append(_collect_cell(payload, future.result, future))
    else:
        for payload in grid:
            cells.append(_collect_cell(payload, lambda p=payload: _cell_worker(p)))

    aggregates = {}
    for algo in manifest["algorithms"]:
        values = [
            c["test_metric"]
            for c in cells
            if c["algorithm"] == algo and c["status"] == "ok"
            and c["test_metric"] is not None
        ]
        aggregates[algo] = {
            "n_cells": len(values),
            "test_metric_mean": statistics.mean(values) if values else None,
            "test_metric_stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
        }
    failed = sum(1 for c in cells if c["status"] != "ok")
    result_payload = {
        "manifest_hash": manifest_hash,
        "partition_hash": partition_hash,
        "seeds": manifest["seeds"],
        "n_folds": len(folds),
        "cells": [
            {k: v for k, v in c.items() if k != "duration_sec"} for c in cells
        ],
        "aggregates": aggregates,
        "failed_cells": failed,
    }
    atomic_write_text(out_root / "result.json", canonical_json(result_payload))
    atomic_write_text(
        out_root / "run_meta.json",
        canonical_json(
            {
                "wall_clock_sec": time.perf_counter() - started,
                "cell_durations": {
                    f"{c['algorithm']}/seed{c['seed']}_fold{c['fold_index']}":
                        c.get("duration_sec")
                    for c in cells
                },
                "workers": workers,
            }
        ),
    )
    metric_name = manifest.get("metric", "accuracy")
    for algo, agg in aggregates.items():
        mean = agg["test_metric_mean"]
        if mean is None:
            print(f"{algo}: no completed cells")
        else:
            print(f"{algo}: mean test {metric_name} = {mean:.4f} "
                  f"+/- {agg['test_metric_stdev']:.4f} over {agg['n_cells']} cells")
    return EXIT_FAILURE if failed else EXIT_OK


def _collect_cell(payload, runner, future=None) -> dict:
    manifest, _, manifest_hash, partition_hash, out_root, algo, seed, fold_index = payload
    try:
        return runner()
    except RadfedError as err:
        logger.error("cell %s/seed%s_fold%s failed: %s", algo, seed, fold_index, err)
        info = {
            "algorithm": algo,
            "seed": seed,
            "fold_index": fold_index,
            "status": f"failed: {err}",
            "test_metric": None,
            "best_round": None,
            "best_val_metric": None,
            "manifest_hash": manifest_hash,
            "partition_hash": partition_hash,
        }
        cell_path = _cell_dir(Path(out_root), algo, seed, fold_index)
        cell_path.mkdir(parents=True, exist_ok=True)
        atomic_write_text(cell_path / "cell.json", canonical_json(info))
        return info


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def cmd_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    result = json.loads((run_dir / "result.json").read_text(encoding="utf-8"))
    manifest_hash = result["manifest_hash"]
    partition_path = manifest["partition"].get("file", str(run_dir / "partition.json"))

    _, clients, folds, _ = _prepare_clients(manifest, partition_path)
    merged = io.StringIO()
    merged.write(f"# manifest_hash={manifest_hash}\n")
    merged_writer = csv.writer(merged, lineterminator="\n")
    merged_writer.writerow(
        ["algorithm", "seed", "fold", "round", "step", "dl", "dc", "dc_distance"]
    )

    for cell in result["cells"]:
        if cell["status"] != "ok":
            continue
        algo, seed, fold_index = cell["algorithm"], cell["seed"], cell["fold_index"]
        cell_path = _cell_dir(run_dir, algo, seed, fold_index)
        rounds = read_rounds_csv(cell_path / "rounds.csv")
        ckpt_dir = cell_path / "checkpoints"
        missing = [
            r["round"]
            for r in rounds
            if not (ckpt_dir / f"round_{r['round']:04d}.ckpt").exists()
        ]
        if missing:
            raise ConfigError(
                f"cell {algo}/seed{seed}_fold{fold_index} is missing round "
                f"checkpoints {missing}; rerun with save_round_checkpoints true"
            )

        fold = folds[fold_index]
        cell_clients = _standardized_for_fold(manifest, clients, fold)
        by_id = {c.client_id: c for c in cell_clients}
        train_clients = [by_id[k] for k in fold.train_ids]
        family = _build_family(
            manifest["model"], cell_clients[0].features.shape[1],
            cell_clients[0].n_classes,
        )
        cfg = _build_config(
            manifest, algo, manifest["algorithms"][algo], seed, family,
            len(fold.train_ids),
        )
        participants = [
            [k for step in r["selected"] for k in step] for r in rounds
        ]
        central_states = metrics.centralized_reference_run(cfg, train_clients, participants)

        buffer = io.StringIO()
        buffer.write(f"# manifest_hash={manifest_hash} seed={seed}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["round", "step", "dl", "dc", "dc_distance"])
        for r, central in zip(rounds, central_states):
            fed = load_checkpoint(ckpt_dir / f"round_{r['round']:04d}.ckpt")
            dc = metrics.dc_divergence(fed, central)
            dist = metrics.norm_distance(fed, central)
            n_steps = len(r["dl"])
            for s, dl in enumerate(r["dl"], start=1):
                last = s == n_steps
                row = [
                    r["round"], s, _fmt(dl),
                    _fmt(dc if last else None), _fmt(dist if last else None),
                ]
                writer.writerow(row)
                merged_writer.writerow([algo, seed, fold_index, *row])
        atomic_write_text(cell_path / "divergence.csv", buffer.getvalue())

    atomic_write_text(run_dir / "divergence.csv", merged.getvalue())
    print(f"wrote {run_dir / 'divergence.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radfed",
        description="Deterministic federated-learning simulation with "
        "aggregation-delayed training and non-IID partitioning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic Gaussian-mixture dataset")
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--features", type=int, default=2)
    gen.add_argument("--separation", type=float, default=3.0)
    gen.add_argument("--samples", type=int, default=10_000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", required=True)
    gen.set_defaults(func=cmd_gen)

    part = sub.add_parser("partition", help="partition a CSV dataset into clients")
    part.add_argument("--input", required=True)
    part.add_argument("--label-col", required=True)
    part.add_argument("--clients", type=int, required=True)
    part.add_argument("--mu", type=float, default=1.0)
    part.add_argument("--lambda", type=float, default=0.1, dest="lambda")
    part.add_argument("--theta", type=float, default=None)
    part.add_argument("--features", default="",
                      help="comma-separated categorical feature columns")
    part.add_argument("--burn-in", type=int, default=100_000)
    part.add_argument("--steps", type=int, default=500_000)
    part.add_argument("--xi", type=float, default=0.002)
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--out", required=True)
    part.set_defaults(func=cmd_partition)

    run = sub.add_parser("run", help="run a seeds x folds experiment grid")
    run.add_argument("--config", required=True)
    run.add_argument("--partition", default=None)
    run.add_argument("--algorithms", default=None,
                     help="comma-separated subset of the manifest's algorithms")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out-dir", default=None)
    run.set_defaults(func=cmd_run)

    met = sub.add_parser("metrics", help="emit divergence series for a run")
    met.add_argument("--run-dir", required=True)
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ParameterError, IngestionError, ConsistencyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RadfedError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
