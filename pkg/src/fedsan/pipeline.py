"""Experiment orchestration: one run end-to-end, and sweeps over config overrides."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .attacks import (
    AttackKind,
    AttackPlan,
    Backdoor,
    LabelFlip,
    TriggerSpec,
    adversarial_client_ids,
    build_flip_testset,
    build_triggered_testset,
    poison_clients,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    config_to_dict,
    read_document,
    resolve_output_dir,
)
from .dataset import ClientDataset, Dataset, PartitionSpec, generate_synthetic, load_idx, partition
from .features import ProjectionSpec
from .fltrain.federation import EvaluationSets, RunHistory, run_federation
from .metrics import MetricsReport, sanitization_quality
from .sanitize import DefenseSettings
from .storage import record_run

LOGGER = logging.getLogger(__name__)

HISTORY_HEADER = ("round", "accuracy", "asr", "wall_ms")
SWEEP_HEADER = (
    "run",
    "overrides",
    "accuracy",
    "asr",
    "sanitization_precision",
    "sanitization_recall",
    "removed_count",
    "config_hash",
)


class SweepError(RuntimeError):
    """A sweep run failed; ``index`` and ``overrides`` identify it."""

    def __init__(self, index: int, overrides: Mapping[str, Any], reason: str) -> None:
        self.index = index
        self.overrides = dict(overrides)
        super().__init__(f"sweep run {index} with overrides {_overrides_text(overrides)} failed: {reason}")


def format_float(value: Optional[float]) -> str:
    """Fixed 9-significant-digit CSV formatting; ``None`` is an empty cell, NaN is ``nan``."""

    if value is None:
        return ""
    return f"{float(value):.9g}"


def json_safe(value: Any) -> Any:
    """Replace NaN/inf floats with ``None`` (JSON null), recursing through containers."""

    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {key: json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    return value


def _overrides_text(overrides: Mapping[str, Any]) -> str:
    return json.dumps(dict(overrides), sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    output_dir: Path
    history: RunHistory
    report: MetricsReport
    summary: Dict[str, Any]
    poisoned_clients: List[ClientDataset] = field(default_factory=list)
    adversarial_clients: List[int] = field(default_factory=list)


class Experiment:
    """Builds every component of one run from an ``ExperimentConfig`` and executes it."""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config

    # -- data ---------------------------------------------------------------

    def load_data(self) -> Tuple[Dataset, Dataset]:
        source = self.config.dataset
        if source.source == "synthetic":
            syn = source.synthetic
            seed = self.config.seed_for("data")
            train = generate_synthetic(syn.num_classes, syn.per_class, syn.dim, syn.spread, syn.center_gap, seed)
            test = generate_synthetic(
                syn.num_classes, syn.test_per_class, syn.dim, syn.spread, syn.center_gap, (seed, 1)
            )
            LOGGER.info("Generated %d train / %d test synthetic samples", len(train), len(test))
            return train, test
        mnist = source.mnist
        classes = self.config.num_classes()
        train = load_idx(mnist.train_images, mnist.train_labels, classes).head(mnist.train_limit)
        test = load_idx(mnist.test_images, mnist.test_labels, classes).head(mnist.test_limit)
        LOGGER.info("Using %d train / %d test MNIST samples", len(train), len(test))
        return train, test

    def partition(self, train: Dataset) -> List[ClientDataset]:
        part = self.config.partition
        spec = PartitionSpec(
            num_clients=part.num_clients,
            scheme=part.scheme,
            alpha=part.alpha,
            seed=self.config.seed_for("partition"),
        )
        clients = partition(train, spec)
        LOGGER.debug("Client sizes: %s", [len(c) for c in clients])
        return clients

    # -- attack -------------------------------------------------------------

    def attack_plan(self, image_shape: Tuple[int, int]) -> Optional[AttackPlan]:
        attack = self.config.attack
        if attack.kind == "none":
            return None
        kind = AttackKind(attack.kind)
        flip = backdoor = None
        if kind is not AttackKind.BACKDOOR:
            flip = LabelFlip(attack.label_flip.source, attack.label_flip.target)
        if kind is not AttackKind.LABEL_FLIP:
            trigger = attack.backdoor.trigger
            backdoor = Backdoor(
                trigger=TriggerSpec.rect(image_shape, trigger.row, trigger.col, trigger.height, trigger.width, trigger.value),
                target=attack.backdoor.target,
            )
        return AttackPlan(
            kind=kind,
            poison_ratio=attack.poison_ratio,
            adversary_fraction=attack.adversary_fraction,
            seed=self.config.seed_for("attack"),
            flip=flip,
            backdoor=backdoor,
            hybrid_flip_share=attack.hybrid_flip_share,
        )

    @staticmethod
    def evaluation_sets(test: Dataset, plan: Optional[AttackPlan]) -> EvaluationSets:
        sets: Dict[str, Tuple[Dataset, int]] = {}
        if plan is not None and plan.flip is not None:
            sets["label_flip"] = (build_flip_testset(test, plan.flip.source), plan.flip.target)
        if plan is not None and plan.backdoor is not None:
            sets["backdoor"] = (
                build_triggered_testset(test, plan.backdoor.trigger, plan.backdoor.target),
                plan.backdoor.target,
            )
        return EvaluationSets(test=test, asr_sets=sets)

    # -- defense ------------------------------------------------------------

    def defense_settings(self, dim: int) -> Optional[DefenseSettings]:
        if not self.config.defense.enabled:
            return None
        proj = self.config.projection
        clus = self.config.clustering
        return DefenseSettings(
            projection=ProjectionSpec(
                kind=proj.kind,
                in_dim=dim,
                out_dim=proj.out_dim if proj.kind == "random_linear" else dim,
                seed=self.config.seed_for("projection"),
            ),
            k=clus.k if clus.k is not None else self.config.num_classes(),
            seed=self.config.seed_for("clustering"),
            local_k=clus.local_k,
            local_k_from_labels=clus.local_k_from_labels,
            restarts=clus.restarts,
            max_iters=clus.max_iters,
            m_const=clus.m_const,
        )

    def resolved_config(self) -> ExperimentConfig:
        """The config with the cluster counts it leaves implicit filled in."""

        clus = self.config.clustering
        k = clus.k if clus.k is not None else self.config.num_classes()
        local_k = clus.local_k
        if local_k is None and not clus.local_k_from_labels:
            local_k = k
        return dataclasses.replace(self.config, clustering=dataclasses.replace(clus, k=k, local_k=local_k))

    # -- run ----------------------------------------------------------------

    def run(self, output_dir: Path) -> ExperimentResult:
        cfg = self.config
        train, test = self.load_data()
        clients = self.partition(train)
        plan = self.attack_plan(train.image_shape)
        adversaries: List[int] = []
        if plan is not None:
            clients = poison_clients(clients, plan)
            adversaries = adversarial_client_ids(len(clients), plan)
        evaluation = self.evaluation_sets(test, plan)
        history = run_federation(
            clients,
            evaluation,
            cfg.training,
            seed=cfg.seed_for("training"),
            defense=self.defense_settings(train.dim),
            workers=cfg.workers,
            record_wall_time=cfg.record_wall_time,
        )
        report = build_report(history, clients)
        resolved = self.resolved_config()
        effective = dataclasses.replace(resolved, output_dir=str(output_dir))
        summary = {
            "config": config_to_dict(effective),
            "config_hash": config_hash(dataclasses.replace(resolved, output_dir=None)),
            "metrics": dataclasses.asdict(report),
            "rounds": len(history.rows) - 1,
            "poisoned_count": int(sum(int(c.poison_flags.sum()) for c in clients)),
            "adversarial_clients": adversaries,
            "sanitization": history.sanitization.to_dict() if history.sanitization is not None else None,
        }
        return ExperimentResult(
            config=effective,
            output_dir=output_dir,
            history=history,
            report=report,
            summary=summary,
            poisoned_clients=clients,
            adversarial_clients=adversaries,
        )


def build_report(history: RunHistory, poisoned: Sequence[ClientDataset]) -> MetricsReport:
    final = history.final
    precision = recall = None
    removed_count = 0
    if history.sanitization is not None:
        removed = history.sanitization.removed_by_client()
        empty = np.zeros(0, dtype=np.int64)
        precision, recall = sanitization_quality(
            [removed.get(c.client_id, empty) for c in poisoned], [c.poison_flags for c in poisoned]
        )
        removed_count = history.sanitization.removed_count
    return MetricsReport(
        accuracy=final.accuracy,
        attack_success_rate=final.asr,
        asr_components=dict(final.asr_components),
        sanitization_precision=precision,
        sanitization_recall=recall,
        removed_count=removed_count,
        accuracy_series=[row.accuracy for row in history.rows],
        asr_series=[row.asr for row in history.rows],
    )


def history_rows(history: RunHistory) -> List[Dict[str, Any]]:
    return [
        {"round": row.round, "accuracy": row.accuracy, "asr": row.asr, "wall_ms": row.wall_ms}
        for row in history.rows
    ]


def write_history(path: Path, history: RunHistory) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in history.rows:
            writer.writerow([row.round, format_float(row.accuracy), format_float(row.asr), format_float(row.wall_ms)])


def write_summary(path: Path, summary: Mapping[str, Any]) -> None:
    path.write_text(json.dumps(json_safe(dict(summary)), sort_keys=True, indent=2, allow_nan=False) + "\n")


def run_experiment(
    cfg: ExperimentConfig, output_dir: Optional[str | Path] = None, ledger=None
) -> ExperimentResult:
    """Execute one run and write ``history.csv`` and ``summary.json``.

    On failure the files this run wrote (and the directory, if it created
    it) are removed before the error propagates.
    """

    target = resolve_output_dir(cfg, output_dir)
    created = not target.exists()
    written: List[Path] = []
    try:
        result = Experiment(cfg).run(target)
        target.mkdir(parents=True, exist_ok=True)
        history_path, summary_path = target / "history.csv", target / "summary.json"
        written += [history_path, summary_path]
        write_history(history_path, result.history)
        write_summary(summary_path, result.summary)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        if created and target.exists():
            shutil.rmtree(target, ignore_errors=True)
        raise
    LOGGER.info("Wrote %s and %s", history_path, summary_path)
    if ledger is not None:
        run_id = record_run(ledger, json_safe(result.summary), json_safe(history_rows(result.history)))
        LOGGER.info("Recorded run %d in the ledger", run_id)
    return result


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def expand_overrides(document: Any) -> List[Dict[str, Any]]:
    """Normalise an overrides document into a list of dotted-key mappings.

    Accepts ``None``, a list of objects, or ``{"matrix": {key: [values...]}}``
    which expands to the cartesian product in key order (last key fastest).
    """

    if document is None:
        return []
    if isinstance(document, Mapping):
        if set(document) != {"matrix"} or not isinstance(document["matrix"], Mapping):
            raise ConfigError(['overrides: expected a list or an object with a single "matrix" key'])
        matrix = document["matrix"]
        keys = list(matrix)
        for key in keys:
            if not isinstance(matrix[key], list) or not matrix[key]:
                raise ConfigError([f"overrides.matrix.{key}: expected a non-empty list of values"])
        return [dict(zip(keys, combo)) for combo in itertools.product(*(matrix[key] for key in keys))]
    if not isinstance(document, list):
        raise ConfigError([f"overrides: expected a list, got {type(document).__name__}"])
    for index, entry in enumerate(document):
        if not isinstance(entry, Mapping):
            raise ConfigError([f"overrides[{index}]: expected an object, got {type(entry).__name__}"])
    return [dict(entry) for entry in document]


def load_overrides(path: str | Path) -> List[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: no such file"])
    return expand_overrides(read_document(path))


@dataclass
class SweepRun:
    index: int
    overrides: Dict[str, Any]
    config: ExperimentConfig
    result: Optional[ExperimentResult] = None


def plan_sweep(
    base: ExperimentConfig, overrides: Sequence[Mapping[str, Any]], root: Path, fixed_seed: bool = False
) -> List[SweepRun]:
    """One validated config per override; run ``i`` uses ``master_seed + i`` unless the seed is fixed or overridden."""

    entries = list(overrides) or [{}]
    runs: List[SweepRun] = []
    for index, entry in enumerate(entries):
        data = config_to_dict(base)
        try:
            data = apply_overrides(data, entry)
            if "master_seed" not in entry and not fixed_seed:
                data["master_seed"] = base.master_seed + index
            data["output_dir"] = str(root / f"run_{index:03d}")
            cfg = config_from_dict(data)
        except ConfigError as exc:
            raise SweepError(index, entry, str(exc)) from exc
        runs.append(SweepRun(index=index, overrides=dict(entry), config=cfg))
    return runs


def write_sweep_csv(path: Path, runs: Sequence[SweepRun]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for run in runs:
            report = run.result.report
            writer.writerow(
                [
                    run.index,
                    _overrides_text(run.overrides),
                    format_float(report.accuracy),
                    format_float(report.attack_success_rate),
                    format_float(report.sanitization_precision),
                    format_float(report.sanitization_recall),
                    report.removed_count,
                    run.result.summary["config_hash"],
                ]
            )


def sweep(
    base: ExperimentConfig,
    overrides: Sequence[Mapping[str, Any]],
    output_dir: Optional[str | Path] = None,
    parallel: bool = False,
    fixed_seed: bool = False,
    ledger=None,
    max_workers: Optional[int] = None,
) -> List[SweepRun]:
    """Run every override against ``base`` and write ``sweep.csv`` in run order.

    The first failing run aborts the sweep with a ``SweepError`` naming its
    override. Ledger rows are written after all runs finish.
    """

    root = resolve_output_dir(base, output_dir)
    runs = plan_sweep(base, overrides, root, fixed_seed)
    LOGGER.info("Sweep of %d runs into %s", len(runs), root)

    def execute(run: SweepRun) -> SweepRun:
        try:
            run.result = run_experiment(run.config)
        except Exception as exc:
            raise SweepError(run.index, run.overrides, str(exc)) from exc
        return run

    if parallel and len(runs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(execute, runs))
    else:
        for run in runs:
            execute(run)

    root.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(root / "sweep.csv", runs)
    LOGGER.info("Wrote %s", root / "sweep.csv")
    if ledger is not None:
        for run in runs:
            record_run(ledger, json_safe(run.result.summary), json_safe(history_rows(run.result.history)))
    return runs


__all__ = [
    "HISTORY_HEADER",
    "SWEEP_HEADER",
    "SweepError",
    "Experiment",
    "ExperimentResult",
    "SweepRun",
    "build_report",
    "expand_overrides",
    "format_float",
    "json_safe",
    "load_overrides",
    "plan_sweep",
    "run_experiment",
    "sweep",
    "write_history",
    "write_summary",
]
