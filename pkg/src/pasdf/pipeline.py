"""End-to-end commands behind the command line.

Each command reads what the previous one wrote under the configured
output directory, so prepare -> train -> detect/repair chains through
files rather than shared state, and eval recomputes metrics from
detect's artifacts without touching the model again.  Every artifact is
deterministic for a fixed config and seed: sorted case order, sorted
JSON keys, no timestamps.

The optional labels manifest is a JSON document
``{"cases": {"<id>": {"object": 0 or 1, "anomalous_points": [...],
"reference": "clean.ply"}}}`` keyed by input file stem;
``anomalous_points`` lists anomalous point indices for point-level
metrics and ``reference`` names a clean cloud (relative paths resolve
against the manifest's directory, and the cloud lives in the canonical
frame) for repair quality.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bench import BenchResult, run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .encoding import EncodingConfig
from .errors import (
    CheckpointMismatchError,
    InvalidInputError,
    PasdfError,
    UndefinedMetricError,
)
from .geometry import PointCloud, apply_points, estimate_normals
from .mesh import NormalizationRecord, TriMesh
from .meshio import PlyContent, read_ply, write_cloud_ply, write_obj
from .network import SdfModel
from .queries import QuerySet, label_queries, read_samples, sample_queries_from_cloud, write_samples
from .registration import pose_align
from .repair import repair, repair_quality
from .rng import derive_seed
from .scoring import auroc, score_points
from .training import train_model

log = logging.getLogger(__name__)

SAMPLES_FILE = "samples.bin"
CANONICAL_FILE = "canonical.ply"
PREPARE_FILE = "prepare.json"
CHECKPOINT_FILE = "model.ckpt"
LOSS_HISTORY_FILE = "loss_history.csv"
DETECT_DIR = "detect"
REPAIR_DIR = "repair"
RESULTS_FILE = "results.json"
EVAL_FILE = "eval.json"

_NORMALS_K = 16


@dataclass(frozen=True)
class PrepareSummary:
    samples_path: Path
    canonical_path: Path
    metadata_path: Path
    canonical_id: str
    train_ids: tuple[str, ...]
    n_records: int


@dataclass(frozen=True)
class TrainSummary:
    checkpoint_path: Path
    history_path: Path
    epochs_run: int
    final_loss: float


@dataclass(frozen=True)
class DetectCase:
    case_id: str
    object_score: float
    converged: bool
    n_points: int
    score_map: str


@dataclass(frozen=True)
class DetectSummary:
    results_path: Path
    cases: tuple[DetectCase, ...]
    o_auroc: float | None
    p_auroc: float | None


@dataclass(frozen=True)
class RepairCase:
    case_id: str
    failed: bool
    error: str | None
    converged: bool | None
    cloud_file: str | None
    mesh_file: str | None
    chamfer: float | None
    emd: float | None


@dataclass(frozen=True)
class RepairSummary:
    results_path: Path
    cases: tuple[RepairCase, ...]


@dataclass(frozen=True)
class EvalSummary:
    results_path: Path
    o_auroc: float
    p_auroc: float | None
    n_cases: int


def cmd_prepare(config: RunConfig, canonical_id: str | None = None) -> PrepareSummary:
    """Turn raw training clouds into one pooled, labelled sample file.

    The canonical cloud (first sorted id unless named explicitly) keeps
    its pose; every other training cloud is aligned onto it, and all of
    them are normalized with a single shared record so the pooled
    queries live in one frame.
    """
    files = _scan_clouds(config.io.train_dir)
    if not files:
        raise InvalidInputError(
            f"no training clouds (*.ply) in {config.io.train_dir}"
        )
    ids = [path.stem for path in files]
    if canonical_id is None:
        canonical_id = ids[0]
    elif canonical_id not in ids:
        raise InvalidInputError(
            f"canonical id {canonical_id!r} is not a training cloud; have {ids}"
        )

    clouds: dict[str, PointCloud] = {}
    for case_id, path in zip(ids, files):
        cloud = _cloud_from_ply(read_ply(path))
        if cloud.normals is None:
            cloud = _outward_normals(cloud)
        clouds[case_id] = cloud

    prepare_seed = derive_seed(config.seed, "prepare")
    target = clouds[canonical_id]
    aligned: dict[str, PointCloud] = {canonical_id: target}
    alignment_meta: dict[str, dict] = {}
    for case_id in ids:
        if case_id == canonical_id:
            continue
        result = pose_align(
            clouds[case_id],
            target,
            voxel_size=config.align.voxel_size,
            chamfer_threshold=config.align.chamfer_threshold,
            threshold_step=config.align.threshold_step,
            max_rounds=config.align.max_rounds,
            seed=derive_seed(prepare_seed, f"align-{case_id}"),
        )
        if not result.converged:
            log.warning(
                "training cloud %s did not meet the alignment threshold "
                "(chamfer %.6f); keeping its best pose",
                case_id,
                result.chamfer,
            )
        aligned[case_id] = result.aligned
        alignment_meta[case_id] = {
            "converged": result.converged,
            "chamfer": result.chamfer,
            "rounds": result.rounds,
        }

    # One record over the union keeps every aligned cloud inside the
    # unit cube; for a single training cloud this is its own bbox.
    lower = np.min([aligned[i].points.min(axis=0) for i in ids], axis=0)
    upper = np.max([aligned[i].points.max(axis=0) for i in ids], axis=0)
    record = _record_for_bounds(lower, upper)

    position_blocks: list[np.ndarray] = []
    tier_blocks: list[np.ndarray] = []
    for case_id in ids:
        normalized = PointCloud(
            record.normalize(aligned[case_id].points), aligned[case_id].normals
        )
        queries, _ = sample_queries_from_cloud(
            normalized, config.counts, derive_seed(prepare_seed, f"queries-{case_id}")
        )
        position_blocks.append(queries.positions)
        tier_blocks.append(queries.tiers)
    pooled = QuerySet(np.vstack(position_blocks), np.concatenate(tier_blocks))
    union = PointCloud(
        np.vstack([record.normalize(aligned[i].points) for i in ids]),
        np.vstack([aligned[i].normals for i in ids]),
    )
    labelled = label_queries(pooled, union)

    out_dir = Path(config.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = {
        "canonical_id": canonical_id,
        "canonical_file": CANONICAL_FILE,
        "samples_file": SAMPLES_FILE,
        "record": record.to_dict(),
        "train_ids": ids,
        "alignment": alignment_meta,
        "total_records": len(labelled),
        "seed": config.seed,
    }
    samples_path = out_dir / SAMPLES_FILE
    write_samples(samples_path, labelled, metadata)
    canonical_path = out_dir / CANONICAL_FILE
    write_cloud_ply(canonical_path, target)
    metadata_path = out_dir / PREPARE_FILE
    _write_json(metadata_path, metadata)
    return PrepareSummary(
        samples_path=samples_path,
        canonical_path=canonical_path,
        metadata_path=metadata_path,
        canonical_id=canonical_id,
        train_ids=tuple(ids),
        n_records=len(labelled),
    )


def cmd_train(config: RunConfig) -> TrainSummary:
    """Fit the field to the prepared samples and write the checkpoint."""
    out_dir = Path(config.io.out_dir)
    queries, _meta = read_samples(out_dir / SAMPLES_FILE)
    train_config = replace(config.training, seed=derive_seed(config.seed, "train"))
    trained = train_model(queries, train_config, config.encoding, config.network)

    checkpoint_path = out_dir / CHECKPOINT_FILE
    save_checkpoint(
        checkpoint_path,
        trained.model,
        encoding=config.encoding,
        metadata={
            "epochs_run": len(trained.loss_history),
            "final_loss": trained.loss_history[-1] if trained.loss_history else None,
            "n_records": len(queries),
        },
    )
    history_path = out_dir / LOSS_HISTORY_FILE
    with open(history_path, "w", encoding="ascii") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(trained.loss_history):
            fh.write(f"{epoch},{loss!r}\n")
    return TrainSummary(
        checkpoint_path=checkpoint_path,
        history_path=history_path,
        epochs_run=len(trained.loss_history),
        final_loss=trained.final_loss,
    )


def cmd_detect(
    config: RunConfig, inputs: Sequence[str | Path] | None = None
) -> DetectSummary:
    """Score test clouds against the trained field.

    Each input gets a score-map PLY (the cloud in its original pose
    with per-point scores) and a row in the results JSON; when a labels
    manifest covers the inputs, dataset AUROCs are attached.
    """
    model, encoding, canonical, record = _load_model_artifacts(config)
    paths = _resolve_inputs(inputs, config.io.test_dir)
    labels = _read_labels(config.io.labels) if config.io.labels else None

    detect_dir = Path(config.io.out_dir) / DETECT_DIR
    detect_dir.mkdir(parents=True, exist_ok=True)
    cases: list[DetectCase] = []
    score_vectors: dict[str, np.ndarray] = {}
    if not paths:
        log.warning("no test clouds to detect in %s", config.io.test_dir)
    for path in paths:
        case_id = path.stem
        cloud = _cloud_from_ply(read_ply(path))
        report = score_points(
            model,
            encoding,
            cloud,
            canonical,
            record,
            seed=derive_seed(config.seed, f"detect-{case_id}"),
            align=True,
            voxel_size=config.align.voxel_size,
            chamfer_threshold=config.align.chamfer_threshold,
            threshold_step=config.align.threshold_step,
            max_rounds=config.align.max_rounds,
        ).with_object_score(config.scoring.top_k)
        score_map = f"{case_id}_scores.ply"
        write_cloud_ply(detect_dir / score_map, cloud, scores=report.per_point_scores)
        score_vectors[case_id] = report.per_point_scores
        cases.append(
            DetectCase(
                case_id=case_id,
                object_score=float(report.object_score),
                converged=report.converged,
                n_points=len(cloud),
                score_map=score_map,
            )
        )

    o_auroc = p_auroc = None
    if labels is not None and cases:
        o_auroc, p_auroc = _dataset_metrics(cases, score_vectors, labels, strict=False)
    results_path = detect_dir / RESULTS_FILE
    _write_json(
        results_path,
        {
            "cases": [
                {
                    "id": case.case_id,
                    "object_score": case.object_score,
                    "converged": case.converged,
                    "n_points": case.n_points,
                    "score_map": case.score_map,
                }
                for case in cases
            ],
            "o_auroc": o_auroc,
            "p_auroc": p_auroc,
        },
    )
    return DetectSummary(
        results_path=results_path,
        cases=tuple(cases),
        o_auroc=o_auroc,
        p_auroc=p_auroc,
    )


def cmd_repair(
    config: RunConfig, inputs: Sequence[str | Path] | None = None
) -> RepairSummary:
    """Reconstruct a clean stand-in for each test cloud.

    A failed repair marks its row and the batch continues.  Repaired
    clouds are written in the input's own pose; quality against a
    reference from the labels manifest is measured in the canonical
    frame, where the reference lives.
    """
    model, encoding, canonical, record = _load_model_artifacts(config)
    paths = _resolve_inputs(inputs, config.io.test_dir)
    labels = _read_labels(config.io.labels) if config.io.labels else None
    labels_root = Path(config.io.labels).parent if config.io.labels else None

    repair_dir = Path(config.io.out_dir) / REPAIR_DIR
    repair_dir.mkdir(parents=True, exist_ok=True)
    cases: list[RepairCase] = []
    if not paths:
        log.warning("no test clouds to repair in %s", config.io.test_dir)
    for path in paths:
        case_id = path.stem
        cloud = _cloud_from_ply(read_ply(path))
        try:
            result = repair(
                cloud,
                model,
                encoding,
                canonical,
                record,
                seed=derive_seed(config.seed, f"repair-{case_id}"),
                resolution=config.grid.resolution,
                n_points=config.repair.n_points,
                align=True,
                voxel_size=config.align.voxel_size,
                chamfer_threshold=config.align.chamfer_threshold,
                threshold_step=config.align.threshold_step,
                max_rounds=config.align.max_rounds,
            )
        except PasdfError as error:
            log.warning("repair of %s failed: %s", case_id, error)
            cases.append(
                RepairCase(
                    case_id=case_id,
                    failed=True,
                    error=str(error),
                    converged=None,
                    cloud_file=None,
                    mesh_file=None,
                    chamfer=None,
                    emd=None,
                )
            )
            continue

        cloud_file = f"{case_id}_repaired.ply"
        mesh_file = f"{case_id}_repaired.obj"
        write_cloud_ply(repair_dir / cloud_file, result.in_input_frame())
        back = result.transform.inverse()
        write_obj(
            repair_dir / mesh_file,
            TriMesh(apply_points(back, result.mesh.vertices), result.mesh.faces),
        )
        chamfer = emd = None
        entry = labels.get(case_id) if labels else None
        if entry and entry.get("reference"):
            reference_path = Path(entry["reference"])
            if not reference_path.is_absolute():
                reference_path = labels_root / reference_path
            reference = _cloud_from_ply(read_ply(reference_path))
            quality = repair_quality(
                result.repaired,
                reference,
                seed=derive_seed(config.seed, f"quality-{case_id}"),
                emd_subsample=config.repair.emd_subsample,
            )
            chamfer, emd = quality.chamfer, quality.emd
        cases.append(
            RepairCase(
                case_id=case_id,
                failed=False,
                error=None,
                converged=result.converged,
                cloud_file=cloud_file,
                mesh_file=mesh_file,
                chamfer=chamfer,
                emd=emd,
            )
        )

    results_path = repair_dir / RESULTS_FILE
    _write_json(
        results_path,
        {
            "cases": [
                {
                    "id": case.case_id,
                    "failed": case.failed,
                    "error": case.error,
                    "converged": case.converged,
                    "cloud": case.cloud_file,
                    "mesh": case.mesh_file,
                    "chamfer": case.chamfer,
                    "emd": case.emd,
                }
                for case in cases
            ]
        },
    )
    return RepairSummary(results_path=results_path, cases=tuple(cases))


def cmd_eval(config: RunConfig) -> EvalSummary:
    """Recompute dataset metrics from detect's artifacts.

    Object scores come from the results JSON and per-point scores from
    the score-map PLYs, so this never loads the model; a labels
    manifest is required and must cover both classes.
    """
    if config.io.labels is None:
        raise InvalidInputError("evaluation requires a labels manifest (io.labels)")
    labels = _read_labels(config.io.labels)
    detect_dir = Path(config.io.out_dir) / DETECT_DIR
    results = _read_json(detect_dir / RESULTS_FILE)

    object_scores: list[float] = []
    object_labels: list[int] = []
    pooled_scores: list[np.ndarray] = []
    pooled_labels: list[np.ndarray] = []
    n_cases = 0
    for row in results["cases"]:
        entry = labels.get(row["id"])
        if entry is None or "object" not in entry:
            continue
        n_cases += 1
        object_scores.append(float(row["object_score"]))
        object_labels.append(int(entry["object"]))
        points = entry.get("anomalous_points")
        if points is None:
            continue
        content = read_ply(detect_dir / row["score_map"])
        if content.scores is None:
            raise InvalidInputError(
                f"{row['score_map']}: score map carries no anomaly scores"
            )
        scores = content.scores.astype(np.float64)
        marks = np.zeros(len(scores), dtype=np.int64)
        index = np.asarray(points, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= len(scores)):
            raise InvalidInputError(
                f"{row['id']}: anomalous point index out of range"
            )
        marks[index] = 1
        pooled_scores.append(scores)
        pooled_labels.append(marks)
    if not object_labels:
        raise InvalidInputError("labels manifest covers none of the detected cases")

    o_auroc = auroc(np.asarray(object_scores), np.asarray(object_labels))
    p_auroc = None
    if pooled_labels:
        p_auroc = auroc(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
    results_path = Path(config.io.out_dir) / EVAL_FILE
    _write_json(
        results_path,
        {"o_auroc": o_auroc, "p_auroc": p_auroc, "n_cases": n_cases},
    )
    return EvalSummary(
        results_path=results_path, o_auroc=o_auroc, p_auroc=p_auroc, n_cases=n_cases
    )


def cmd_bench(config: RunConfig) -> BenchResult:
    """Run the synthetic benchmark, writing its artifacts to out_dir."""
    out_dir = Path(config.io.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return run_bench(config, out_dir=out_dir)


def _dataset_metrics(
    cases: Sequence[DetectCase],
    score_vectors: dict[str, np.ndarray],
    labels: dict[str, dict],
    strict: bool,
) -> tuple[float | None, float | None]:
    object_scores: list[float] = []
    object_labels: list[int] = []
    pooled_scores: list[np.ndarray] = []
    pooled_labels: list[np.ndarray] = []
    for case in cases:
        entry = labels.get(case.case_id)
        if entry is None or "object" not in entry:
            continue
        object_scores.append(case.object_score)
        object_labels.append(int(entry["object"]))
        points = entry.get("anomalous_points")
        if points is None:
            continue
        scores = score_vectors[case.case_id]
        marks = np.zeros(len(scores), dtype=np.int64)
        index = np.asarray(points, dtype=np.int64)
        if index.size and (index.min() < 0 or index.max() >= len(scores)):
            raise InvalidInputError(
                f"{case.case_id}: anomalous point index out of range"
            )
        marks[index] = 1
        pooled_scores.append(np.asarray(scores, dtype=np.float64))
        pooled_labels.append(marks)

    o_auroc = p_auroc = None
    if object_labels:
        try:
            o_auroc = auroc(np.asarray(object_scores), np.asarray(object_labels))
        except UndefinedMetricError as error:
            if strict:
                raise
            log.warning("object AUROC left out: %s", error)
    if pooled_labels:
        try:
            p_auroc = auroc(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
        except UndefinedMetricError as error:
            if strict:
                raise
            log.warning("point AUROC left out: %s", error)
    return o_auroc, p_auroc


def _load_model_artifacts(
    config: RunConfig,
) -> tuple[SdfModel, EncodingConfig, PointCloud, NormalizationRecord]:
    out_dir = Path(config.io.out_dir)
    checkpoint_path = out_dir / CHECKPOINT_FILE
    if not checkpoint_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint_path}")
    model, encoding, _meta = load_checkpoint(checkpoint_path)
    if encoding != config.encoding:
        raise CheckpointMismatchError(
            f"checkpoint encoding {encoding} does not match configured {config.encoding}"
        )
    if model.config != config.network:
        raise CheckpointMismatchError(
            f"checkpoint network {model.config} does not match configured {config.network}"
        )
    prepare_meta = _read_json(out_dir / PREPARE_FILE)
    record = NormalizationRecord.from_dict(prepare_meta["record"])
    canonical = _cloud_from_ply(read_ply(out_dir / CANONICAL_FILE))
    return model, encoding, canonical, record


def _resolve_inputs(
    inputs: Sequence[str | Path] | None, directory: str | Path
) -> list[Path]:
    if inputs is None:
        return _scan_clouds(directory)
    paths = [Path(p) for p in inputs]
    for path in paths:
        if not path.is_file():
            raise FileNotFoundError(f"input cloud not found: {path}")
    return paths


def _scan_clouds(directory: str | Path) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"cloud directory not found: {root}")
    return sorted(root.glob("*.ply"))


def _cloud_from_ply(content: PlyContent) -> PointCloud:
    return PointCloud(content.points, content.normals)


def _outward_normals(cloud: PointCloud) -> PointCloud:
    """Estimated normals oriented away from the centroid."""
    centroid = cloud.points.mean(axis=0)
    oriented, degenerate = estimate_normals(cloud, _NORMALS_K, centroid)
    if degenerate:
        log.warning("%d points had degenerate normal neighbourhoods", degenerate)
    return PointCloud(cloud.points, -oriented.normals)


def _record_for_bounds(lower: np.ndarray, upper: np.ndarray) -> NormalizationRecord:
    # Mirrors mesh normalization: min corner to the origin, one uniform
    # scale so the longest axis spans exactly [0, 1].
    extent = float((upper - lower).max())
    if extent <= 0.0:
        raise InvalidInputError("training clouds span no volume")
    return NormalizationRecord(scale=extent, offset=tuple(float(v) for v in lower))


def _read_labels(path: str | Path) -> dict[str, dict]:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"labels manifest not found: {source}")
    try:
        with open(source, encoding="utf-8") as fh:
            document = json.load(fh)
    except json.JSONDecodeError as error:
        raise InvalidInputError(f"{source}: labels manifest is not valid JSON: {error}")
    cases = document.get("cases")
    if not isinstance(cases, dict):
        raise InvalidInputError(f"{source}: labels manifest needs a 'cases' object")
    return cases


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"pipeline artifact not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path: Path, document: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")
