"""Synthetic end-to-end benchmark.

Each shape gets its own model trained from a clean mesh, then a set of
normal and anomalous test clouds in random poses is detected, scored,
and repaired.  Every random draw derives from the run's root seed
through named streams, so two runs with the same configuration produce
byte-identical metrics tables regardless of worker count.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import BENCH_ANOMALY_KINDS, BENCH_SHAPE_KINDS, RunConfig
from .defects import bulge, crop, dent, noise_patch
from .errors import InvalidParameterError, PasdfError
from .geometry import PointCloud, apply_transform, random_rigid
from .mesh import TriMesh, normalize_unit_cube, sample_surface
from .meshio import write_cloud_ply
from .queries import label_queries, sample_queries
from .repair import RepairQuality, repair, repair_quality
from .rng import derive_seed, stream
from .scoring import auroc, evaluate, score_points
from .shapes import box, capsule, sphere, torus
from .training import train_model

_LABEL_CLOUD_POINTS = 60_000
_REPAIRED_KINDS = ("dent", "crop")


@dataclass(frozen=True)
class ShapeSpec:
    """Which surface to build and how finely to tessellate it.

    Only the parameters of the chosen kind matter: radius for spheres,
    extents for boxes, the two radii for tori, tube_radius and height
    for capsules.  Density scales every tessellation knob together.
    """

    kind: str
    radius: float = 0.5
    extents: tuple[float, float, float] = (1.0, 0.6, 0.4)
    major_radius: float = 0.35
    minor_radius: float = 0.12
    tube_radius: float = 0.2
    height: float = 0.5
    density: int = 3

    def __post_init__(self) -> None:
        if self.kind not in BENCH_SHAPE_KINDS:
            raise InvalidParameterError(f"unknown shape kind '{self.kind}'")
        if self.radius <= 0.0 or self.tube_radius <= 0.0:
            raise InvalidParameterError("radius must be positive")
        if any(extent <= 0.0 for extent in self.extents):
            raise InvalidParameterError("extents must be positive")
        if not 0.0 < self.minor_radius < self.major_radius:
            raise InvalidParameterError("torus needs 0 < minor_radius < major_radius")
        if self.height < 0.0:
            raise InvalidParameterError("height must be >= 0")
        if self.density < 1:
            raise InvalidParameterError("density must be >= 1")


def generate_shape(spec: ShapeSpec, seed: int) -> TriMesh:
    """Build the watertight mesh a spec describes.

    Generators are deterministic; the seed is part of the interface so
    stochastic shape families can slot in without changing callers.
    """
    del seed
    if spec.kind == "sphere":
        return sphere(spec.radius, subdivisions=spec.density)
    if spec.kind == "box":
        return box(spec.extents)
    if spec.kind == "torus":
        return torus(
            spec.major_radius,
            spec.minor_radius,
            segments_major=16 * spec.density,
            segments_minor=8 * spec.density,
        )
    return capsule(
        spec.tube_radius,
        spec.height,
        segments=8 * spec.density,
        cap_rings=2 * spec.density,
    )


@dataclass(frozen=True)
class AnomalySpec:
    """One localized defect: what kind, where, how wide, how strong.

    Magnitude is the peak surface displacement for dents and bulges and
    the jitter scale for noise patches; crops ignore it.  Zero magnitude
    is allowed and leaves the cloud untouched, which gives parameter
    sweeps a clean baseline.
    """

    kind: str
    center: tuple[float, float, float]
    radius: float
    magnitude: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in BENCH_ANOMALY_KINDS:
            raise InvalidParameterError(f"unknown anomaly kind '{self.kind}'")
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (3,) or not np.isfinite(center).all():
            raise InvalidParameterError("center must be a finite 3-vector")
        if self.radius <= 0.0:
            raise InvalidParameterError("radius must be positive")
        if self.magnitude < 0.0:
            raise InvalidParameterError("magnitude must be >= 0")


def inject_anomaly(
    cloud: PointCloud, spec: AnomalySpec, seed: int
) -> tuple[PointCloud, np.ndarray]:
    """Apply a defect spec to a cloud; returns the cloud and point labels."""
    center = np.asarray(spec.center, dtype=np.float64)
    if spec.kind == "dent":
        result = dent(cloud, center=center, radius=spec.radius, magnitude=spec.magnitude)
    elif spec.kind == "bulge":
        result = bulge(cloud, center=center, radius=spec.radius, magnitude=spec.magnitude)
    elif spec.kind == "noise_patch":
        result = noise_patch(
            cloud, center=center, radius=spec.radius, magnitude=spec.magnitude, seed=seed
        )
    else:
        result = crop(cloud, center=center, radius=spec.radius)
    return result.cloud, result.labels


@dataclass(frozen=True)
class CaseResult:
    """Detection outcome for one test cloud."""

    name: str
    kind: str
    object_score: float
    object_score_no_pam: float
    converged: bool
    n_labelled: int
    in_pool: bool


@dataclass(frozen=True)
class RepairCaseResult:
    """Repair outcome for one dented or cropped test cloud."""

    name: str
    kind: str
    converged: bool
    quality_before: RepairQuality
    quality_after: RepairQuality
    score_before: float
    score_after: float

    @property
    def chamfer_improved(self) -> bool:
        return self.quality_after.chamfer < self.quality_before.chamfer

    @property
    def score_not_worse(self) -> bool:
        return self.score_after <= self.score_before


@dataclass(frozen=True)
class ShapeResult:
    """All metrics for one benchmark shape; error marks a failed row."""

    shape: str
    o_auroc: float
    p_auroc: float
    o_auroc_no_pam: float
    final_loss: float
    cases: tuple[CaseResult, ...]
    repairs: tuple[RepairCaseResult, ...]
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class BenchResult:
    shapes: tuple[ShapeResult, ...]

    def row(self, shape: str) -> ShapeResult:
        for result in self.shapes:
            if result.shape == shape:
                return result
        raise KeyError(shape)


@dataclass(frozen=True)
class _Case:
    name: str
    kind: str
    seed: int
    posed: PointCloud
    labels: np.ndarray
    # Ground-truth stand-in: a sampling of the clean shape independent
    # of the one the anomaly was injected into, so repair quality is a
    # fair cloud-to-cloud comparison for input and repair alike.
    reference: PointCloud
    anomaly: AnomalySpec | None
    # Crop-track cases are detected and repaired but stay out of the
    # AUROC pools; removal leaves no displaced surface to rank on.
    in_pool: bool = True


def _failed_shape(kind: str, error: str) -> ShapeResult:
    nan = float("nan")
    return ShapeResult(
        shape=kind,
        o_auroc=nan,
        p_auroc=nan,
        o_auroc_no_pam=nan,
        final_loss=nan,
        cases=(),
        repairs=(),
        error=error,
    )


def _build_cases(kind: str, mesh: TriMesh, config: RunConfig) -> list[_Case]:
    bench = config.bench
    diagonal = mesh.bbox_diagonal()
    cases: list[_Case] = []
    for index in range(bench.normal_cases):
        case_seed = derive_seed(config.seed, f"bench-{kind}-normal-{index}")
        base = sample_surface(
            mesh, bench.cloud_points, seed=derive_seed(case_seed, "cloud")
        )
        pose = random_rigid(stream(case_seed, "pose"), translation_scale=diagonal / 2.0)
        cases.append(
            _Case(
                name=f"normal-{index:02d}",
                kind="normal",
                seed=case_seed,
                posed=apply_transform(pose, base),
                labels=np.zeros(len(base), dtype=np.int64),
                reference=sample_surface(
                    mesh, bench.cloud_points, seed=derive_seed(case_seed, "reference")
                ),
                anomaly=None,
            )
        )
    for index, anomaly_kind in enumerate(bench.anomaly_kinds):
        case_seed = derive_seed(config.seed, f"bench-{kind}-anomalous-{index}")
        cases.append(
            _anomalous_case(
                f"{anomaly_kind}-{index:02d}",
                anomaly_kind,
                case_seed,
                mesh,
                config,
                in_pool=True,
            )
        )
    for index in range(bench.crop_cases):
        case_seed = derive_seed(config.seed, f"bench-{kind}-crop-{index}")
        cases.append(
            _anomalous_case(
                f"crop-track-{index:02d}", "crop", case_seed, mesh, config, in_pool=False
            )
        )
    return cases


def _anomalous_case(
    name: str,
    anomaly_kind: str,
    case_seed: int,
    mesh: TriMesh,
    config: RunConfig,
    in_pool: bool,
) -> _Case:
    bench = config.bench
    diagonal = mesh.bbox_diagonal()
    base = sample_surface(
        mesh, bench.cloud_points, seed=derive_seed(case_seed, "cloud")
    )
    rng = stream(case_seed, "anomaly")
    center = base.points[int(rng.integers(len(base)))]
    radius_frac = (
        bench.crop_radius_frac if anomaly_kind == "crop" else bench.radius_frac
    )
    spec = AnomalySpec(
        kind=anomaly_kind,
        center=tuple(float(v) for v in center),
        radius=radius_frac * diagonal,
        magnitude=bench.magnitude_frac * diagonal,
    )
    defective, labels = inject_anomaly(base, spec, derive_seed(case_seed, "inject"))
    pose = random_rigid(stream(case_seed, "pose"), translation_scale=diagonal / 2.0)
    return _Case(
        name=name,
        kind=anomaly_kind,
        seed=case_seed,
        posed=apply_transform(pose, defective),
        labels=labels.astype(np.int64),
        reference=sample_surface(
            mesh, bench.cloud_points, seed=derive_seed(case_seed, "reference")
        ),
        anomaly=spec,
        in_pool=in_pool,
    )


def run_shape(kind: str, config: RunConfig) -> ShapeResult:
    """Train on one clean shape, then detect and repair its test cases."""
    root = config.seed
    mesh = generate_shape(
        ShapeSpec(kind=kind), derive_seed(root, f"bench-shape-{kind}")
    )
    normalized_mesh, record = normalize_unit_cube(mesh)

    queries, surface = sample_queries(
        normalized_mesh, config.counts, derive_seed(root, f"bench-queries-{kind}")
    )
    dense = sample_surface(
        normalized_mesh,
        _LABEL_CLOUD_POINTS,
        seed=derive_seed(root, f"bench-label-{kind}"),
    )
    labelling = PointCloud(
        np.vstack([surface.points, dense.points]),
        np.vstack([surface.normals, dense.normals]),
    )
    labelled = label_queries(queries, labelling)

    train_cfg = replace(config.training, seed=derive_seed(root, f"bench-train-{kind}"))
    trained = train_model(labelled, train_cfg, config.encoding, config.network)
    model = trained.model

    canonical = sample_surface(
        mesh, config.bench.cloud_points, seed=derive_seed(root, f"bench-canonical-{kind}")
    )
    cases = _build_cases(kind, mesh, config)

    reports = []
    identity_reports = []
    case_results: list[CaseResult] = []
    for case in cases:
        report = score_points(
            model,
            config.encoding,
            case.posed,
            canonical,
            record,
            seed=derive_seed(case.seed, "detect"),
            align=config.bench.pam_enabled,
            voxel_size=config.align.voxel_size,
            chamfer_threshold=config.align.chamfer_threshold,
            threshold_step=config.align.threshold_step,
            max_rounds=config.align.max_rounds,
        ).with_object_score(config.scoring.top_k)
        identity = score_points(
            model,
            config.encoding,
            case.posed,
            canonical,
            record,
            seed=derive_seed(case.seed, "detect-no-pam"),
            align=False,
        ).with_object_score(config.scoring.top_k)
        reports.append(report)
        identity_reports.append(identity)
        case_results.append(
            CaseResult(
                name=case.name,
                kind=case.kind,
                object_score=float(report.object_score),
                object_score_no_pam=float(identity.object_score),
                converged=report.converged,
                n_labelled=int(case.labels.sum()),
                in_pool=case.in_pool,
            )
        )

    pool = [index for index, case in enumerate(cases) if case.in_pool]
    object_labels = np.array(
        [0 if cases[index].kind == "normal" else 1 for index in pool], dtype=np.int64
    )
    point_labels = [cases[index].labels for index in pool]
    o_auroc, p_auroc = evaluate(
        [reports[index] for index in pool], object_labels, point_labels
    )
    o_auroc_no_pam = auroc(
        np.array([identity_reports[index].object_score for index in pool]),
        object_labels,
    )

    repair_results: list[RepairCaseResult] = []
    for case, report in zip(cases, reports):
        if case.kind not in _REPAIRED_KINDS or not report.converged:
            continue
        aligned_input = apply_transform(report.transform, case.posed)
        repaired = repair(
            aligned_input,
            model,
            config.encoding,
            canonical,
            record,
            seed=derive_seed(case.seed, "repair"),
            resolution=config.grid.resolution,
            n_points=config.bench.cloud_points,
            align=False,
        )
        before = repair_quality(
            aligned_input,
            case.reference,
            seed=derive_seed(case.seed, "quality-before"),
            emd_subsample=config.repair.emd_subsample,
        )
        after = repair_quality(
            repaired.repaired,
            case.reference,
            seed=derive_seed(case.seed, "quality-after"),
            emd_subsample=config.repair.emd_subsample,
        )
        rescore = score_points(
            model,
            config.encoding,
            repaired.repaired,
            canonical,
            record,
            seed=derive_seed(case.seed, "rescore"),
            align=False,
        ).with_object_score(config.scoring.top_k)
        repair_results.append(
            RepairCaseResult(
                name=case.name,
                kind=case.kind,
                converged=repaired.converged,
                quality_before=before,
                quality_after=after,
                score_before=float(report.object_score),
                score_after=float(rescore.object_score),
            )
        )

    return ShapeResult(
        shape=kind,
        o_auroc=float(o_auroc),
        p_auroc=float(p_auroc),
        o_auroc_no_pam=float(o_auroc_no_pam),
        final_loss=trained.final_loss,
        cases=tuple(case_results),
        repairs=tuple(repair_results),
    )


def run_bench(config: RunConfig, out_dir: str | Path | None = None) -> BenchResult:
    """Run every configured shape; failures mark their row and move on."""
    rows: list[ShapeResult] = []
    timings: list[tuple[str, float]] = []
    for kind in config.bench.shapes:
        started = time.monotonic()
        try:
            rows.append(run_shape(kind, config))
        except PasdfError as error:
            rows.append(_failed_shape(kind, f"{type(error).__name__}: {error}"))
        timings.append((kind, time.monotonic() - started))
    result = BenchResult(tuple(rows))
    if out_dir is not None:
        write_bench_artifacts(result, config, Path(out_dir), timings)
    return result


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def _metric_row(row: ShapeResult) -> dict:
    improved = [r.chamfer_improved for r in row.repairs]
    not_worse = [r.score_not_worse for r in row.repairs]
    return {
        "shape": row.shape,
        "o_auroc": row.o_auroc,
        "p_auroc": row.p_auroc,
        "o_auroc_no_pam": row.o_auroc_no_pam,
        "n_repairs": len(row.repairs),
        "chamfer_before_mean": _mean([r.quality_before.chamfer for r in row.repairs]),
        "chamfer_after_mean": _mean([r.quality_after.chamfer for r in row.repairs]),
        "emd_before_mean": _mean([r.quality_before.emd for r in row.repairs]),
        "emd_after_mean": _mean([r.quality_after.emd for r in row.repairs]),
        "all_repairs_improved": bool(improved) and all(improved),
        "all_rescores_not_worse": bool(not_worse) and all(not_worse),
        "failed": row.failed,
    }


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_table(result: BenchResult) -> str:
    """The per-shape metrics as deterministic CSV text."""
    rows = [_metric_row(row) for row in result.shapes]
    header = list(rows[0].keys()) if rows else []
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(row[key]) for key in header))
    return "\n".join(lines) + "\n"


def write_bench_artifacts(
    result: BenchResult,
    config: RunConfig,
    out_dir: Path,
    timings: list[tuple[str, float]] | None = None,
) -> None:
    """Write metrics.csv, metrics.json, and the case manifest.

    Timings go to a separate log so the metrics files stay byte-stable
    across runs of the same configuration.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(metrics_table(result))

    document = {"shapes": []}
    for row in result.shapes:
        entry = _metric_row(row)
        entry["error"] = row.error
        entry["final_loss"] = row.final_loss
        entry["cases"] = [
            {
                "name": case.name,
                "kind": case.kind,
                "object_score": case.object_score,
                "object_score_no_pam": case.object_score_no_pam,
                "converged": case.converged,
                "n_labelled": case.n_labelled,
                "in_pool": case.in_pool,
            }
            for case in row.cases
        ]
        entry["repairs"] = [
            {
                "name": rep.name,
                "kind": rep.kind,
                "converged": rep.converged,
                "chamfer_before": rep.quality_before.chamfer,
                "chamfer_after": rep.quality_after.chamfer,
                "emd_before": rep.quality_before.emd,
                "emd_after": rep.quality_after.emd,
                "score_before": rep.score_before,
                "score_after": rep.score_after,
            }
            for rep in row.repairs
        ]
        document["shapes"].append(entry)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest = {"seed": config.seed, "shapes": []}
    for kind in config.bench.shapes:
        shape_entry: dict = {
            "shape": kind,
            "seed": derive_seed(config.seed, f"bench-shape-{kind}"),
            "cases": [],
        }
        # Cases derive purely from config and seed, so rebuilding them
        # here reproduces exactly what the runner scored and lets the
        # manifest carry the injected specs and the dumped cloud files.
        try:
            mesh = generate_shape(
                ShapeSpec(kind=kind), derive_seed(config.seed, f"bench-shape-{kind}")
            )
            cases = _build_cases(kind, mesh, config)
        except PasdfError:
            manifest["shapes"].append(shape_entry)
            continue
        case_dir = out_dir / "cases" / kind
        case_dir.mkdir(parents=True, exist_ok=True)
        for case in cases:
            path = case_dir / f"{case.name}.ply"
            write_cloud_ply(path, case.posed, scores=case.labels.astype(np.float32))
            entry = {
                "name": case.name,
                "kind": case.kind,
                "seed": case.seed,
                "file": str(path.relative_to(out_dir)),
                "n_points": len(case.posed),
                "anomaly": None,
            }
            if case.anomaly is not None:
                entry["anomaly"] = {
                    "kind": case.anomaly.kind,
                    "center": list(case.anomaly.center),
                    "radius": case.anomaly.radius,
                    "magnitude": case.anomaly.magnitude,
                }
            shape_entry["cases"].append(entry)
        manifest["shapes"].append(shape_entry)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if timings is not None:
        lines = [
            f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {kind} {seconds:.1f}s"
            for kind, seconds in timings
        ]
        (out_dir / "bench.log").write_text("\n".join(lines) + "\n")
