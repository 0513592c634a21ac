"""Anomaly scoring, top-k aggregation, and AUROC."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pasdf.errors import (
    InvalidInputError,
    InvalidParameterError,
    UndefinedMetricError,
)
from pasdf.geometry import PointCloud, RigidTransform, apply_transform, random_rigid
from pasdf.scoring import (
    AnomalyReport,
    auroc,
    evaluate,
    object_score,
    score_points,
)


def oracle_auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) pairwise comparison: wins plus half-ties."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestObjectScore:
    def test_top_two_of_three(self) -> None:
        assert object_score(np.array([3.0, 1.0, 2.0]), k=2) == pytest.approx(2.5)

    def test_k_one_is_max(self) -> None:
        assert object_score(np.array([0.4, 0.9, 0.1]), k=1) == pytest.approx(0.9)

    def test_k_beyond_size_is_plain_mean(self) -> None:
        scores = np.array([1.0, 2.0, 3.0, 4.0])
        assert object_score(scores, k=100) == pytest.approx(2.5)

    def test_rejects_empty_and_bad_k(self) -> None:
        with pytest.raises(InvalidInputError):
            object_score(np.array([]), k=1)
        with pytest.raises(InvalidParameterError):
            object_score(np.array([1.0]), k=0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20)
    def test_monotone_in_single_scores(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        scores = rng.random(30)
        k = int(rng.integers(1, 40))
        base = object_score(scores, k)
        bumped = scores.copy()
        idx = int(rng.integers(0, 30))
        bumped[idx] += rng.random()
        assert object_score(bumped, k) >= base - 1e-15


class TestAuroc:
    def test_perfect_separation(self) -> None:
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        labels = np.array([1, 1, 0, 0])
        assert auroc(scores, labels) == pytest.approx(1.0)

    def test_all_ties_is_half(self) -> None:
        scores = np.ones(10)
        labels = np.array([1] * 4 + [0] * 6)
        assert auroc(scores, labels) == pytest.approx(0.5)

    def test_label_flip_complements(self) -> None:
        rng = np.random.default_rng(1)
        scores = rng.random(50)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        value = auroc(scores, labels)
        assert auroc(scores, 1 - labels) == pytest.approx(1.0 - value, abs=1e-12)

    def test_matches_pairwise_oracle_with_ties(self) -> None:
        rng = np.random.default_rng(2)
        for trial in range(10):
            # Integer-valued scores force plenty of exact ties.
            scores = rng.integers(0, 12, size=200).astype(float)
            labels = rng.integers(0, 2, size=200)
            labels[:2] = (0, 1)
            assert auroc(scores, labels) == pytest.approx(
                oracle_auroc(scores, labels), abs=1e-12
            )

    def test_monotone_transform_invariance(self) -> None:
        rng = np.random.default_rng(3)
        scores = rng.random(80)
        labels = rng.integers(0, 2, size=80)
        labels[:2] = (0, 1)
        base = auroc(scores, labels)
        assert auroc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auroc(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)

    def test_single_class_is_undefined(self) -> None:
        with pytest.raises(UndefinedMetricError):
            auroc(np.array([0.1, 0.2]), np.array([1, 1]))
        with pytest.raises(UndefinedMetricError):
            auroc(np.array([0.1, 0.2]), np.array([0, 0]))

    def test_rejects_bad_labels(self) -> None:
        with pytest.raises(InvalidInputError):
            auroc(np.array([0.1, 0.2]), np.array([0, 2]))


class TestAnomalyReport:
    def test_rejects_negative_scores(self) -> None:
        with pytest.raises(InvalidInputError):
            AnomalyReport(np.array([-0.1]), RigidTransform.identity(), True)

    def test_with_object_score_fills_top_k_mean(self) -> None:
        report = AnomalyReport(
            np.array([0.5, 0.1, 0.4, 0.2]), RigidTransform.identity(), True
        )
        filled = report.with_object_score(k=2)
        assert filled.object_score == pytest.approx(0.45)
        assert filled.k_used == 2
        clamped = report.with_object_score(k=50)
        assert clamped.k_used == 4
        assert clamped.object_score == pytest.approx(0.3)


class TestScorePoints:
    def test_zero_network_scores_zero(self, sphere_world) -> None:
        model = sphere_world.model
        saved = [g.copy() for g in model.params.gains]
        saved_bias = model.params.biases[-1].copy()
        try:
            for g in model.params.gains:
                g[...] = 0.0
            model.params.biases[-1][...] = 0.0
            report = score_points(
                model,
                sphere_world.encoding,
                sphere_world.canonical,
                sphere_world.canonical,
                sphere_world.record,
                seed=0,
                align=False,
            )
            assert np.all(report.per_point_scores == 0.0)
        finally:
            for g, val in zip(model.params.gains, saved):
                g[...] = val
            model.params.biases[-1][...] = saved_bias

    def test_train_surface_scores_track_training_loss(self, sphere_world) -> None:
        report = score_points(
            sphere_world.model,
            sphere_world.encoding,
            sphere_world.canonical,
            sphere_world.canonical,
            sphere_world.record,
            seed=1,
            align=False,
        )
        assert report.per_point_scores.mean() < 2.0 * sphere_world.final_loss

    def test_scores_are_pose_invariant_after_alignment(self, sphere_world) -> None:
        baseline = score_points(
            sphere_world.model,
            sphere_world.encoding,
            sphere_world.canonical,
            sphere_world.canonical,
            sphere_world.record,
            seed=2,
        ).with_object_score()
        moved = apply_transform(random_rigid(np.random.default_rng(7), 1.5), sphere_world.canonical)
        report = score_points(
            sphere_world.model,
            sphere_world.encoding,
            moved,
            sphere_world.canonical,
            sphere_world.record,
            seed=2,
        ).with_object_score()
        assert report.converged
        rel = abs(report.object_score - baseline.object_score) / baseline.object_score
        assert rel < 0.10

    def test_misaligned_without_pam_scores_high(self, sphere_world) -> None:
        moved = apply_transform(
            random_rigid(np.random.default_rng(8), 1.5), sphere_world.canonical
        )
        aligned = score_points(
            sphere_world.model,
            sphere_world.encoding,
            moved,
            sphere_world.canonical,
            sphere_world.record,
            seed=3,
        ).with_object_score()
        raw = score_points(
            sphere_world.model,
            sphere_world.encoding,
            moved,
            sphere_world.canonical,
            sphere_world.record,
            seed=3,
            align=False,
        ).with_object_score()
        assert raw.object_score > 5.0 * aligned.object_score

    def test_non_convergence_still_scores(self, sphere_world) -> None:
        report = score_points(
            sphere_world.model,
            sphere_world.encoding,
            sphere_world.canonical,
            sphere_world.canonical,
            sphere_world.record,
            seed=4,
            chamfer_threshold=0.0,
            threshold_step=0.0,
            max_rounds=2,
        )
        assert not report.converged
        assert report.per_point_scores.size == len(sphere_world.canonical)
        assert np.isfinite(report.per_point_scores).all()


class TestEvaluate:
    def make_report(self, scores, object_score_value) -> AnomalyReport:
        report = AnomalyReport(np.asarray(scores, float), RigidTransform.identity(), True)
        return report.with_object_score(k=len(scores)) if object_score_value is None else (
            AnomalyReport(
                np.asarray(scores, float),
                RigidTransform.identity(),
                True,
                object_score=object_score_value,
                k_used=len(scores),
            )
        )

    def test_object_and_point_aurocs(self) -> None:
        normal = self.make_report([0.1, 0.1, 0.2], 0.1)
        anomalous = self.make_report([0.1, 0.9, 0.8], 0.9)
        o_auroc, p_auroc = evaluate(
            [normal, anomalous],
            np.array([0, 1]),
            [np.zeros(3, int), np.array([0, 1, 1])],
        )
        assert o_auroc == pytest.approx(1.0)
        expect = oracle_auroc(
            np.array([0.1, 0.1, 0.2, 0.1, 0.9, 0.8]),
            np.array([0, 0, 0, 0, 1, 1]),
        )
        assert p_auroc == pytest.approx(expect, abs=1e-12)

    def test_pooling_is_global_not_per_object(self) -> None:
        # Point scores overlap across objects; pooled ranking sees all six
        # points together, which a per-object average would hide.
        low = self.make_report([0.3, 0.35, 0.4], 0.4)
        high = self.make_report([0.5, 0.55, 0.6], 0.6)
        _, p_auroc = evaluate(
            [low, high],
            np.array([0, 1]),
            [np.array([0, 0, 1]), np.array([0, 1, 1])],
        )
        pooled = oracle_auroc(
            np.array([0.3, 0.35, 0.4, 0.5, 0.55, 0.6]),
            np.array([0, 0, 1, 0, 1, 1]),
        )
        assert p_auroc == pytest.approx(pooled, abs=1e-12)

    def test_requires_filled_object_scores(self) -> None:
        bare = AnomalyReport(np.array([0.1]), RigidTransform.identity(), True)
        with pytest.raises(InvalidInputError, match="object scores"):
            evaluate([bare], np.array([1]), [np.array([1])])

    def test_rejects_misaligned_labels(self) -> None:
        report = self.make_report([0.1, 0.2], 0.2)
        with pytest.raises(InvalidInputError):
            evaluate([report], np.array([1, 0]), [np.array([0, 1])])
        with pytest.raises(InvalidInputError):
            evaluate([report], np.array([1]), [np.array([0, 1, 0])])
