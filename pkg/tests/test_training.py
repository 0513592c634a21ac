"""Training loop behaviour: descent, determinism, divergence handling."""
from __future__ import annotations

import numpy as np
import pytest

from pasdf.encoding import EncodingConfig, positional_encode
from pasdf.errors import (
    InvalidInputError,
    InvalidParameterError,
    TrainingDivergedError,
)
from pasdf.network import NetworkConfig
from pasdf.queries import QuerySet
from pasdf.training import TrainConfig, TrainResult, train_model, predict_sdf

ENC = EncodingConfig(num_frequencies=2)
TINY_NET = NetworkConfig(
    input_dim=ENC.dim, hidden_width=16, num_layers=2, skip_layer=None, dropout=0.0
)


def volume_queries(n: int, seed: int, target_fn) -> QuerySet:
    rng = np.random.default_rng(seed)
    positions = rng.random((n, 3))
    return QuerySet(positions, np.zeros(n, dtype=np.uint8), target_fn(positions))


def radial_targets(positions: np.ndarray) -> np.ndarray:
    return np.linalg.norm(positions - 0.5, axis=1) - 0.3


class TestTrainConfig:
    def test_defaults(self) -> None:
        cfg = TrainConfig()
        assert cfg.learning_rate == pytest.approx(1e-5)
        assert cfg.epochs == 2000
        assert cfg.batch_size == 4096
        assert cfg.d_max == pytest.approx(0.1)
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)
        assert not cfg.clamp_targets

    def test_validation(self) -> None:
        with pytest.raises(InvalidParameterError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(InvalidParameterError):
            TrainConfig(epochs=-1)
        with pytest.raises(InvalidParameterError):
            TrainConfig(batch_size=0)
        with pytest.raises(InvalidParameterError):
            TrainConfig(d_max=0.0)
        with pytest.raises(InvalidParameterError):
            TrainConfig(beta1=1.0)

    def test_dict_round_trip(self) -> None:
        cfg = TrainConfig(learning_rate=3e-4, epochs=7, seed=5, clamp_targets=True)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestTrainModel:
    def test_overfits_single_sample(self) -> None:
        queries = QuerySet(
            np.array([[0.3, 0.4, 0.5]]), np.zeros(1, dtype=np.uint8), np.array([0.05])
        )
        cfg = TrainConfig(learning_rate=1e-3, epochs=1500, batch_size=4, d_max=1.0, seed=0)
        result = train_model(queries, cfg, ENC, TINY_NET)
        assert result.final_loss < 1e-3
        assert min(result.loss_history) < 1e-4

    def test_loss_descends_and_stays_finite(self) -> None:
        queries = volume_queries(512, seed=3, target_fn=radial_targets)
        cfg = TrainConfig(learning_rate=1e-3, epochs=40, batch_size=128, d_max=1.0, seed=1)
        result = train_model(queries, cfg, ENC, TINY_NET)
        assert len(result.loss_history) == 40
        assert np.isfinite(result.loss_history).all()
        assert result.loss_history[-1] < result.loss_history[0]

    def test_bitwise_deterministic_per_seed(self) -> None:
        net = NetworkConfig(
            input_dim=ENC.dim, hidden_width=8, num_layers=3, skip_layer=1, dropout=0.2
        )
        queries = volume_queries(256, seed=4, target_fn=radial_targets)
        cfg = TrainConfig(learning_rate=1e-3, epochs=8, batch_size=64, d_max=0.1, seed=9)
        a = train_model(queries, cfg, ENC, net)
        b = train_model(queries, cfg, ENC, net)
        np.testing.assert_array_equal(a.model.params.flatten(), b.model.params.flatten())
        assert a.loss_history == b.loss_history
        c = train_model(queries, TrainConfig(**{**cfg.to_dict(), "seed": 10}), ENC, net)
        assert not np.array_equal(a.model.params.flatten(), c.model.params.flatten())

    def test_zero_epochs_returns_untrained_init(self) -> None:
        queries = volume_queries(32, seed=5, target_fn=radial_targets)
        cfg = TrainConfig(epochs=0, seed=2)
        result = train_model(queries, cfg, ENC, TINY_NET)
        assert result.loss_history == []
        assert np.isnan(result.final_loss)
        again = train_model(queries, cfg, ENC, TINY_NET)
        np.testing.assert_array_equal(
            result.model.params.flatten(), again.model.params.flatten()
        )

    def test_diverged_training_aborts_with_diagnostics(self) -> None:
        queries = volume_queries(32, seed=6, target_fn=radial_targets)
        net = NetworkConfig(
            input_dim=ENC.dim, hidden_width=8, num_layers=4, skip_layer=2, dropout=0.0
        )
        cfg = TrainConfig(
            learning_rate=1e150, epochs=5, batch_size=16, d_max=1e300, seed=0
        )
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(
            TrainingDivergedError
        ) as info:
            train_model(queries, cfg, ENC, net)
        assert info.value.epoch >= 0
        assert info.value.batch >= 0

    def test_clamp_targets_flag_equals_manual_preclamp(self) -> None:
        rng = np.random.default_rng(7)
        positions = rng.random((128, 3))
        wide = rng.normal(0.0, 0.5, size=128)
        cfg = TrainConfig(
            learning_rate=1e-3, epochs=5, batch_size=64, d_max=0.1, seed=3, clamp_targets=True
        )
        flagged = train_model(
            QuerySet(positions, np.zeros(128, dtype=np.uint8), wide), cfg, ENC, TINY_NET
        )
        manual_cfg = TrainConfig(**{**cfg.to_dict(), "clamp_targets": False})
        manual = train_model(
            QuerySet(positions, np.zeros(128, dtype=np.uint8), np.clip(wide, -0.1, 0.1)),
            manual_cfg,
            ENC,
            TINY_NET,
        )
        np.testing.assert_array_equal(
            flagged.model.params.flatten(), manual.model.params.flatten()
        )

    def test_rejects_unlabelled_queries(self) -> None:
        queries = QuerySet(np.zeros((4, 3)), np.zeros(4, dtype=np.uint8))
        with pytest.raises(InvalidInputError, match="labelled"):
            train_model(queries, TrainConfig(), ENC, TINY_NET)

    def test_rejects_encoding_dimension_mismatch(self) -> None:
        queries = volume_queries(8, seed=8, target_fn=radial_targets)
        with pytest.raises(InvalidParameterError, match="input_dim"):
            train_model(queries, TrainConfig(), EncodingConfig(num_frequencies=6), TINY_NET)

    def test_default_network_matches_encoding(self) -> None:
        queries = volume_queries(8, seed=9, target_fn=radial_targets)
        cfg = TrainConfig(epochs=0, seed=0)
        result = train_model(queries, cfg, EncodingConfig())
        assert result.model.config.input_dim == 39
        assert result.model.config.hidden_width == 512


class TestPredictSdf:
    def test_matches_forward_on_encoded_points(self) -> None:
        queries = volume_queries(16, seed=10, target_fn=radial_targets)
        result = train_model(
            queries,
            TrainConfig(learning_rate=1e-3, epochs=2, batch_size=8, seed=1),
            ENC,
            TINY_NET,
        )
        pts = np.random.default_rng(11).random((9, 3))
        direct = result.model.forward(positional_encode(pts, ENC))
        np.testing.assert_array_equal(predict_sdf(result.model, pts, ENC), direct)

    def test_final_loss_of_empty_history_is_nan(self) -> None:
        result = TrainResult(model=None, loss_history=[])
        assert np.isnan(result.final_loss)
