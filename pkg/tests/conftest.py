"""Shared test configuration and expensive shared fixtures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pasdf.encoding import EncodingConfig
from pasdf.geometry import PointCloud
from pasdf.mesh import NormalizationRecord
from pasdf.network import NetworkConfig, SdfModel
from pasdf.queries import QuerySet
from pasdf.training import TrainConfig, train_model

settings.register_profile(
    "pasdf",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("pasdf")


@dataclass(frozen=True)
class SphereWorld:
    """A trained sphere model plus its world-frame canonical cloud.

    The sphere lives at `center` with `radius` in world units; `record`
    maps world coordinates into the unit cube where the model was fit
    (normalized center 0.5, radius 0.3).
    """

    model: SdfModel
    encoding: EncodingConfig
    record: NormalizationRecord
    canonical: PointCloud
    center: np.ndarray
    radius: float
    final_loss: float


def _sphere_directions(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def sphere_world() -> SphereWorld:
    center = np.array([3.0, -2.0, 5.0])
    radius = 1.2
    record = NormalizationRecord(scale=4.0, offset=center - 2.0)

    rng = np.random.default_rng(0)
    n_vol, n_box, n_surf = 3000, 3000, 3000
    vol = rng.random((n_vol, 3))
    box = 0.5 + (rng.random((n_box, 3)) - 0.5) * (0.3 * 1.3 * 2)
    surf = 0.5 + 0.3 * _sphere_directions(n_surf, seed=1)
    pts = np.vstack([vol, box, surf])
    sdf = np.linalg.norm(pts - 0.5, axis=1) - 0.3
    tiers = np.concatenate(
        [np.zeros(n_vol), np.ones(n_box), np.full(n_surf, 2)]
    ).astype(np.uint8)
    sdf[tiers == 2] = 0.0
    queries = QuerySet(pts, tiers, sdf)

    encoding = EncodingConfig()
    network = NetworkConfig(
        input_dim=encoding.dim, hidden_width=32, num_layers=8, skip_layer=4, dropout=0.2
    )
    cfg = TrainConfig(
        learning_rate=1e-3,
        epochs=120,
        batch_size=4096,
        d_max=0.1,
        seed=1,
        clamp_targets=True,
    )
    result = train_model(queries, cfg, encoding, network)

    canon_dirs = _sphere_directions(2000, seed=2)
    canonical = PointCloud(center + radius * canon_dirs, canon_dirs)
    return SphereWorld(
        model=result.model,
        encoding=encoding,
        record=record,
        canonical=canonical,
        center=center,
        radius=radius,
        final_loss=result.final_loss,
    )
