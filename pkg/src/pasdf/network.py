"""The implicit surface network and its hand-rolled differentiation.

An MLP maps encoded coordinates to a scalar signed distance.  Layers are
reparameterized with weight normalization (weight = gain * direction /
row-norm) so magnitude and direction train separately; hidden activations
are ReLU with inverted dropout during training, and the encoded input is
concatenated back in at a configurable skip layer.  Gradients are exact
reverse-mode derivatives computed by hand; no autograd framework is
involved anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidInputError, InvalidParameterError
from .geometry import F64

_MIN_ROW_NORM = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int = 39
    hidden_width: int = 512
    num_layers: int = 8
    skip_layer: int | None = 4
    dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise InvalidParameterError("input_dim must be >= 1")
        if self.hidden_width < 1:
            raise InvalidParameterError("hidden_width must be >= 1")
        if self.num_layers < 2:
            raise InvalidParameterError("num_layers must be >= 2")
        if self.skip_layer is not None and not 1 <= self.skip_layer <= self.num_layers - 1:
            raise InvalidParameterError(
                "skip_layer must be None or in [1, num_layers - 1]"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidParameterError("dropout must be in [0, 1)")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) per affine layer; the skip layer's input is widened."""
        shapes: list[tuple[int, int]] = []
        for layer in range(self.num_layers):
            fan_in = self.input_dim if layer == 0 else self.hidden_width
            if layer == self.skip_layer:
                fan_in += self.input_dim
            fan_out = 1 if layer == self.num_layers - 1 else self.hidden_width
            shapes.append((fan_out, fan_in))
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.hidden_width,
            "num_layers": self.num_layers,
            "skip_layer": self.skip_layer,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        skip = data["skip_layer"]
        return cls(
            input_dim=int(data["input_dim"]),
            hidden_width=int(data["hidden_width"]),
            num_layers=int(data["num_layers"]),
            skip_layer=None if skip is None else int(skip),
            dropout=float(data["dropout"]),
        )


@dataclass
class ParameterSet:
    """One array triple per layer; also the container for gradients and
    optimizer moments, which share the model's shapes."""

    directions: list[NDArray[F64]]
    gains: list[NDArray[F64]]
    biases: list[NDArray[F64]]

    def arrays(self) -> list[NDArray[F64]]:
        out: list[NDArray[F64]] = []
        for layer in range(len(self.directions)):
            out.extend([self.directions[layer], self.gains[layer], self.biases[layer]])
        return out

    @classmethod
    def zeros_like(cls, other: "ParameterSet") -> "ParameterSet":
        return cls(
            [np.zeros_like(a) for a in other.directions],
            [np.zeros_like(a) for a in other.gains],
            [np.zeros_like(a) for a in other.biases],
        )

    def flatten(self) -> NDArray[F64]:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def overwrite_from_flat(self, flat: NDArray[F64]) -> None:
        cursor = 0
        for array in self.arrays():
            chunk = flat[cursor : cursor + array.size]
            if chunk.size != array.size:
                raise InvalidInputError("flat parameter vector has the wrong length")
            array[...] = chunk.reshape(array.shape)
            cursor += array.size
        if cursor != flat.size:
            raise InvalidInputError("flat parameter vector has the wrong length")


@dataclass
class SdfModel:
    config: NetworkConfig
    params: ParameterSet

    @classmethod
    def init(cls, config: NetworkConfig, seed: int) -> "SdfModel":
        """Gaussian directions scaled by 1/sqrt(fan_in); gains set to the row
        norms so the effective weights equal the raw draw; zero biases."""
        rng = np.random.default_rng(seed)
        directions: list[NDArray[F64]] = []
        gains: list[NDArray[F64]] = []
        biases: list[NDArray[F64]] = []
        for fan_out, fan_in in config.layer_shapes():
            weight = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            directions.append(weight)
            gains.append(np.linalg.norm(weight, axis=1))
            biases.append(np.zeros(fan_out))
        return cls(config, ParameterSet(directions, gains, biases))

    def effective_weights(self) -> list[NDArray[F64]]:
        weights: list[NDArray[F64]] = []
        for v, g in zip(self.params.directions, self.params.gains):
            norms = np.linalg.norm(v, axis=1)
            if norms.min() <= _MIN_ROW_NORM:
                raise InvalidInputError("weight direction row norm collapsed")
            weights.append((g / norms)[:, None] * v)
        return weights

    def forward(
        self,
        encoded: NDArray[F64],
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> NDArray[F64]:
        out, _ = self._forward_cached(encoded, training=training, rng=rng)
        return out

    def _forward_cached(
        self,
        encoded: NDArray[F64],
        *,
        training: bool,
        rng: np.random.Generator | None,
    ) -> tuple[NDArray[F64], "_ForwardCache"]:
        cfg = self.config
        x = np.ascontiguousarray(encoded, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise InvalidInputError(
                f"encoded input must have shape (n, {cfg.input_dim}), got {x.shape}"
            )
        use_dropout = training and cfg.dropout > 0.0
        if use_dropout and rng is None:
            raise InvalidParameterError("training-mode forward with dropout needs an rng")

        weights = self.effective_weights()
        keep = 1.0 - cfg.dropout
        inputs: list[NDArray[F64]] = []
        pre_acts: list[NDArray[F64]] = []
        masks: list[NDArray[F64] | None] = []
        h = x
        for layer in range(cfg.num_layers):
            if layer == cfg.skip_layer:
                h = np.concatenate([h, x], axis=1)
            inputs.append(h)
            z = h @ weights[layer].T + self.params.biases[layer]
            pre_acts.append(z)
            if layer == cfg.num_layers - 1:
                h = z
                masks.append(None)
            else:
                a = np.maximum(z, 0.0)
                if use_dropout:
                    mask = (rng.random(a.shape) < keep).astype(np.float64)
                    a = a * mask / keep
                    masks.append(mask)
                else:
                    masks.append(None)
                h = a
        out = h[:, 0]
        cache = _ForwardCache(inputs, pre_acts, masks, weights)
        return out, cache


@dataclass
class _ForwardCache:
    inputs: list[NDArray[F64]]
    pre_acts: list[NDArray[F64]]
    masks: list[NDArray[F64] | None]
    weights: list[NDArray[F64]]


def clamped_l1_loss(
    pred: NDArray[F64], target: NDArray[F64], d_max: float
) -> float:
    """Mean |clamp(pred, -d_max, d_max) - target|.

    The clamp applies to the prediction only; far-field predictions saturate
    instead of dominating the loss.
    """
    if d_max <= 0.0:
        raise InvalidParameterError("d_max must be > 0")
    clamped = np.clip(pred, -d_max, d_max)
    return float(np.mean(np.abs(clamped - target)))


def loss_and_gradients(
    model: SdfModel,
    encoded: NDArray[F64],
    targets: NDArray[F64],
    d_max: float,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, ParameterSet]:
    """Mean clamped L1 loss and its exact gradients for every parameter.

    Subgradient conventions: sign(0) = 0 for the absolute value, zero
    gradient where the clamp saturates (strictly outside [-d_max, d_max]),
    ReLU'(0) = 0, and the dropout mask drawn in the forward pass is reused
    unchanged on the way back.
    """
    if d_max <= 0.0:
        raise InvalidParameterError("d_max must be > 0")
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if y.size == 0:
        raise InvalidInputError("gradient batch must be non-empty")
    out, cache = model._forward_cached(encoded, training=training, rng=rng)
    if y.shape != out.shape:
        raise InvalidInputError("targets must pair 1:1 with inputs")

    n = out.shape[0]
    clamped = np.clip(out, -d_max, d_max)
    loss = float(np.mean(np.abs(clamped - y)))
    d_out = np.sign(clamped - y) / n
    d_out *= np.abs(out) <= d_max

    cfg = model.config
    keep = 1.0 - cfg.dropout
    grads = ParameterSet.zeros_like(model.params)
    dz = d_out[:, None]
    for layer in reversed(range(cfg.num_layers)):
        h = cache.inputs[layer]
        d_weight = dz.T @ h
        grads.biases[layer][...] = dz.sum(axis=0)
        v = model.params.directions[layer]
        norms = np.linalg.norm(v, axis=1)
        unit = v / norms[:, None]
        d_gain = np.einsum("ij,ij->i", d_weight, unit)
        grads.gains[layer][...] = d_gain
        scale = (model.params.gains[layer] / norms)[:, None]
        grads.directions[layer][...] = scale * (d_weight - d_gain[:, None] * unit)
        if layer == 0:
            break
        dh = dz @ cache.weights[layer]
        if layer == cfg.skip_layer:
            dh = dh[:, : dh.shape[1] - cfg.input_dim]
        mask = cache.masks[layer - 1]
        if mask is not None:
            dh = dh * mask / keep
        dz = dh * (cache.pre_acts[layer - 1] > 0.0)
    return loss, grads
