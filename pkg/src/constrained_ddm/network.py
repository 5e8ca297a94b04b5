"""Tanh multilayer perceptrons with Glorot-uniform initialization."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import tape
from .autodiff.tape import Node


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int = 2
    hidden_layers: int = 3
    units_per_layer: int = 20
    output_dim: int = 1
    activation: str = "tanh"
    # trainable scalars appended after the network weights (e.g. a conductivity)
    extras: tuple[str, ...] = ()
    # extras stored as their logarithm so the physical value stays positive
    positive_extras: tuple[str, ...] = ()

    def __post_init__(self):
        if self.hidden_layers < 1 or self.units_per_layer < 1:
            raise ConfigurationError("need at least one hidden layer with one unit")
        if self.output_dim not in (1, 2):
            raise ConfigurationError("output_dim must be 1 or 2")
        if self.activation != "tanh":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "extras", tuple(self.extras))
        object.__setattr__(self, "positive_extras", tuple(self.positive_extras))
        unknown = set(self.positive_extras) - set(self.extras)
        if unknown:
            raise ConfigurationError(f"positive extras {sorted(unknown)} are not extras")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [self.units_per_layer] * self.hidden_layers + [self.output_dim]

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        entries = []
        w = self.widths
        for i in range(len(w) - 1):
            entries.append((f"W{i}", (w[i + 1], w[i])))
            entries.append((f"b{i}", (w[i + 1],)))
        entries.extend((name, ()) for name in self.extras)
        return tuple(entries)


@dataclass
class ParameterVector:
    """Flat view of all trainable scalars with a stable name -> slice map."""

    layout: tuple[tuple[str, tuple[int, ...]], ...]
    values: np.ndarray
    _slices: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self._slices = {}
        start = 0
        for name, shape in self.layout:
            size = int(np.prod(shape)) if shape else 1
            self._slices[name] = (slice(start, start + size), shape)
            start += size
        if start != self.values.size:
            raise ConfigurationError(f"parameter vector has {self.values.size} entries, layout needs {start}")

    def __len__(self) -> int:
        return self.values.size

    def index(self, name: str) -> slice:
        return self._slices[name][0]

    def unflatten(self) -> dict[str, np.ndarray]:
        return {name: self.values[sl].reshape(shape) for name, (sl, shape) in self._slices.items()}

    @classmethod
    def flatten(cls, layout, arrays: dict[str, np.ndarray]) -> "ParameterVector":
        flat = np.concatenate([np.asarray(arrays[name], dtype=np.float64).ravel() for name, _ in layout])
        return cls(tuple(layout), flat)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.layout, self.values.copy())


class MLP:
    """Fully connected tanh network u(x; theta)."""

    def __init__(self, config: MLPConfig):
        self.config = config
        self.layout = config.layout()
        self.size = sum(int(np.prod(s)) if s else 1 for _, s in self.layout)
        self._n_layers = len(config.widths) - 1

    def __repr__(self) -> str:
        c = self.config
        return f"MLP({c.input_dim}->{c.hidden_layers}x{c.units_per_layer}->{c.output_dim}, extras={c.extras})"

    def xavier_init(self, seed: int) -> ParameterVector:
        return xavier_init(self.config, seed)

    def vector(self, theta) -> ParameterVector:
        if isinstance(theta, ParameterVector):
            return theta
        return ParameterVector(self.layout, theta)

    def leaves(self, theta) -> list[Node]:
        arrays = self.vector(theta).unflatten()
        return [Node(arrays[name], name=name) for name, _ in self.layout]

    def extra(self, leaves: list[Node], name: str) -> Node:
        names = [n for n, _ in self.layout]
        leaf = leaves[names.index(name)]
        return tape.exp(leaf) if name in self.config.positive_extras else leaf

    def extra_values(self, theta) -> dict[str, float]:
        """Physical values of the trainable scalars."""
        arrays = self.vector(theta).unflatten()
        out = {}
        for name in self.config.extras:
            v = float(arrays[name])
            out[name] = math.exp(v) if name in self.config.positive_extras else v
        return out

    def jet(self, leaves: list[Node], x: np.ndarray, order: int = 2) -> Node:
        """Jet stack of shape (K, N, n_out): value, d first and d pure second derivatives."""
        n, d = x.shape
        if d != self.config.input_dim:
            raise ConfigurationError(f"expected {self.config.input_dim}-d points, got {d}")
        k = 1 + d * min(order, 2)
        z0 = np.zeros((k, n, d))
        z0[0] = x
        if order >= 1:
            for i in range(d):
                z0[1 + i, :, i] = 1.0
        z = Node(z0, requires_grad=False)
        for layer in range(self._n_layers):
            weight, bias = leaves[2 * layer], leaves[2 * layer + 1]
            z = tape.linear_jet(z, weight, bias)
            if layer < self._n_layers - 1:
                z = tape.tanh_jet(z, d)
        return z

    def forward(self, theta, x) -> np.ndarray:
        """Plain evaluation, returns (N, n_out) (or (n_out,) for a single point)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self.config.input_dim:
            raise ConfigurationError(f"expected {self.config.input_dim}-d points, got {x2.shape[1]}")
        arrays = self.vector(theta).unflatten()
        a = x2
        for layer in range(self._n_layers):
            a = a @ arrays[f"W{layer}"].T + arrays[f"b{layer}"]
            if layer < self._n_layers - 1:
                a = np.tanh(a)
        return a[0] if single else a


def xavier_init(config: MLPConfig, seed: int) -> ParameterVector:
    """Glorot-uniform weights, zero biases, extras ~ U(0, 1)."""
    rng = np.random.default_rng(seed)
    arrays = {}
    w = config.widths
    for i in range(len(w) - 1):
        bound = np.sqrt(6.0 / (w[i] + w[i + 1]))
        arrays[f"W{i}"] = rng.uniform(-bound, bound, size=(w[i + 1], w[i]))
        arrays[f"b{i}"] = np.zeros(w[i + 1])
    for name in config.extras:
        v = rng.uniform(0.0, 1.0)
        arrays[name] = np.array(math.log(max(v, 1e-12)) if name in config.positive_extras else v)
    return ParameterVector.flatten(config.layout(), arrays)


def save_checkpoint(path, config: MLPConfig, theta, **meta) -> None:
    theta = theta.values if isinstance(theta, ParameterVector) else np.asarray(theta)
    payload = {"config": asdict(config), "meta": meta, "parameters": [float(v) for v in theta]}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[MLPConfig, ParameterVector, dict]:
    payload = json.loads(Path(path).read_text())
    cfg = payload["config"]
    cfg["extras"] = tuple(cfg.get("extras", ()))
    cfg["positive_extras"] = tuple(cfg.get("positive_extras", ()))
    config = MLPConfig(**cfg)
    return config, ParameterVector(config.layout(), np.array(payload["parameters"])), payload.get("meta", {})
