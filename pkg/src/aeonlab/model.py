"""Small MLP classifier with a normalized projection head, on the autodiff tape."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import GraphError, Value, leaky_relu

NORM_EPS = 1e-12


@dataclass
class ModelConfig:
    input_dim: int = 16
    num_classes: int = 8
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 32
    proj_hidden: int = 128
    proj_dim: int = 128
    leak: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        dims = (self.input_dim, self.num_classes, self.feature_dim, self.proj_hidden, self.proj_dim, *self.hidden)
        if any(d < 1 for d in dims):
            raise ValueError(f"all model dimensions must be >= 1, got {dims}")


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class AeonModel:
    """Encoder ``d -> hidden... -> feature_dim``, linear classifier, projection head.

    Parameters are tape leaves, stored as an ordered list of ``(name, Value)``
    so the flat vector layout is stable.
    """

    def __init__(self, config: ModelConfig, params: list[tuple[str, Value]]):
        self.config = config
        self.named_params = params
        self._by_name = dict(params)

    # -- parameter plumbing -------------------------------------------------
    @property
    def params(self) -> list[Value]:
        return [p for _, p in self.named_params]

    def __getitem__(self, name: str) -> Value:
        return self._by_name[name]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params():
            raise ValueError(f"expected {self.num_params()} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            n = p.data.size
            p.data = flat[i:i + n].reshape(p.data.shape).copy()
            i += n

    def copy(self) -> "AeonModel":
        return AeonModel(self.config, [(n, Value(p.data.copy(), requires_grad=True)) for n, p in self.named_params])

    # -- forward ------------------------------------------------------------
    def _check(self, x):
        x = x if isinstance(x, Value) else Value(x)
        if x.shape[-1] != self.config.input_dim or x.ndim not in (1, 2):
            raise GraphError(f"input of shape {x.shape} does not match input_dim={self.config.input_dim}")
        return x

    def features(self, x) -> Value:
        h = self._check(x)
        for i in range(len(self.config.hidden) + 1):
            h = leaky_relu(h @ self[f"enc{i}.W"] + self[f"enc{i}.b"], self.config.leak)
        return h

    def head(self, feats: Value) -> Value:
        return feats @ self["cls.W"] + self["cls.b"]

    def project(self, feats: Value) -> Value:
        z = leaky_relu(feats @ self["proj0.W"] + self["proj0.b"], self.config.leak)
        z = z @ self["proj1.W"] + self["proj1.b"]
        # eps keeps an all-zero vector finite; it only perturbs norms ~1e-12
        norm = ((z * z).sum(axis=-1, keepdims=True)) ** 0.5 + NORM_EPS
        return z / norm

    def logits(self, x) -> Value:
        return self.head(self.features(x))

    def projection(self, x) -> Value:
        return self.project(self.features(x))

    # -- fast paths without graph construction ------------------------------
    def predict_logits(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        leak = self.config.leak
        for i in range(len(self.config.hidden) + 1):
            h = h @ self[f"enc{i}.W"].data + self[f"enc{i}.b"].data
            h = np.where(h > 0, h, leak * h)
        return h @ self["cls.W"].data + self["cls.b"].data

    def predict_proba(self, x) -> np.ndarray:
        return softmax_np(self.predict_logits(x))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_shapes(cfg: ModelConfig) -> list[tuple[str, int, int]]:
    widths = [cfg.input_dim, *cfg.hidden, cfg.feature_dim]
    shapes = [(f"enc{i}", a, b) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
    shapes.append(("cls", cfg.feature_dim, cfg.num_classes))
    shapes.append(("proj0", cfg.feature_dim, cfg.proj_hidden))
    shapes.append(("proj1", cfg.proj_hidden, cfg.proj_dim))
    return shapes


def init_params(config: ModelConfig, seed: int | None = None) -> AeonModel:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = []
    for name, fan_in, fan_out in _layer_shapes(config):
        bound = glorot_bound(fan_in, fan_out)
        W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.append((f"{name}.W", Value(W, requires_grad=True)))
        params.append((f"{name}.b", Value(np.zeros(fan_out), requires_grad=True)))
    return AeonModel(config, params)


def forward_logits(model: AeonModel, x) -> Value:
    return model.logits(x)


def forward_projection(model: AeonModel, x) -> Value:
    return model.projection(x)


# -- checkpoint format ---------------------------------------------------------
def model_to_dict(model: AeonModel) -> dict:
    cfg = asdict(model.config)
    cfg["hidden"] = list(cfg["hidden"])
    # json floats use repr(), the shortest round-trip decimal
    return {"config": cfg, "params": model.get_flat().tolist()}


def model_from_dict(d: dict) -> AeonModel:
    model = init_params(ModelConfig(**d["config"]))
    model.set_flat(d["params"])
    return model


def save_model(model: AeonModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> AeonModel:
    return model_from_dict(json.loads(Path(path).read_text()))
