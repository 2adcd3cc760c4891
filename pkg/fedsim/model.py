"""
Clasificador feedforward mínimo: forward, backprop exacto y SGD.

Cada parte del simulador entrena su propio modelo con estas funciones. Los
parámetros tienen semántica de valor: ninguna función modifica su entrada.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np

from .errors import ConfigError, DimensionMismatchError

Activation = Literal["tanh", "relu"]


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_sizes: tuple[int, ...]
    num_classes: int
    activation: Activation = "tanh"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ConfigError("input_dim debe ser >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes debe ser >= 2")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"capa oculta inválida en {self.hidden_sizes}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"activación desconocida: {self.activation}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_sizes, self.num_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def num_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    @property
    def label(self) -> str:
        if not self.hidden_sizes:
            return "linear"
        return "-".join(str(h) for h in self.hidden_sizes)


@dataclass(frozen=True)
class ModelParams:
    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        shapes = self.arch.layer_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise DimensionMismatchError("número de capas distinto de la arquitectura")
        for idx, ((fan_in, fan_out), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DimensionMismatchError(
                    f"capa {idx}: forma {w.shape}/{b.shape}, se esperaba "
                    f"{(fan_in, fan_out)}/{(fan_out,)}",
                    index=idx,
                )


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionMismatchError(
                f"{self.features.shape[0]} filas y {self.labels.shape[0]} etiquetas",
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class SoftDataset:
    features: np.ndarray
    soft_labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.atleast_2d(np.asarray(self.features, dtype=np.float64)))
        object.__setattr__(self, "soft_labels", np.atleast_2d(np.asarray(self.soft_labels, dtype=np.float64)))
        if self.features.shape[0] != self.soft_labels.shape[0]:
            raise DimensionMismatchError(
                f"{self.features.shape[0]} filas y {self.soft_labels.shape[0]} etiquetas blandas",
            )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, idx) -> "SoftDataset":
        return SoftDataset(self.features[idx], self.soft_labels[idx])


Batch = Union[Dataset, SoftDataset]


# ---------------------------------------------------------------------------
# Inicialización y (des)aplanado
# ---------------------------------------------------------------------------

def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Glorot uniforme para los pesos, sesgos a cero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(arch, tuple(weights), tuple(biases))


def flatten(params: ModelParams) -> np.ndarray:
    # Orden fijo: capa a capa, pesos (row-major) y luego sesgos.
    parts: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.reshape(-1))
        parts.append(b.reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten(arch: Architecture, v) -> ModelParams:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != arch.num_params:
        raise DimensionMismatchError(
            f"vector de longitud {v.size}, la arquitectura necesita {arch.num_params}",
        )
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in arch.layer_shapes:
        weights.append(v[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(v[pos:pos + fan_out].copy())
        pos += fan_out
    return ModelParams(arch, tuple(weights), tuple(biases))


def axpy(params: ModelParams, grad: ModelParams, scale: float) -> ModelParams:
    """params + scale * grad, capa a capa."""
    return ModelParams(
        params.arch,
        tuple(w + scale * g for w, g in zip(params.weights, grad.weights)),
        tuple(b + scale * g for b, g in zip(params.biases, grad.biases)),
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        # subgradiente 0 en z == 0
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def _check_input(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.arch.input_dim:
        raise DimensionMismatchError(
            f"entrada de dimensión {x.shape[1]}, el modelo espera {params.arch.input_dim}",
        )
    return x


def _forward(params: ModelParams, x: np.ndarray):
    pre, post = [], [x]
    h = x
    last = len(params.weights) - 1
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        if idx < last:
            h = _activate(z, params.arch.activation)
            post.append(h)
        else:
            h = z
    return pre, post, h


def logits(params: ModelParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return _forward(params, x)[2]


def predict_proba(params: ModelParams, x, temperature: float = 1.0) -> np.ndarray:
    """Softmax por filas para una matriz de entradas."""
    return _softmax(logits(params, x) / temperature)


def forward_proba(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("forward_proba espera un único vector")
    return predict_proba(params, x[None, :])[0]


def _targets(batch: Batch, num_classes: int) -> np.ndarray:
    if isinstance(batch, SoftDataset):
        if batch.soft_labels.shape[1] != num_classes:
            raise DimensionMismatchError(
                f"etiquetas blandas con {batch.soft_labels.shape[1]} columnas, C={num_classes}",
            )
        return batch.soft_labels
    labels = batch.labels
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError("etiqueta fuera de rango")
    onehot = np.zeros((labels.size, num_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    return onehot


def loss_and_grad(
    params: ModelParams, batch: Batch, temperature: float = 1.0,
) -> tuple[float, ModelParams]:
    """Entropía cruzada media (etiquetas duras o blandas) y su gradiente exacto."""
    if len(batch) == 0:
        raise ValueError("lote vacío")
    x = _check_input(params, batch.features)
    q = _targets(batch, params.arch.num_classes)
    n = x.shape[0]

    pre, post, out = _forward(params, x)
    scaled = out / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    loss = float(-(q * log_p).sum() / n)

    # d(-sum q log softmax(z/T))/dz = (p * sum(q) - q) / T; no se renormaliza q.
    delta = (p * q.sum(axis=1, keepdims=True) - q) / (temperature * n)

    grads_w: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    grads_b: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    for idx in range(len(params.weights) - 1, -1, -1):
        grads_w[idx] = post[idx].T @ delta
        grads_b[idx] = delta.sum(axis=0)
        if idx > 0:
            upstream = delta @ params.weights[idx].T
            delta = upstream * _activation_grad(pre[idx - 1], post[idx], params.arch.activation)
    return loss, ModelParams(params.arch, tuple(grads_w), tuple(grads_b))


def mean_loss(params: ModelParams, batch: Batch, temperature: float = 1.0) -> float:
    return loss_and_grad(params, batch, temperature)[0]


# ---------------------------------------------------------------------------
# Entrenamiento y evaluación
# ---------------------------------------------------------------------------

def _sgd_pass(
    params: ModelParams,
    batch_source: Batch,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    temperature: float,
) -> ModelParams:
    order = rng.permutation(len(batch_source))
    for start in range(0, order.size, batch_size):
        batch = batch_source.subset(order[start:start + batch_size])
        _, grad = loss_and_grad(params, batch, temperature)
        params = axpy(params, grad, -lr)
    return params


def sgd_epochs(
    params: ModelParams,
    data: Dataset,
    soft_data: Optional[SoftDataset] = None,
    lr: float = 0.1,
    batch_size: int = 32,
    epochs: int = 1,
    seed: int = 0,
    *,
    lr_public: Optional[float] = None,
    temperature: float = 1.0,
) -> ModelParams:
    """
    Minibatch SGD. Con ``soft_data`` cada época recorre primero los lotes de
    etiquetas duras y después los de etiquetas blandas, barajados por separado.
    """
    if len(data) == 0:
        raise ValueError("datos de entrenamiento vacíos")
    if lr < 0 or (lr_public is not None and lr_public < 0):
        raise ValueError("la tasa de aprendizaje no puede ser negativa")
    if batch_size < 1:
        raise ValueError("batch_size debe ser >= 1")
    public_lr = lr if lr_public is None else lr_public
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        params = _sgd_pass(params, data, lr, batch_size, rng, 1.0)
        if soft_data is not None and len(soft_data) > 0:
            params = _sgd_pass(params, soft_data, public_lr, batch_size, rng, temperature)
    return params


def predict_labels(params: ModelParams, x) -> np.ndarray:
    # np.argmax resuelve empates con el índice más bajo
    return np.argmax(logits(params, x), axis=1)


def accuracy(params: ModelParams, test: Dataset) -> float:
    if len(test) == 0:
        raise ValueError("conjunto de test vacío")
    return float(np.mean(predict_labels(params, test.features) == test.labels))
