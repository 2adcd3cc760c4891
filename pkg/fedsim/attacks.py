"""
Adversario omnisciente: fabrica las actualizaciones de las partes maliciosas.

El adversario ve las actualizaciones benignas de la ronda (nunca los datos
privados de las partes) y decide qué envía cada parte maliciosa.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from . import model as mdl
from . import numerics
from .errors import AttackInfeasibleError, ConfigError, DimensionMismatchError

if TYPE_CHECKING:
    from .config import ThreatSpec

logger = logging.getLogger("fedsim.attacks")


@dataclass
class MaliciousUpdates:
    updates: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.updates)


@dataclass
class AttackContext:
    """
    Lo que el protocolo pone a disposición del adversario en una ronda.

    - ``train_flipped``: entrena los modelos maliciosos con etiquetas volteadas
      y devuelve sus actualizaciones normales (label_flip).
    - ``observed_params`` + ``emit``: modelo observado para el ascenso de
      gradiente y la función que lo convierte en actualización del protocolo
      (parámetros aplanados en FedAvg, predicciones públicas en Cronus).
    """

    train_flipped: Optional[Callable[[], list[np.ndarray]]] = None
    observed_params: Optional[mdl.ModelParams] = None
    emit: Optional[Callable[[mdl.ModelParams], np.ndarray]] = None


# ---------------------------------------------------------------------------
# Ataques
# ---------------------------------------------------------------------------

def attack_label_flip(local_data: mdl.Dataset, num_classes: int) -> mdl.Dataset:
    """Rotación y -> (y + 1) mod C, la misma para todas las partes maliciosas."""
    labels = local_data.labels
    if np.any(labels < 0) or np.any(labels >= num_classes):
        bad = int(np.argmax((labels < 0) | (labels >= num_classes)))
        raise ValueError(f"etiqueta fuera de [0, {num_classes}) en la fila {bad}: {int(labels[bad])}")
    return mdl.Dataset(local_data.features.copy(), (labels + 1) % num_classes)


def _benign_matrix(benign_updates: Sequence) -> np.ndarray:
    if len(benign_updates) == 0:
        raise ValueError("no hay actualizaciones benignas")
    return numerics.stack_vectors(benign_updates)


def attack_paf(benign_updates: Sequence, m: int, magnitude: float) -> MaliciousUpdates:
    x = _benign_matrix(benign_updates)
    theta = x.sum(axis=0) / x.shape[0] + magnitude
    return MaliciousUpdates([theta.copy() for _ in range(m)])


def lie_z(n: int, m: int) -> float:
    """Desplazamiento en desviaciones típicas que aún pasa por benigno."""
    s = math.floor(n / 2 + 1) - m
    p = (n - s) / n
    if not 0.0 < p < 1.0:
        raise AttackInfeasibleError(f"ataque LIE inviable para n={n}, m={m} (p={p:.4f})")
    return numerics.std_normal_quantile(p)


def attack_lie(benign_updates: Sequence, n: int, m: int) -> MaliciousUpdates:
    x = _benign_matrix(benign_updates)
    if x.shape[0] < 2:
        raise ValueError("LIE necesita al menos 2 actualizaciones benignas")
    z = lie_z(n, m)
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)  # poblacional
    theta = mu + z * sigma
    return MaliciousUpdates([theta.copy() for _ in range(m)])


def attack_ofom(benign_updates: Sequence, m: int, magnitude: float) -> MaliciousUpdates:
    if m < 2:
        raise AttackInfeasibleError(f"OFOM necesita al menos 2 partes maliciosas (m={m})")
    x = _benign_matrix(benign_updates)
    total = x.sum(axis=0)
    theta_1 = total / x.shape[0] + magnitude
    theta_2 = (total + theta_1) / (x.shape[0] + 1)
    return MaliciousUpdates([theta_1] + [theta_2.copy() for _ in range(m - 1)])


def attack_grad_ascent(theta_a: mdl.ModelParams, targets: mdl.Dataset, gamma: float) -> mdl.ModelParams:
    if len(targets) == 0:
        raise ValueError("conjunto de objetivos vacío")
    if gamma < 0:
        raise ValueError(f"gamma={gamma} debe ser >= 0")
    _, grad = mdl.loss_and_grad(theta_a, targets)
    return mdl.axpy(theta_a, grad, gamma)


# ---------------------------------------------------------------------------
# Despacho por protocolo
# ---------------------------------------------------------------------------

def craft_for_protocol(
    threat: "ThreatSpec",
    benign_updates: Sequence,
    context: Optional[AttackContext] = None,
) -> MaliciousUpdates:
    """
    Fabrica las ``m`` actualizaciones maliciosas con la forma de las benignas.

    PAF/LIE/OFOM trabajan sobre la representación aplanada (coordenada a
    coordenada entre partes) y se devuelven con la forma original.
    """
    m = threat.malicious_count
    if threat.attack == "none" or m == 0:
        return MaliciousUpdates()
    if len(benign_updates) == 0:
        raise ValueError("el adversario necesita las actualizaciones benignas antes de atacar")
    context = context or AttackContext()

    shape = np.asarray(benign_updates[0]).shape
    flat = [np.asarray(u, dtype=np.float64).reshape(-1) for u in benign_updates]
    n = threat.total_parties or len(flat) + m

    if threat.attack == "paf":
        crafted = attack_paf(flat, m, threat.paf_magnitude)
    elif threat.attack == "lie":
        crafted = attack_lie(flat, n, m)
    elif threat.attack == "ofom":
        crafted = attack_ofom(flat, m, threat.paf_magnitude)
    elif threat.attack == "label_flip":
        if context.train_flipped is None:
            raise ConfigError("label_flip necesita un entrenador de partes maliciosas")
        crafted = MaliciousUpdates(list(context.train_flipped()))
    elif threat.attack == "grad_ascent":
        if threat.target_points is None:
            raise ConfigError("grad_ascent necesita target_points")
        if context.observed_params is None or context.emit is None:
            raise ConfigError("grad_ascent necesita el modelo observado y la función de emisión")
        theta_m = attack_grad_ascent(context.observed_params, threat.target_points, threat.grad_gamma)
        update = np.asarray(context.emit(theta_m), dtype=np.float64)
        crafted = MaliciousUpdates([update.copy() for _ in range(m)])
    else:
        raise ConfigError(f"ataque desconocido: {threat.attack}")

    if len(crafted) != m:
        raise DimensionMismatchError(f"{len(crafted)} actualizaciones maliciosas, se esperaban {m}")
    size = int(np.prod(shape))
    out: list[np.ndarray] = []
    for idx, upd in enumerate(crafted.updates):
        upd = np.asarray(upd, dtype=np.float64)
        if upd.size != size:
            raise DimensionMismatchError(
                f"actualización maliciosa {idx} de tamaño {upd.size}, se esperaba {size}",
                index=idx,
            )
        out.append(upd.reshape(shape))
    logger.debug("ataque %s: %d actualizaciones de forma %s", threat.attack, m, shape)
    return MaliciousUpdates(out)
