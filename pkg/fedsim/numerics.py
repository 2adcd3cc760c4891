from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConvergenceError, DimensionMismatchError

# Parámetros de la iteración de potencia.
POWER_MAX_ITER = 10000
POWER_RESIDUAL_TOL = 1e-8
SYMMETRY_TOL = 1e-9
POWER_START_SEED = 20240607


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


def as_vector(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


def stack_vectors(vectors: Sequence) -> np.ndarray:
    """Apila vectores en una matriz (n, d); el error nombra el índice que no encaja."""
    if len(vectors) == 0:
        raise ValueError("lista de vectores vacía")
    first = as_vector(vectors[0])
    rows = [first]
    for idx, vec in enumerate(vectors[1:], start=1):
        arr = as_vector(vec)
        if arr.shape != first.shape:
            raise DimensionMismatchError(
                f"el vector {idx} tiene dimensión {arr.size}, se esperaba {first.size}",
                index=idx,
            )
        rows.append(arr)
    return np.vstack(rows)


def _check_weights(weights: Sequence[float], count: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != count:
        raise DimensionMismatchError(
            f"{w.size} pesos para {count} valores", index=min(w.size, count),
        )
    if np.any(~np.isfinite(w)):
        raise ValueError("pesos no finitos")
    if np.any(w < 0):
        raise ValueError(f"peso negativo en la posición {int(np.argmax(w < 0))}")
    if w.sum() <= 0:
        raise ValueError("la suma de pesos es cero")
    return w


def mean_vec(vectors: Sequence, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    x = stack_vectors(vectors)
    if weights is None:
        return x.mean(axis=0)
    w = _check_weights(weights, x.shape[0])
    return (w @ x) / w.sum()


def covariance(vectors: Sequence) -> np.ndarray:
    """Covarianza poblacional (divisor n)."""
    x = stack_vectors(vectors)
    if x.shape[0] < 2:
        raise ValueError("se necesitan al menos 2 vectores para la covarianza")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    return (cov + cov.T) / 2.0


def _power_iteration(m: np.ndarray, start: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """Itera hasta que el residuo ||Mv - lv|| cumple la tolerancia relativa."""
    v = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        w = m @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) <= POWER_RESIDUAL_TOL * max(1.0, abs(lam)):
            return lam, v, True
        v = w / np.linalg.norm(w)
    return lam, v, False


def _starts(m: np.ndarray) -> list[np.ndarray]:
    # Cualquier arranque fijo puede ser ortogonal al autovector principal:
    # se prueba también la base de la mayor diagonal y un vector aleatorio fijo.
    d = m.shape[0]
    basis = np.zeros(d)
    basis[int(np.argmax(np.diag(m)))] = 1.0
    return [np.ones(d), basis, np.random.default_rng(POWER_START_SEED).standard_normal(d)]


def _dominant(m: np.ndarray) -> EigenPair:
    best: Optional[EigenPair] = None
    last: tuple[float, np.ndarray] = (0.0, np.ones(m.shape[0]))
    for start in _starts(m):
        lam, v, ok = _power_iteration(m, start)
        if not ok:
            last = (lam, v)
            continue
        if best is None or lam > best.value + 1e-12 * max(1.0, abs(best.value)):
            best = EigenPair(value=lam, vector=v)
    if best is None:
        lam, v = last
        raise ConvergenceError(
            f"iteración de potencia sin converger tras {POWER_MAX_ITER} pasos "
            f"(residuo {float(np.linalg.norm(m @ v - lam * v)):.3e})",
            value=lam, vector=v,
        )
    return best


def top_eigenpair(m) -> EigenPair:
    """Autopar de mayor autovalor de una matriz simétrica por iteración de potencia."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"matriz no cuadrada: {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and float(np.max(np.abs(m - m.T))) > SYMMETRY_TOL * scale:
        raise ValueError("la matriz no es simétrica")
    if m.shape[0] == 0:
        raise DimensionMismatchError("matriz vacía")

    pair = _dominant(m)
    if pair.value < 0:
        # El dominante en módulo es negativo: desplazar para que el mayor
        # autovalor algebraico pase a ser el dominante.
        shift = -pair.value
        shifted = _dominant(m + shift * np.eye(m.shape[0]))
        pair = EigenPair(value=shifted.value - shift, vector=shifted.vector)
    return pair


def weighted_median(values: Sequence[float], weights: Sequence[float]) -> float:
    """Mediana ponderada con convención inferior: primer valor con peso acumulado >= 1/2."""
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size == 0:
        raise ValueError("mediana de una lista vacía")
    w = _check_weights(weights, vals.size)
    order = np.argsort(vals, kind="stable")
    cumulative = np.cumsum(w[order])
    pos = int(np.searchsorted(cumulative, 0.5 * cumulative[-1], side="left"))
    return float(vals[order[min(pos, vals.size - 1)]])


def lower_median(values) -> float:
    vals = np.sort(np.asarray(values, dtype=np.float64).reshape(-1), kind="stable")
    return float(vals[(vals.size - 1) // 2])


def std_normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p={p} fuera de (0, 1)")
    return float(norm.ppf(p))


def std_normal_cdf(z: float) -> float:
    return float(norm.cdf(z))


def l2_distance(a, b) -> float:
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            f"dimensiones distintas: {va.size} y {vb.size}", index=1,
        )
    return float(np.linalg.norm(va - vb))
