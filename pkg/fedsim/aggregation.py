"""
Reglas de agregación del servidor.

Todas reciben una actualización por parte, en orden de índice de parte, y son
deterministas dadas (entradas, semilla).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from . import numerics
from .errors import ConfigError, DimensionMismatchError, FedSimError, WeightCollapseError

logger = logging.getLogger("fedsim.aggregation")

AggregatorName = Literal["mean", "median", "trimmed_mean", "mwu_avg", "mwu_opt", "krum", "bulyan", "cronus"]
CronusMode = Literal["practical", "randomized"]

DISTANCE_FLOOR = 1e-12
CRONUS_VARIANCE_THRESHOLD = 9.0


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass
class AggregationInput:
    updates: np.ndarray
    data_sizes: Optional[np.ndarray] = None
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        self.updates = numerics.stack_vectors(list(self.updates))
        if self.data_sizes is not None:
            sizes = np.asarray(self.data_sizes, dtype=np.float64).reshape(-1)
            if sizes.size != self.updates.shape[0]:
                raise DimensionMismatchError(
                    f"{sizes.size} tamaños de datos para {self.updates.shape[0]} partes",
                    index=min(sizes.size, self.updates.shape[0]),
                )
            self.data_sizes = sizes
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigError(f"epsilon={self.epsilon} fuera de [0, 0.5)")

    @property
    def n(self) -> int:
        return int(self.updates.shape[0])

    def party_weights(self) -> np.ndarray:
        if self.data_sizes is None:
            return np.ones(self.n)
        return self.data_sizes


@dataclass
class AggregationResult:
    vector: np.ndarray
    selected_index: Optional[int] = None
    flagged_samples: list[int] = field(default_factory=list)


@dataclass
class CronusAggregate:
    matrix: np.ndarray
    flagged_samples: list[int] = field(default_factory=list)
    removed_counts: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Media y mediana
# ---------------------------------------------------------------------------

def agg_mean(inp: AggregationInput) -> np.ndarray:
    return numerics.mean_vec(inp.updates, inp.party_weights())


def agg_median(inp: AggregationInput) -> np.ndarray:
    weights = inp.party_weights()
    return np.array([
        numerics.weighted_median(inp.updates[:, j], weights)
        for j in range(inp.updates.shape[1])
    ])


def _selection_count(n: int, epsilon: float) -> int:
    # ceil((1 - 2 eps) n), tolerante a errores de redondeo en eps * n
    return int(math.ceil((1.0 - 2.0 * epsilon) * n - 1e-9))


def trimmed_mean(updates: Sequence, epsilon: float) -> np.ndarray:
    """Por coordenada, media de los ceil((1-2eps)n) valores más cercanos a la mediana."""
    if not 0.0 <= epsilon < 0.5:
        raise ConfigError(f"epsilon={epsilon} fuera de [0, 0.5)")
    x = numerics.stack_vectors(list(updates))
    n, d = x.shape
    keep = _selection_count(n, epsilon)
    if keep < 1:
        raise ValueError(f"selección vacía para n={n}, epsilon={epsilon}")
    out = np.empty(d)
    for j in range(d):
        column = x[:, j]
        mu = numerics.lower_median(column)
        # empates: menor distancia y después menor índice de parte
        order = np.argsort(np.abs(column - mu), kind="stable")
        out[j] = column[order[:keep]].mean()
    return out


# ---------------------------------------------------------------------------
# Krum / Bulyan
# ---------------------------------------------------------------------------

def krum_neighbors(n: int, epsilon: float) -> int:
    return int(math.floor((1.0 - epsilon) * n + 1e-9)) - 2


def _pairwise_sq_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def krum_scores(updates: np.ndarray, num_neighbors: int) -> np.ndarray:
    dist = _pairwise_sq_distances(updates)
    n = updates.shape[0]
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(dist[i], i)
        scores[i] = np.sort(others)[:num_neighbors].sum()
    return scores


def _krum_select(updates: np.ndarray, num_neighbors: int) -> int:
    scores = krum_scores(updates, num_neighbors)
    # np.argmin devuelve el primer mínimo: desempate por índice menor
    return int(np.argmin(scores))


def agg_krum(inp: AggregationInput) -> tuple[np.ndarray, int]:
    k = krum_neighbors(inp.n, inp.epsilon)
    if k < 1:
        raise ConfigError(
            f"Krum necesita (1-eps)n - 2 >= 1 vecinos; n={inp.n}, epsilon={inp.epsilon}",
        )
    k = min(k, inp.n - 1)
    idx = _krum_select(inp.updates, k)
    return inp.updates[idx].copy(), idx


def bulyan_select(updates: np.ndarray, epsilon: float) -> list[int]:
    """Índices elegidos por Krum iterado hasta reunir ceil((1-2eps)n) candidatos."""
    n = updates.shape[0]
    target = _selection_count(n, epsilon)
    if target < 1:
        raise ValueError(f"Bulyan: selección vacía para n={n}, epsilon={epsilon}")
    remaining = list(range(n))
    selected: list[int] = []
    while len(selected) < target:
        if not remaining:
            raise FedSimError("Bulyan: candidatos agotados antes de completar S", code="bulyan_exhausted")
        if len(remaining) == 1:
            pick = 0
        else:
            k = krum_neighbors(len(remaining), epsilon)
            k = min(max(k, 1), len(remaining) - 1)
            pick = _krum_select(updates[remaining], k)
        selected.append(remaining.pop(pick))
    return selected


def agg_bulyan(inp: AggregationInput) -> np.ndarray:
    if krum_neighbors(inp.n, inp.epsilon) < 1:
        raise ConfigError(
            f"Bulyan necesita (1-eps)n - 2 >= 1; n={inp.n}, epsilon={inp.epsilon}",
        )
    chosen = bulyan_select(inp.updates, inp.epsilon)
    return trimmed_mean(inp.updates[chosen], inp.epsilon)


# ---------------------------------------------------------------------------
# MWU
# ---------------------------------------------------------------------------

def _normalized(log_w: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(log_w)):
        raise WeightCollapseError("weight collapse: pesos no finitos")
    # en escala lineal todos los pesos subdesbordan a cero: no se renormaliza
    if not np.any(np.exp(log_w) > 0.0):
        raise WeightCollapseError(
            f"weight collapse: todos los pesos valen 0 (log-peso máximo {log_w.max():.1f})",
        )
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def mwu_weights(
    inp: AggregationInput, variant: Literal["avg", "opt"] = "avg", iters: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Multiplicative weights update con media ponderada (avg) o pesos CRH (opt).

    Devuelve el agregado y los pesos normalizados de la última iteración. Los
    pesos de ``avg`` se acumulan en escala logarítmica, pero si en escala
    lineal quedan todos a cero se lanza ``WeightCollapseError``.
    """
    if iters < 1:
        raise ConfigError("iters debe ser >= 1")
    if variant not in ("avg", "opt"):
        raise ConfigError(f"variante MWU desconocida: {variant}")
    x = inp.updates
    if inp.n == 1:
        return x[0].copy(), np.ones(1)
    theta = numerics.mean_vec(x, inp.party_weights())
    log_w = np.zeros(inp.n)
    w = np.full(inp.n, 1.0 / inp.n)
    for _ in range(iters):
        dist = np.maximum(np.linalg.norm(x - theta, axis=1), DISTANCE_FLOOR)
        if variant == "avg":
            log_w = log_w - dist
            w = _normalized(log_w)
        else:
            w = -np.log(dist / dist.sum())
            total = w.sum()
            if not np.all(np.isfinite(w)) or total <= 0:
                raise WeightCollapseError("weight collapse: pesos CRH nulos o no finitos")
            w = w / total
        theta = w @ x
    return theta, w


def agg_mwu(inp: AggregationInput, variant: Literal["avg", "opt"] = "avg", iters: int = 10) -> np.ndarray:
    return mwu_weights(inp, variant, iters)[0]


# ---------------------------------------------------------------------------
# Cronus
# ---------------------------------------------------------------------------

def _projections(points: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    centre = points.mean(axis=0)
    pair = numerics.top_eigenpair(numerics.covariance(points))
    return np.abs((points - centre) @ pair.vector), pair.value, centre


def _filter_practical(
    points: np.ndarray,
    epsilon: float,
    iterations: int,
    early_exit: bool,
    threshold: float,
) -> tuple[np.ndarray, bool, int]:
    alive = np.arange(points.shape[0])
    flagged = False
    for _ in range(iterations):
        if alive.size < 2:
            break
        proj, lam, _ = _projections(points[alive])
        if early_exit and lam <= threshold:
            break
        remove = int(math.ceil(epsilon / 2.0 * alive.size - 1e-9))
        if remove <= 0:
            break
        if remove >= alive.size:
            flagged = True
            break
        # mayor proyección primero; con empate se retira antes el índice menor
        order = np.lexsort((alive, -proj))
        alive = np.sort(alive[order[remove:]])
    return points[alive].mean(axis=0), flagged, points.shape[0] - alive.size


def _filter_randomized(
    points: np.ndarray, threshold: float, rng: np.random.Generator,
) -> tuple[np.ndarray, bool, int]:
    alive = np.arange(points.shape[0])
    for _ in range(points.shape[0]):
        if alive.size < 2:
            break
        proj, lam, _ = _projections(points[alive])
        if lam <= threshold:
            break
        # Z con densidad 2x en [0, 1]: inversa de la CDF, Z = sqrt(U)
        z = math.sqrt(rng.random())
        cut = z * proj.max()
        keep = alive[proj < cut]
        if keep.size == 0:
            return points[alive].mean(axis=0), True, points.shape[0] - alive.size
        alive = keep
    return points[alive].mean(axis=0), False, points.shape[0] - alive.size


def agg_cronus(
    predictions: Sequence,
    epsilon: float,
    mode: CronusMode = "practical",
    rng_seed: int = 0,
    *,
    filter_iterations: int = 2,
    early_exit: bool = False,
    threshold: float = CRONUS_VARIANCE_THRESHOLD,
) -> CronusAggregate:
    """Filtro espectral por muestra pública sobre las matrices de predicción de las partes."""
    if len(predictions) < 2:
        raise ValueError("Cronus necesita al menos 2 partes")
    if not 0.0 <= epsilon < 0.5:
        raise ConfigError(f"epsilon={epsilon} fuera de [0, 0.5)")
    if mode not in ("practical", "randomized"):
        raise ConfigError(f"modo Cronus desconocido: {mode}")
    first = np.atleast_2d(np.asarray(predictions[0], dtype=np.float64))
    mats = [first]
    for idx, pred in enumerate(predictions[1:], start=1):
        mat = np.atleast_2d(np.asarray(pred, dtype=np.float64))
        if mat.shape != first.shape:
            raise DimensionMismatchError(
                f"la parte {idx} envía predicciones {mat.shape}, se esperaba {first.shape}",
                index=idx,
            )
        mats.append(mat)
    stacked = np.stack(mats)  # (n, k, C)

    num_samples = first.shape[0]
    out = np.empty_like(first)
    flagged: list[int] = []
    removed: list[int] = []
    for k in range(num_samples):
        points = stacked[:, k, :]
        if mode == "practical":
            mean, flag, gone = _filter_practical(points, epsilon, filter_iterations, early_exit, threshold)
        else:
            rng = np.random.default_rng([rng_seed, k])
            mean, flag, gone = _filter_randomized(points, threshold, rng)
        out[k] = mean
        removed.append(gone)
        if flag:
            flagged.append(k)
            logger.debug("muestra %d marcada: el filtro vaciaría el conjunto", k)
    if flagged:
        logger.warning("cronus: %d muestra(s) marcadas por el filtro", len(flagged))
    return CronusAggregate(matrix=out, flagged_samples=flagged, removed_counts=removed)


# ---------------------------------------------------------------------------
# Despacho
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregatorOptions:
    mwu_iters: int = 10
    cronus_mode: CronusMode = "practical"
    filter_iterations: int = 2
    early_exit: bool = False
    variance_threshold: float = CRONUS_VARIANCE_THRESHOLD
    seed: int = 0


def aggregate(
    rule: str,
    updates: Sequence,
    *,
    epsilon: float = 0.0,
    data_sizes: Optional[Sequence[float]] = None,
    options: AggregatorOptions = AggregatorOptions(),
) -> AggregationResult:
    """Aplica la regla ``rule`` a vectores planos (Cronus: una fila por parte y muestra única)."""
    if rule == "cronus":
        shaped = [np.atleast_2d(np.asarray(u, dtype=np.float64)) for u in updates]
        result = agg_cronus(
            shaped, epsilon, options.cronus_mode, options.seed,
            filter_iterations=options.filter_iterations,
            early_exit=options.early_exit,
            threshold=options.variance_threshold,
        )
        return AggregationResult(result.matrix.reshape(-1), flagged_samples=result.flagged_samples)

    inp = AggregationInput(updates=updates, data_sizes=data_sizes, epsilon=epsilon)
    if rule == "mean":
        return AggregationResult(agg_mean(inp))
    if rule == "median":
        return AggregationResult(agg_median(inp))
    if rule == "trimmed_mean":
        return AggregationResult(trimmed_mean(inp.updates, epsilon))
    if rule == "krum":
        vec, idx = agg_krum(inp)
        return AggregationResult(vec, selected_index=idx)
    if rule == "bulyan":
        return AggregationResult(agg_bulyan(inp))
    if rule == "mwu_avg":
        return AggregationResult(agg_mwu(inp, "avg", options.mwu_iters))
    if rule == "mwu_opt":
        return AggregationResult(agg_mwu(inp, "opt", options.mwu_iters))
    raise ConfigError(f"regla de agregación desconocida: {rule}")
