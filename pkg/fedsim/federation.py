"""
Orquestador por rondas: partes, servidor, FedAvg y el protocolo Cronus.

Cada ronda es una barrera: todas las actualizaciones de la ronda se calculan
antes de agregar. El entrenamiento de las partes puede ir en hilos; el orden
de resultados es siempre el índice de parte y cada parte usa su propio flujo
de semillas, así que el número de hilos no cambia el resultado.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from . import model as mdl
from .aggregation import AggregatorOptions, aggregate, agg_cronus
from .attacks import AttackContext, attack_label_flip, craft_for_protocol
from .config import ProtocolConfig, ThreatSpec
from .errors import ConfigError, DimensionMismatchError, FedSimError, RoundError

logger = logging.getLogger("fedsim.federation")

T = TypeVar("T")
R = TypeVar("R")

# Flujos de semilla por uso (segundo componente de la SeedSequence).
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_PRETRAIN = 3
STREAM_SUBSET = 4
STREAM_FILTER = 5


# ---------------------------------------------------------------------------
# Tipos
# ---------------------------------------------------------------------------

@dataclass
class Party:
    index: int
    arch: mdl.Architecture
    params: mdl.ModelParams
    local_data: mdl.Dataset
    rng_seed: int
    is_malicious: bool = False

    def __post_init__(self) -> None:
        if self.params.arch != self.arch:
            raise DimensionMismatchError(
                f"parte {self.index}: parámetros de otra arquitectura", index=self.index,
            )


@dataclass
class RoundRecord:
    round: int
    per_party_test_accuracy: list[float]
    aggregate_checksum: str
    aggregate_norm: float
    attack_name: str
    filtered_flags: list[int] = field(default_factory=list)
    loss_gap: Optional[float] = None


def derive_seed(master_seed: int, stream: int, party: int, round_: int) -> int:
    """Semilla de 64 bits determinista para (semilla maestra, flujo, parte, ronda)."""
    seq = np.random.SeedSequence([master_seed, stream, party, round_])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def checksum(vector: np.ndarray) -> str:
    data = np.ascontiguousarray(vector, dtype=np.float64).tobytes()
    return hashlib.sha256(data).hexdigest()[:16]


def _map_parties(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _epsilon(cfg: ProtocolConfig, n: int) -> float:
    if cfg.epsilon_assumed is not None:
        return cfg.epsilon_assumed
    return cfg.threat.malicious_count / n if n else 0.0


def _aggregator_options(cfg: ProtocolConfig, seed: int) -> AggregatorOptions:
    return AggregatorOptions(
        mwu_iters=cfg.mwu_iters,
        cronus_mode=cfg.cronus_mode,
        filter_iterations=cfg.filter_iterations,
        early_exit=cfg.early_exit,
        variance_threshold=cfg.variance_threshold,
        seed=seed,
    )


def _round_error(round_: int, exc: Exception) -> RoundError:
    return RoundError(
        f"ronda {round_}: {exc}", round=round_, cause_code=getattr(exc, "code", None),
    )


def loss_gap(params: mdl.ModelParams, targets: Optional[mdl.Dataset]) -> Optional[float]:
    """Pérdida media en no-miembros menos en miembros (primera mitad de ``targets``)."""
    if targets is None or len(targets) < 2:
        return None
    half = len(targets) // 2
    members = targets.subset(np.arange(half))
    outsiders = targets.subset(np.arange(half, len(targets)))
    return mdl.mean_loss(params, outsiders) - mdl.mean_loss(params, members)


def adversary_boundary(
    benign_updates: Sequence[np.ndarray],
    threat: ThreatSpec,
    context: Optional[AttackContext] = None,
) -> list[np.ndarray]:
    """Lista completa en orden de parte: benignas primero, bloque malicioso al final."""
    crafted = craft_for_protocol(threat, list(benign_updates), context)
    return [*benign_updates, *crafted.updates]


def _split_parties(parties: Sequence[Party]) -> tuple[list[Party], list[Party]]:
    benign = [p for p in parties if not p.is_malicious]
    malicious = [p for p in parties if p.is_malicious]
    if not benign:
        raise ConfigError("se necesita al menos una parte benigna")
    if [p.index for p in benign + malicious] != sorted(p.index for p in parties):
        raise ConfigError("las partes maliciosas deben ocupar los índices más altos")
    return benign, malicious


def _check_threat(cfg: ProtocolConfig, malicious: list[Party]) -> None:
    m = cfg.threat.malicious_count if cfg.threat.attack != "none" else 0
    if m != len(malicious):
        raise ConfigError(f"threat.malicious_count={m} pero hay {len(malicious)} partes maliciosas")


# ---------------------------------------------------------------------------
# FedAvg
# ---------------------------------------------------------------------------

def run_fedavg(
    parties: list[Party],
    public_test: mdl.Dataset,
    cfg: ProtocolConfig,
    *,
    master_seed: int = 0,
    workers: int = 1,
) -> list[RoundRecord]:
    """
    Intercambio de parámetros: cada ronda las partes entrenan desde el modelo
    global, el servidor agrega y el resultado sobrescribe todos los modelos.
    """
    benign, malicious = _split_parties(parties)
    _check_threat(cfg, malicious)
    arch = benign[0].arch
    if any(p.arch != arch for p in parties):
        raise ConfigError("FedAvg exige arquitecturas homogéneas")

    threat = cfg.threat
    n = len(parties)
    epsilon = _epsilon(cfg, n)
    data_sizes = [len(p.local_data) for p in parties]
    global_params = benign[0].params
    for p in parties:
        p.params = global_params

    def local_train(party: Party, data: mdl.Dataset, round_: int) -> np.ndarray:
        trained = mdl.sgd_epochs(
            global_params, data,
            lr=cfg.lr_private, batch_size=cfg.batch_size, epochs=cfg.local_epochs,
            seed=derive_seed(master_seed, STREAM_TRAIN, party.index, round_),
        )
        return mdl.flatten(trained)

    records: list[RoundRecord] = []
    for t in range(1, cfg.rounds + 1):
        benign_updates = _map_parties(lambda p: local_train(p, p.local_data, t), benign, workers)

        context = AttackContext(
            train_flipped=lambda: _map_parties(
                lambda p: local_train(p, attack_label_flip(p.local_data, arch.num_classes), t),
                malicious, workers,
            ),
            observed_params=global_params,
            emit=mdl.flatten,
        )
        try:
            updates = adversary_boundary(benign_updates, threat, context)
            result = aggregate(
                cfg.aggregator, updates,
                epsilon=epsilon, data_sizes=data_sizes,
                options=_aggregator_options(cfg, derive_seed(master_seed, STREAM_FILTER, 0, t)),
            )
            global_params = mdl.unflatten(arch, result.vector)
        except FedSimError as exc:
            raise _round_error(t, exc) from exc
        except ValueError as exc:
            raise _round_error(t, exc) from exc

        for p in parties:
            p.params = global_params
        acc = mdl.accuracy(global_params, public_test)
        records.append(RoundRecord(
            round=t,
            per_party_test_accuracy=[acc] * len(benign),
            aggregate_checksum=checksum(result.vector),
            aggregate_norm=float(np.linalg.norm(result.vector)),
            attack_name=threat.attack,
            loss_gap=loss_gap(global_params, threat.target_points) if threat.attack == "grad_ascent" else None,
        ))
        logger.info("fedavg ronda %d/%d (%s, %s): precisión %.4f", t, cfg.rounds, cfg.aggregator, threat.attack, acc)
    return records


# ---------------------------------------------------------------------------
# Cronus
# ---------------------------------------------------------------------------

def _round_subset(cfg: ProtocolConfig, master_seed: int, round_: int, size: int) -> np.ndarray:
    k = cfg.public_subset_per_round
    if k is None or k >= size:
        return np.arange(size)
    rng = np.random.default_rng(derive_seed(master_seed, STREAM_SUBSET, 0, round_))
    return np.sort(rng.choice(size, size=k, replace=False))


def pretrain(
    parties: Sequence[Party],
    epochs: int,
    cfg: ProtocolConfig,
    *,
    master_seed: int = 0,
    workers: int = 1,
    flip: bool = False,
) -> None:
    """Fase de inicialización: entrenamiento local sin colaboración."""
    if epochs <= 0:
        return

    def train(p: Party) -> mdl.ModelParams:
        data = attack_label_flip(p.local_data, p.arch.num_classes) if (flip and p.is_malicious) else p.local_data
        return mdl.sgd_epochs(
            p.params, data,
            lr=cfg.lr_private, batch_size=cfg.batch_size, epochs=epochs,
            seed=derive_seed(master_seed, STREAM_PRETRAIN, p.index, 0),
        )

    for p, params in zip(parties, _map_parties(train, list(parties), workers)):
        p.params = params


def run_cronus(
    parties: list[Party],
    public_features: np.ndarray,
    public_test: mdl.Dataset,
    cfg: ProtocolConfig,
    *,
    master_seed: int = 0,
    workers: int = 1,
) -> list[RoundRecord]:
    """
    Intercambio de conocimiento: las partes comparten predicciones sobre X_p,
    el servidor las agrega con el filtro robusto y cada parte se ajusta con su
    D_i más (X_p, Ȳ). Los modelos locales nunca se sobrescriben.
    """
    benign, malicious = _split_parties(parties)
    _check_threat(cfg, malicious)
    public_features = np.atleast_2d(np.asarray(public_features, dtype=np.float64))
    if public_features.shape[0] < 1:
        raise ConfigError("el conjunto público está vacío")
    if cfg.public_subset_per_round is not None and cfg.public_subset_per_round > public_features.shape[0]:
        raise ConfigError(
            f"public_subset_per_round={cfg.public_subset_per_round} > |X_p|={public_features.shape[0]}"
        )
    num_classes = {p.arch.num_classes for p in parties}
    if len(num_classes) != 1:
        raise ConfigError("todas las partes deben compartir el número de clases")

    threat = cfg.threat
    flips = threat.attack == "label_flip"
    # Las partes maliciosas que entrenan modelos propios siguen el ciclo benigno.
    trained_malicious = malicious if threat.attack in ("label_flip", "grad_ascent") else []
    learners = benign + trained_malicious
    epsilon = _epsilon(cfg, len(parties))

    pretrain(learners, cfg.t1, cfg, master_seed=master_seed, workers=workers, flip=flips)

    def party_data(p: Party) -> mdl.Dataset:
        if flips and p.is_malicious:
            return attack_label_flip(p.local_data, p.arch.num_classes)
        return p.local_data

    records: list[RoundRecord] = []
    for t in range(1, cfg.t2 + 1):
        idx = _round_subset(cfg, master_seed, t, public_features.shape[0])
        x_round = public_features[idx]

        benign_preds = _map_parties(lambda p: mdl.predict_proba(p.params, x_round), benign, workers)
        observed = trained_malicious[0].params if trained_malicious else None
        context = AttackContext(
            train_flipped=lambda: [mdl.predict_proba(p.params, x_round) for p in malicious],
            observed_params=observed,
            emit=lambda params: mdl.predict_proba(params, x_round),
        )
        try:
            updates = adversary_boundary(benign_preds, threat, context)
            for pos, mat in enumerate(updates):
                if np.shape(mat) != benign_preds[0].shape:
                    raise DimensionMismatchError(
                        f"la parte {pos} envía predicciones {np.shape(mat)}, se esperaba {benign_preds[0].shape}",
                        index=pos,
                    )
            agg = agg_cronus(
                updates, epsilon, cfg.cronus_mode,
                derive_seed(master_seed, STREAM_FILTER, 0, t),
                filter_iterations=cfg.filter_iterations,
                early_exit=cfg.early_exit,
                threshold=cfg.variance_threshold,
            )
        except FedSimError as exc:
            raise _round_error(t, exc) from exc
        except ValueError as exc:
            raise _round_error(t, exc) from exc

        soft = mdl.SoftDataset(x_round, agg.matrix)

        def fine_tune(p: Party) -> mdl.ModelParams:
            return mdl.sgd_epochs(
                p.params, party_data(p), soft,
                lr=cfg.lr_private, lr_public=cfg.public_lr,
                batch_size=cfg.batch_size, epochs=cfg.local_epochs,
                seed=derive_seed(master_seed, STREAM_TRAIN, p.index, t),
                temperature=cfg.temperature,
            )

        for p, params in zip(learners, _map_parties(fine_tune, learners, workers)):
            p.params = params

        accs = [mdl.accuracy(p.params, public_test) for p in benign]
        records.append(RoundRecord(
            round=t,
            per_party_test_accuracy=accs,
            aggregate_checksum=checksum(agg.matrix),
            aggregate_norm=float(np.linalg.norm(agg.matrix)),
            attack_name=threat.attack,
            filtered_flags=list(agg.flagged_samples),
            loss_gap=loss_gap(benign[0].params, threat.target_points) if threat.attack == "grad_ascent" else None,
        ))
        logger.info(
            "cronus ronda %d/%d (%s): precisión media %.4f, %d muestra(s) marcadas",
            t, cfg.t2, threat.attack, float(np.mean(accs)), len(agg.flagged_samples),
        )
    return records
