"""
Arnés de experimentos: ejecución benigna, barrido de ataques con el número de
partes maliciosas justo por debajo del punto de ruptura, línea base local y
el informe de robustez.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import model as mdl
from .config import ExperimentConfig, ProtocolConfig, settings
from .data import DataSplit, gen_synthetic, load_csv, synthetic_shard
from .errors import ConfigError, RoundError
from .federation import (
    STREAM_INIT,
    Party,
    RoundRecord,
    derive_seed,
    run_cronus,
    run_fedavg,
)

logger = logging.getLogger("fedsim.experiments")

STREAM_STANDALONE = 20
STREAM_TARGETS = 21
STREAM_CENTRALIZED = 22
SIGNIFICANT_DIGITS = 6


def sig(value: float, digits: int = SIGNIFICANT_DIGITS) -> float:
    return float(f"{value:.{digits}g}")


# ---------------------------------------------------------------------------
# Punto de ruptura y complejidad de muestra
# ---------------------------------------------------------------------------

_BREAKING_POINT: dict[str, Callable[[int, int], bool]] = {
    # (m, n) -> m/n por debajo del punto de ruptura de la regla
    "median": lambda m, n: Fraction(m, n) < Fraction(1, 2),
    "mwu_avg": lambda m, n: Fraction(m, n) < Fraction(1, 2),
    "mwu_opt": lambda m, n: Fraction(m, n) < Fraction(1, 2),
    "cronus": lambda m, n: Fraction(m, n) < Fraction(1, 2),
    "krum": lambda m, n: Fraction(m, n) < Fraction(n - 2, 2 * n),
    "bulyan": lambda m, n: Fraction(m, n) < Fraction(n - 3, 4 * n),
}


def breaking_point_malicious(aggregator: str, benign: int) -> int:
    """Mayor número de partes maliciosas por debajo del punto de ruptura de ``aggregator``."""
    if benign < 1:
        raise ConfigError("se necesita al menos una parte benigna")
    if aggregator == "mean":
        return 1
    try:
        below = _BREAKING_POINT[aggregator]
    except KeyError:
        raise ConfigError(f"agregador sin punto de ruptura conocido: {aggregator}") from None
    # Las reglas de mayoría no admiten más maliciosas que benignas.
    for m in range(benign, 0, -1):
        if below(m, benign + m):
            return m
    return 0


def sample_complexity_ratio(d_params: int, d_preds: int) -> float:
    """Cociente de complejidad de muestra (d log d) entre compartir parámetros y predicciones."""
    if d_params < 2 or d_preds < 2:
        raise ValueError("las dimensiones deben ser >= 2")
    return (d_params * math.log(d_params)) / (d_preds * math.log(d_preds))


# ---------------------------------------------------------------------------
# Informe
# ---------------------------------------------------------------------------

class RobustnessReport(BaseModel):
    protocol: str
    aggregator: str
    benign_accuracy: float = Field(ge=0.0, le=1.0)
    per_attack_accuracy: dict[str, float] = Field(default_factory=dict)
    malicious_counts: dict[str, int] = Field(default_factory=dict)
    worst_accuracy: Optional[float] = None
    strongest_attack: Optional[str] = None
    robustness: Optional[float] = None
    standalone_accuracy: Optional[float] = None
    centralized_accuracy: Optional[float] = None
    group_accuracy: dict[str, float] = Field(default_factory=dict)
    standalone_group_accuracy: dict[str, float] = Field(default_factory=dict)
    loss_gap: Optional[float] = None
    skipped_attacks: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent(self) -> "RobustnessReport":
        for name, acc in self.per_attack_accuracy.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"precisión fuera de [0, 1] para {name}: {acc}")
        if not self.per_attack_accuracy:
            if self.worst_accuracy is not None or self.robustness is not None:
                raise ValueError("sin ataques no hay peor precisión ni robustez")
            return self
        worst = min(self.per_attack_accuracy.values())
        if self.worst_accuracy is None or abs(self.worst_accuracy - worst) > 1e-12:
            raise ValueError("worst_accuracy debe ser el mínimo por ataque")
        if self.per_attack_accuracy.get(self.strongest_attack or "") != self.worst_accuracy:
            raise ValueError("strongest_attack debe ser el ataque con la peor precisión")
        if self.benign_accuracy > 0:
            expected = min(1.0, worst / self.benign_accuracy)
            if self.robustness is None or abs(self.robustness - expected) > 1e-5:
                raise ValueError(f"robustness={self.robustness} no cuadra con worst/benign={expected}")
            if not 0.0 <= self.robustness <= 1.0 + 1e-9:
                raise ValueError("robustness fuera de [0, 1]")
        elif self.robustness is not None:
            raise ValueError("robustness indefinida con benign_accuracy = 0")
        return self


def build_report(
    protocol: str,
    aggregator: str,
    benign_accuracy: float,
    per_attack_accuracy: dict[str, float],
    **extra,
) -> RobustnessReport:
    """Informe con reales redondeados a 6 cifras significativas (los mismos que se emiten)."""
    benign = sig(benign_accuracy)
    per_attack = {k: sig(v) for k, v in per_attack_accuracy.items()}
    worst = strongest = robustness = None
    if per_attack:
        # primer ataque del barrido en caso de empate
        strongest = min(per_attack, key=per_attack.get)
        worst = per_attack[strongest]
        if benign > 0:
            robustness = sig(min(1.0, worst / benign))
    return RobustnessReport(
        protocol=protocol,
        aggregator=aggregator,
        benign_accuracy=benign,
        per_attack_accuracy=per_attack,
        worst_accuracy=worst,
        strongest_attack=strongest,
        robustness=robustness,
        **extra,
    )


# ---------------------------------------------------------------------------
# Construcción de partes
# ---------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> DataSplit:
    if cfg.dataset.csv is not None:
        c = cfg.dataset.csv
        return load_csv(c.train_path, c.public_path, c.test_path)
    return gen_synthetic(cfg.dataset.synthetic, cfg.master_seed)


def num_classes(cfg: ExperimentConfig, split: DataSplit) -> int:
    if cfg.dataset.synthetic is not None:
        return cfg.dataset.synthetic.classes
    return split.num_classes


def party_architectures(cfg: ExperimentConfig, benign: int, input_dim: int, classes: int) -> list[mdl.Architecture]:
    groups = cfg.model.groups
    if not groups:
        return [mdl.Architecture(input_dim, cfg.model.hidden_sizes, classes, cfg.model.activation)] * benign
    archs = [
        mdl.Architecture(input_dim, g.hidden_sizes, classes, cfg.model.activation)
        for g in groups for _ in range(g.count)
    ]
    if len(archs) != benign:
        raise ConfigError(f"model.groups cubre {len(archs)} partes y hay {benign} benignas")
    return archs


def _malicious_data(cfg: ExperimentConfig, split: DataSplit, count: int) -> list[mdl.Dataset]:
    benign = len(split.parties)
    if cfg.dataset.synthetic is not None:
        return [synthetic_shard(cfg.dataset.synthetic, cfg.master_seed, benign + j) for j in range(count)]
    # CSV: el adversario dispone de datos de la misma distribución
    return [split.parties[j % benign] for j in range(count)]


def build_parties(cfg: ExperimentConfig, split: DataSplit, malicious: int) -> list[Party]:
    benign = len(split.parties)
    classes = num_classes(cfg, split)
    archs = party_architectures(cfg, benign, split.feature_dim, classes)
    archs = archs + [archs[0]] * malicious
    data = list(split.parties) + _malicious_data(cfg, split, malicious)
    shared = cfg.protocol.protocol == "fedavg"

    parties = []
    for i, (arch, shard) in enumerate(zip(archs, data)):
        seed = derive_seed(cfg.master_seed, STREAM_INIT, 0 if shared else i, 0)
        parties.append(Party(
            index=i,
            arch=arch,
            params=mdl.init_params(arch, seed),
            local_data=shard,
            rng_seed=seed,
            is_malicious=i >= benign,
        ))
    return parties


def grad_ascent_targets(cfg: ExperimentConfig, split: DataSplit) -> mdl.Dataset:
    """Mitad miembros (datos de la parte 0), mitad no miembros (test)."""
    half = cfg.protocol.threat.grad_targets // 2
    rng = np.random.default_rng(derive_seed(cfg.master_seed, STREAM_TARGETS, 0, 0))
    owner = split.parties[0]
    half = min(half, len(owner), len(split.test))
    members = rng.choice(len(owner), size=half, replace=False)
    outsiders = rng.choice(len(split.test), size=half, replace=False)
    return mdl.Dataset(
        np.vstack([owner.features[members], split.test.features[outsiders]]),
        np.concatenate([owner.labels[members], split.test.labels[outsiders]]),
    )


# ---------------------------------------------------------------------------
# Ejecución
# ---------------------------------------------------------------------------

@dataclass
class ProtocolRun:
    attack: str
    malicious: int
    records: list[RoundRecord]
    parties: list[Party]

    @property
    def final_accuracies(self) -> list[float]:
        return self.records[-1].per_party_test_accuracy if self.records else []

    @property
    def final_accuracy(self) -> float:
        return float(np.mean(self.final_accuracies))


@dataclass
class ExperimentOutcome:
    report: RobustnessReport
    runs: list[ProtocolRun] = field(default_factory=list)


def run_protocol(
    cfg: ExperimentConfig,
    split: DataSplit,
    attack: str = "none",
    malicious: int = 0,
    *,
    workers: int = 1,
) -> ProtocolRun:
    malicious = malicious if attack != "none" else 0
    benign = len(split.parties)
    threat = cfg.protocol.threat.model_copy(update={
        "attack": attack,
        "malicious_count": malicious,
        "total_parties": benign + malicious,
        "target_points": grad_ascent_targets(cfg, split) if attack == "grad_ascent" else None,
    })
    protocol: ProtocolConfig = cfg.protocol.model_copy(update={"threat": threat})
    parties = build_parties(cfg, split, malicious)
    logger.info(
        "ejecución %s/%s: ataque=%s, %d benignas + %d maliciosas",
        protocol.protocol, protocol.aggregator, attack, benign, malicious,
    )
    if protocol.protocol == "fedavg":
        records = run_fedavg(parties, split.test, protocol, master_seed=cfg.master_seed, workers=workers)
    else:
        records = run_cronus(parties, split.public, split.test, protocol, master_seed=cfg.master_seed, workers=workers)
    return ProtocolRun(attack, malicious, records, parties)


def _private_epochs(cfg: ExperimentConfig) -> int:
    p = cfg.protocol
    return p.t1 + p.t2 * p.local_epochs if p.protocol == "cronus" else p.rounds * p.local_epochs


def centralized_accuracy(cfg: ExperimentConfig, split: DataSplit) -> float:
    """Un único modelo, con la arquitectura de la parte 0, entrenado sobre la unión de los datos benignos."""
    p = cfg.protocol
    pooled = mdl.Dataset(
        np.vstack([shard.features for shard in split.parties]),
        np.concatenate([shard.labels for shard in split.parties]),
    )
    arch = party_architectures(cfg, len(split.parties), split.feature_dim, num_classes(cfg, split))[0]
    params = mdl.init_params(arch, derive_seed(cfg.master_seed, STREAM_CENTRALIZED, 0, 0))
    params = mdl.sgd_epochs(
        params, pooled,
        lr=p.lr_private, batch_size=p.batch_size, epochs=_private_epochs(cfg),
        seed=derive_seed(cfg.master_seed, STREAM_CENTRALIZED, 0, 1),
    )
    return mdl.accuracy(params, split.test)


def standalone_accuracies(cfg: ExperimentConfig, split: DataSplit) -> list[float]:
    """Cada parte benigna entrena sola las mismas épocas privadas que en la colaboración."""
    p = cfg.protocol
    epochs = _private_epochs(cfg)
    accs = []
    for party in build_parties(cfg, split, 0):
        params = mdl.sgd_epochs(
            party.params, party.local_data,
            lr=p.lr_private, batch_size=p.batch_size, epochs=epochs,
            seed=derive_seed(cfg.master_seed, STREAM_STANDALONE, party.index, 0),
        )
        accs.append(mdl.accuracy(params, split.test))
    return accs


def _group_means(parties: list[Party], accs: list[float]) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for party, acc in zip(parties, accs):
        groups.setdefault(party.arch.label, []).append(acc)
    return {label: sig(float(np.mean(vals))) for label, vals in groups.items()}


def run_experiment(
    cfg: ExperimentConfig,
    *,
    workers: Optional[int] = None,
    split: Optional[DataSplit] = None,
) -> ExperimentOutcome:
    workers = settings.workers if workers is None else workers
    split = split if split is not None else load_data(cfg)
    benign = len(split.parties)
    aggregator = cfg.protocol.aggregator

    base = run_protocol(cfg, split, workers=workers)
    runs = [base]
    benign_parties = [p for p in base.parties if not p.is_malicious]

    per_attack: dict[str, float] = {}
    counts: dict[str, int] = {}
    skipped: list[str] = []
    gap: Optional[float] = None
    for attack in cfg.attack_sweep:
        if attack == "none":
            continue
        m = breaking_point_malicious(aggregator, benign)
        if attack == "ofom":
            m = max(m, 2)
        if m == 0:
            logger.warning("ataque %s omitido: %s no tolera ninguna parte maliciosa con %d benignas", attack, aggregator, benign)
            skipped.append(attack)
            continue
        try:
            run = run_protocol(cfg, split, attack, m, workers=workers)
        except RoundError as exc:
            if exc.cause_code != "attack_infeasible":
                raise
            logger.warning("ataque %s omitido: %s", attack, exc)
            skipped.append(attack)
            continue
        runs.append(run)
        per_attack[attack] = run.final_accuracy
        counts[attack] = m
        if attack == "grad_ascent" and run.records and run.records[-1].loss_gap is not None:
            gap = sig(run.records[-1].loss_gap)

    extra: dict = {"malicious_counts": counts, "skipped_attacks": skipped, "loss_gap": gap}
    extra["group_accuracy"] = _group_means(benign_parties, base.final_accuracies)
    if cfg.standalone:
        alone = standalone_accuracies(cfg, split)
        extra["standalone_accuracy"] = sig(float(np.mean(alone)))
        extra["standalone_group_accuracy"] = _group_means(benign_parties, alone)
    if cfg.centralized:
        extra["centralized_accuracy"] = sig(centralized_accuracy(cfg, split))

    report = build_report(cfg.protocol.protocol, aggregator, base.final_accuracy, per_attack, **extra)
    logger.info(
        "informe: benigna %.4f, peor %s (%s), robustez %s",
        report.benign_accuracy, report.worst_accuracy, report.strongest_attack, report.robustness,
    )
    return ExperimentOutcome(report=report, runs=runs)
