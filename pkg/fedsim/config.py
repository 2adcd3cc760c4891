from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

AttackName = Literal["none", "label_flip", "paf", "lie", "ofom", "grad_ascent"]
ProtocolName = Literal["fedavg", "cronus"]
AggregatorChoice = Literal["mean", "median", "mwu_avg", "mwu_opt", "krum", "bulyan", "cronus"]


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    server_host: str = Field(default="127.0.0.1", alias="SERVER_HOST")
    server_port: int = Field(default=3113, alias="SERVER_PORT")

    master_seed: int = Field(default=0, alias="FEDSIM_SEED")
    workers: int = Field(default=1, alias="FEDSIM_WORKERS")
    output_dir: str = Field(default="results", alias="FEDSIM_OUTPUT_DIR")
    log_level: str = Field(default="INFO", alias="FEDSIM_LOG_LEVEL")
    job_retention: int = Field(default=100, ge=1, alias="FEDSIM_JOB_RETENTION")


settings = Settings()


def _split_list(value: Any) -> Any:
    """'a,b , c' -> ['a', 'b', 'c']; las cadenas vacías son listas vacías."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


# ---------------------------------------------------------------------------
# Amenaza y protocolo
# ---------------------------------------------------------------------------

class ThreatSpec(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    attack: AttackName = "none"
    total_parties: int = Field(default=0, ge=0)
    malicious_count: int = Field(default=0, ge=0)
    paf_magnitude: float = 1e3
    grad_gamma: float = Field(default=1.0, gt=0)
    grad_targets: int = Field(default=10, ge=2)
    # Dataset del módulo model; se adjunta en tiempo de ejecución.
    target_points: Optional[Any] = Field(default=None, exclude=True)

    @model_validator(mode="after")
    def _check_counts(self) -> "ThreatSpec":
        if self.total_parties and self.malicious_count >= self.total_parties:
            raise ValueError(
                f"malicious_count={self.malicious_count} debe ser < total_parties={self.total_parties}"
            )
        return self


class ProtocolConfig(BaseModel):
    protocol: ProtocolName = "cronus"
    aggregator: AggregatorChoice = "cronus"
    rounds: int = Field(default=10, ge=1)
    t1: int = Field(default=10, ge=0)
    t2: int = Field(default=10, ge=1)
    local_epochs: int = Field(default=1, ge=1)
    lr_private: float = Field(default=0.1, ge=0)
    lr_public: Optional[float] = Field(default=None, ge=0)
    batch_size: int = Field(default=16, ge=1)
    public_subset_per_round: Optional[int] = Field(default=None, ge=1)
    epsilon_assumed: Optional[float] = Field(default=None, ge=0, lt=0.5)
    temperature: float = Field(default=1.0, gt=0)
    mwu_iters: int = Field(default=10, ge=1)
    cronus_mode: Literal["practical", "randomized"] = "practical"
    filter_iterations: int = Field(default=2, ge=1)
    early_exit: bool = False
    variance_threshold: float = Field(default=9.0, ge=0)
    threat: ThreatSpec = Field(default_factory=ThreatSpec)

    @model_validator(mode="after")
    def _check_pairing(self) -> "ProtocolConfig":
        if self.protocol == "cronus" and self.aggregator != "cronus":
            raise ValueError("protocol=cronus exige aggregator=cronus")
        if self.protocol == "fedavg" and self.aggregator == "cronus":
            raise ValueError("protocol=fedavg no admite aggregator=cronus")
        return self

    @property
    def public_lr(self) -> float:
        return self.lr_private if self.lr_public is None else self.lr_public


# ---------------------------------------------------------------------------
# Modelos y datos
# ---------------------------------------------------------------------------

class ArchGroup(BaseModel):
    hidden_sizes: tuple[int, ...] = ()
    count: int = Field(ge=1)

    @classmethod
    def parse(cls, text: str) -> "ArchGroup":
        """'linear:4' o '64-32:12' -> grupo de partes con esa arquitectura."""
        try:
            hidden, count = text.rsplit(":", 1)
            sizes = () if hidden.strip() in ("", "linear") else tuple(
                int(h) for h in hidden.split("-")
            )
            return cls(hidden_sizes=sizes, count=int(count))
        except ValueError as exc:
            raise ValueError(f"grupo de arquitectura inválido: {text!r}") from exc


class ModelConfig(BaseModel):
    hidden_sizes: tuple[int, ...] = (32,)
    activation: Literal["tanh", "relu"] = "tanh"
    groups: list[ArchGroup] = Field(default_factory=list)

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def _parse_hidden(cls, value: Any) -> Any:
        if isinstance(value, str):
            if value.strip() in ("", "linear"):
                return ()
            return tuple(int(h) for h in value.replace(",", "-").split("-") if h.strip())
        return value

    @field_validator("groups", mode="before")
    @classmethod
    def _parse_groups(cls, value: Any) -> Any:
        value = _split_list(value)
        if isinstance(value, list):
            return [ArchGroup.parse(v) if isinstance(v, str) else v for v in value]
        return value


class SyntheticDataConfig(BaseModel):
    classes: int = Field(default=10, ge=2)
    feature_dim: int = Field(default=20, ge=1)
    per_party: int = Field(default=40, ge=1)
    parties: int = Field(default=16, ge=1)
    public_size: int = Field(default=500, ge=1)
    test_size: int = Field(default=1000, ge=1)
    cluster_sep: float = Field(default=8.0, gt=0)


class CsvDataConfig(BaseModel):
    train_path: Path
    public_path: Path
    test_path: Path


class DatasetConfig(BaseModel):
    synthetic: Optional[SyntheticDataConfig] = None
    csv: Optional[CsvDataConfig] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetConfig":
        if self.synthetic is not None and self.csv is not None:
            raise ValueError("dataset: usar synthetic o csv, no ambos")
        if self.synthetic is None and self.csv is None:
            self.synthetic = SyntheticDataConfig()
        return self


class ExperimentConfig(BaseModel):
    master_seed: int = Field(default_factory=lambda: settings.master_seed, ge=0)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    attack_sweep: list[AttackName] = Field(default_factory=list)
    standalone: bool = True
    centralized: bool = True
    output_dir: Path = Field(default_factory=lambda: Path(settings.output_dir))

    @field_validator("attack_sweep", mode="before")
    @classmethod
    def _parse_sweep(cls, value: Any) -> Any:
        return _split_list(value)

    @model_validator(mode="after")
    def _check_groups(self) -> "ExperimentConfig":
        if self.model.groups and self.dataset.synthetic is not None:
            total = sum(g.count for g in self.model.groups)
            if total != self.dataset.synthetic.parties:
                raise ValueError(
                    f"model.groups cubre {total} partes, dataset.synthetic.parties={self.dataset.synthetic.parties}"
                )
        if self.protocol.protocol == "fedavg" and self.model.groups:
            if len({g.hidden_sizes for g in self.model.groups}) > 1:
                raise ValueError("fedavg exige arquitecturas homogéneas")
        return self


# ---------------------------------------------------------------------------
# Ficheros de configuración planos (clave.con.puntos=valor)
# ---------------------------------------------------------------------------

def unflatten_keys(flat: dict[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key, value in flat.items():
        if value is None or (isinstance(value, str) and value.strip() == ""):
            continue
        node = tree
        parts = key.strip().split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"clave {key!r} choca con un valor escalar")
            node = child
        node[parts[-1]] = value.strip() if isinstance(value, str) else value
    return tree


def build_config(flat: dict[str, Any], overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    merged = dict(flat)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(unflatten_keys(merged))
    except ValidationError as exc:
        raise ConfigError(f"configuración inválida: {exc}") from exc


def read_config_file(path: str | Path) -> dict[str, str]:
    """Claves con puntos de un fichero dotenv; las claves sin valor se descartan."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no existe el fichero de configuración: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def load_config_file(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    return build_config(read_config_file(path), overrides)
