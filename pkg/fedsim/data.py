"""
Datos del simulador: generador sintético de clusters gaussianos y E/S CSV.

Todos los ficheros CSV llevan cabecera, UTF-8 y fin de línea LF. Los reales se
escriben con ``repr`` para que la relectura sea exacta.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .config import SyntheticDataConfig
from .errors import DataFormatError
from .model import Dataset

logger = logging.getLogger("fedsim.data")

# Flujos de semilla independientes por uso.
STREAM_MEANS = 101
STREAM_SHARD = 102
STREAM_PUBLIC = 103
STREAM_TEST = 104


@dataclass(frozen=True)
class DataSplit:
    parties: list[Dataset]
    public: np.ndarray  # X_p, sin etiquetas
    test: Dataset

    @property
    def num_classes(self) -> int:
        labels = np.concatenate([self.test.labels, *(p.labels for p in self.parties)])
        return int(labels.max()) + 1 if labels.size else 0

    @property
    def feature_dim(self) -> int:
        return int(self.test.features.shape[1])


# ---------------------------------------------------------------------------
# Generador sintético
# ---------------------------------------------------------------------------

def class_means(cfg: SyntheticDataConfig, seed: int) -> np.ndarray:
    """Medias N(0, I) escaladas para que la menor distancia entre clases sea ``cluster_sep``."""
    rng = np.random.default_rng([seed, STREAM_MEANS])
    means = rng.standard_normal((cfg.classes, cfg.feature_dim))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    return means * (cfg.cluster_sep / dist.min())


def _sample(means: np.ndarray, count: int, rng: np.random.Generator) -> Dataset:
    num_classes, dim = means.shape
    # clases equilibradas, orden barajado
    labels = rng.permutation(np.arange(count) % num_classes)
    features = means[labels] + rng.standard_normal((count, dim))
    return Dataset(features, labels)


def synthetic_shard(cfg: SyntheticDataConfig, seed: int, index: int) -> Dataset:
    """Shard privado ``index``; índices >= cfg.parties sirven para partes extra."""
    means = class_means(cfg, seed)
    return _sample(means, cfg.per_party, np.random.default_rng([seed, STREAM_SHARD, index]))


def gen_synthetic(cfg: SyntheticDataConfig, seed: int) -> DataSplit:
    means = class_means(cfg, seed)
    parties = [
        _sample(means, cfg.per_party, np.random.default_rng([seed, STREAM_SHARD, i]))
        for i in range(cfg.parties)
    ]
    public = _sample(means, cfg.public_size, np.random.default_rng([seed, STREAM_PUBLIC])).features
    test = _sample(means, cfg.test_size, np.random.default_rng([seed, STREAM_TEST]))
    logger.info(
        "datos sintéticos: %d partes x %d, público %d, test %d (C=%d, f=%d, sep=%.3g)",
        cfg.parties, cfg.per_party, cfg.public_size, cfg.test_size,
        cfg.classes, cfg.feature_dim, cfg.cluster_sep,
    )
    return DataSplit(parties, public, test)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _nonblank(lines: Iterable[str]) -> Iterator[tuple[int, list[str]]]:
    for line_no, row in enumerate(csv.reader(lines), start=1):
        if row and any(cell.strip() for cell in row):
            yield line_no, row


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            yield from _nonblank(fh)
    except FileNotFoundError as exc:
        raise DataFormatError(f"no existe el fichero: {path}") from exc


def _floats(cells: Sequence[str], line_no: int) -> list[float]:
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise DataFormatError(f"valor no numérico ({exc})", line=line_no) from exc


def _read_table(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    rows = list(_rows(Path(path)))
    if not rows:
        raise DataFormatError(f"fichero vacío: {path}")
    (_, header), body = rows[0], rows[1:]
    header = [h.strip() for h in header]
    for line_no, row in body:
        if len(row) != len(header):
            raise DataFormatError(
                f"{len(row)} columnas, la cabecera tiene {len(header)}", line=line_no,
            )
    return header, body


def _labelled(path: Path, with_party: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    header, body = _read_table(path)
    first = 1 if with_party else 0
    if header[-1] != "label" or (with_party and header[0] != "party"):
        expected = "party,f0,...,label" if with_party else "f0,...,label"
        raise DataFormatError(f"{path}: cabecera inesperada, se esperaba {expected}", line=1)
    if len(header) - first - 1 < 1:
        raise DataFormatError(f"{path}: sin columnas de características", line=1)
    if not body:
        raise DataFormatError(f"{path}: sin filas de datos")
    parties, feats, labels = [], [], []
    for line_no, row in body:
        values = _floats(row, line_no)
        if with_party:
            parties.append(values[0])
        feats.append(values[first:-1])
        if not float(values[-1]).is_integer() or values[-1] < 0:
            raise DataFormatError(f"etiqueta inválida: {row[-1]}", line=line_no)
        labels.append(int(values[-1]))
    return np.asarray(parties, dtype=np.int64), np.asarray(feats), np.asarray(labels, dtype=np.int64)


def read_public_csv(path: Path) -> np.ndarray:
    header, body = _read_table(path)
    if "label" in header:
        raise DataFormatError(f"{path}: el conjunto público no puede llevar etiquetas", line=1)
    if not body:
        raise DataFormatError(f"{path}: sin filas de datos")
    return np.asarray([_floats(row, line_no) for line_no, row in body])


def load_csv(train_path: Path, public_path: Path, test_path: Path) -> DataSplit:
    party_ids, x_train, y_train = _labelled(Path(train_path), with_party=True)
    public = read_public_csv(Path(public_path))
    _, x_test, y_test = _labelled(Path(test_path), with_party=False)

    dim = x_train.shape[1]
    for name, arr in (("público", public), ("test", x_test)):
        if arr.shape[1] != dim:
            raise DataFormatError(f"conjunto {name} con {arr.shape[1]} características, train tiene {dim}")
    parties = [
        Dataset(x_train[party_ids == pid], y_train[party_ids == pid])
        for pid in np.unique(party_ids)
    ]
    logger.info("CSV cargado: %d partes, público %d, test %d", len(parties), public.shape[0], x_test.shape[0])
    return DataSplit(parties, public, Dataset(x_test, y_test))


def _fmt(value: float) -> str:
    return repr(float(value))


def _write(path: Path, header: list[str], rows: Iterator[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_csv(split: DataSplit, out_dir: Path) -> dict[str, Path]:
    """Escribe train.csv / public.csv / test.csv; devuelve las rutas."""
    out_dir = Path(out_dir)
    dim = split.feature_dim
    feat_cols = [f"f{j}" for j in range(dim)]
    paths = {name: out_dir / f"{name}.csv" for name in ("train", "public", "test")}

    def train_rows() -> Iterator[list[str]]:
        for pid, shard in enumerate(split.parties):
            for x, y in zip(shard.features, shard.labels):
                yield [str(pid), *(_fmt(v) for v in x), str(int(y))]

    _write(paths["train"], ["party", *feat_cols, "label"], train_rows())
    _write(paths["public"], feat_cols, ([_fmt(v) for v in x] for x in split.public))
    _write(
        paths["test"], [*feat_cols, "label"],
        ([*(_fmt(v) for v in x), str(int(y))] for x, y in zip(split.test.features, split.test.labels)),
    )
    return paths


# ---------------------------------------------------------------------------
# Matrices de actualizaciones (una parte por fila)
# ---------------------------------------------------------------------------

def read_matrix_csv(path: Path) -> np.ndarray:
    return _matrix(list(_rows(Path(path))), str(path))


def parse_matrix_csv(text: str) -> np.ndarray:
    return _matrix(list(_nonblank(text.splitlines())), "<texto>")


def _matrix(rows: list[tuple[int, list[str]]], source: str) -> np.ndarray:
    """Filas numéricas; una primera fila no numérica se toma como cabecera."""
    if rows:
        line_no, first = rows[0]
        try:
            [float(c) for c in first]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise DataFormatError(f"fichero vacío: {source}")
    width = len(rows[0][1])
    out = []
    for line_no, row in rows:
        if len(row) != width:
            raise DataFormatError(f"{len(row)} columnas, se esperaban {width}", line=line_no)
        out.append(_floats(row, line_no))
    return np.asarray(out)


def write_matrix_csv(matrix: np.ndarray, path: Optional[Path] = None) -> str:
    """Serializa una matriz a CSV (cabecera x0..); si hay ``path`` también la escribe."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    header = [f"x{j}" for j in range(matrix.shape[1])]
    lines = [",".join(header)] + [",".join(_fmt(v) for v in row) for row in matrix]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text
