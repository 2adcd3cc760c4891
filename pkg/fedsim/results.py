from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path
from typing import Iterable

from .experiments import ProtocolRun, RobustnessReport

logger = logging.getLogger("fedsim.results")

ROUNDS_FILE = "rounds.csv"
REPORT_FILE = "report.json"
ROUNDS_HEADER = ["round", "attack", "party", "accuracy"]


def ensure_output_dir(path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def safe_run_name(name: str) -> str:
    """Nombre de ejecución sin rutas: solo el último componente, sin '.' ni '..'."""
    run = os.path.basename(name.strip().rstrip("/\\"))
    if run in {"", ".", ".."}:
        raise ValueError("nombre de ejecución inválido")
    return run


def round_rows(runs: Iterable[ProtocolRun]) -> list[list[str]]:
    rows = []
    for run in runs:
        for record in run.records:
            for party, acc in enumerate(record.per_party_test_accuracy):
                rows.append([str(record.round), run.attack, str(party), f"{acc:.6g}"])
    return rows


def emit_results(runs: Iterable[ProtocolRun], report: RobustnessReport, output_dir: str | Path) -> dict[str, Path]:
    """Escribe rounds.csv y report.json (UTF-8, LF). Misma ejecución, mismos bytes."""
    out = ensure_output_dir(output_dir)
    rounds_path = out / ROUNDS_FILE
    report_path = out / REPORT_FILE

    with rounds_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUNDS_HEADER)
        writer.writerows(round_rows(runs))

    payload = json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False)
    report_path.write_text(payload + "\n", encoding="utf-8", newline="")
    logger.info("resultados escritos en %s", out)
    return {"rounds": rounds_path, "report": report_path}


def load_report(path: str | Path) -> RobustnessReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    return RobustnessReport.model_validate_json(path.read_text(encoding="utf-8"))


def list_runs(output_dir: str | Path) -> list[dict]:
    """Ejecuciones bajo ``output_dir`` que tienen report.json, ordenadas por nombre."""
    base = Path(output_dir)
    if not base.is_dir():
        return []
    items = []
    for p in base.iterdir():
        report = p / REPORT_FILE
        if p.is_dir() and report.is_file():
            items.append({
                "name": p.name,
                "report": str(report),
                "has_rounds": (p / ROUNDS_FILE).is_file(),
                "size": report.stat().st_size,
            })
    return sorted(items, key=lambda x: x["name"].lower())
