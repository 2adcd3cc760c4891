"""
Línea de comandos.

Uso:
  python -m fedsim run --config configs/desk_benchmark.env --seed 7
  python -m fedsim run --config configs/desk_benchmark.env --attack paf
  python -m fedsim aggregate --rule krum --input updates.csv --epsilon 0.125
  python -m fedsim craft --attack lie --input benign.csv --malicious 2
  python -m fedsim gen --config configs/desk_benchmark.env --output data/
  python -m fedsim serve --port 3113

Códigos de salida: 0 éxito, 1 error de configuración, 2 error en ejecución.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .aggregation import AggregatorOptions, aggregate
from .attacks import craft_for_protocol
from .config import ExperimentConfig, ThreatSpec, build_config, load_config_file, settings
from .data import gen_synthetic, read_matrix_csv, write_csv, write_matrix_csv
from .errors import ConfigError, FedSimError

logger = logging.getLogger("fedsim.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # Un argumento inválido es un error de configuración (código 1).
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(f"{self.prog}: {message}")


def _load(path: Optional[str], overrides: dict[str, Any]) -> ExperimentConfig:
    if path:
        return load_config_file(path, overrides)
    return build_config({}, overrides)


# ---------------------------------------------------------------------------
# Comandos
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    from .experiments import run_experiment
    from .results import emit_results

    cfg = _load(args.config, {
        "master_seed": args.seed,
        "attack_sweep": args.attack,
        "output_dir": args.output,
    })
    outcome = run_experiment(cfg, workers=args.workers)
    paths = emit_results(outcome.runs, outcome.report, cfg.output_dir)
    print(json.dumps(outcome.report.model_dump(mode="json"), indent=2, sort_keys=True))
    logger.info("informe: %s", paths["report"])
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace) -> int:
    updates = read_matrix_csv(Path(args.input))
    options = AggregatorOptions(
        mwu_iters=args.mwu_iters, cronus_mode=args.cronus_mode, seed=args.seed,
    )
    result = aggregate(args.rule, list(updates), epsilon=args.epsilon, options=options)
    if result.selected_index is not None:
        logger.info("krum eligió la parte %d", result.selected_index)
    if result.flagged_samples:
        logger.warning("muestras marcadas por el filtro: %s", result.flagged_samples)
    sys.stdout.write(write_matrix_csv(result.vector[None, :], Path(args.output) if args.output else None))
    return EXIT_OK


def cmd_craft(args: argparse.Namespace) -> int:
    benign = read_matrix_csv(Path(args.input))
    n = args.parties or benign.shape[0] + args.malicious
    try:
        threat = ThreatSpec(
            attack=args.attack, total_parties=n, malicious_count=args.malicious,
            paf_magnitude=args.magnitude,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    crafted = craft_for_protocol(threat, list(benign))
    matrix = np.vstack(crafted.updates)
    sys.stdout.write(write_matrix_csv(matrix, Path(args.output) if args.output else None))
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load(args.config, {"master_seed": args.seed})
    if cfg.dataset.synthetic is None:
        raise ConfigError("gen necesita dataset.synthetic")
    split = gen_synthetic(cfg.dataset.synthetic, cfg.master_seed)
    paths = write_csv(split, Path(args.output))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("fedsim.main:app", host=args.host, port=args.port, log_level=settings.log_level.lower())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedsim", description="Simulador de aprendizaje federado robusto")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="ejecuta un experimento de robustez")
    run.add_argument("--config", default=None, help="fichero clave=valor con claves con puntos")
    run.add_argument("--seed", type=int, default=None, help="semilla maestra (por defecto FEDSIM_SEED)")
    run.add_argument("--attack", default=None, help="limita el barrido a este ataque")
    run.add_argument("--output", default=None, help="directorio de resultados")
    run.add_argument("--workers", type=int, default=None, help="hilos de entrenamiento (FEDSIM_WORKERS)")
    run.set_defaults(func=cmd_run)

    agg = sub.add_parser("aggregate", help="agrega una matriz CSV de actualizaciones (una parte por fila)")
    agg.add_argument("--rule", required=True,
                     choices=["mean", "median", "trimmed_mean", "krum", "bulyan", "mwu_avg", "mwu_opt", "cronus"])
    agg.add_argument("--input", required=True)
    agg.add_argument("--epsilon", type=float, default=0.0)
    agg.add_argument("--mwu-iters", type=int, default=10)
    agg.add_argument("--cronus-mode", choices=["practical", "randomized"], default="practical")
    agg.add_argument("--seed", type=int, default=0)
    agg.add_argument("--output", default=None)
    agg.set_defaults(func=cmd_aggregate)

    craft = sub.add_parser("craft", help="fabrica actualizaciones maliciosas a partir de las benignas")
    craft.add_argument("--attack", required=True, choices=["paf", "lie", "ofom"])
    craft.add_argument("--input", required=True)
    craft.add_argument("--malicious", type=int, required=True)
    craft.add_argument("--parties", type=int, default=None, help="n total (por defecto benignas + maliciosas)")
    craft.add_argument("--magnitude", type=float, default=1e3)
    craft.add_argument("--output", default=None)
    craft.set_defaults(func=cmd_craft)

    gen = sub.add_parser("gen", help="escribe un dataset sintético en CSV")
    gen.add_argument("--config", default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--output", required=True)
    gen.set_defaults(func=cmd_gen)

    serve = sub.add_parser("serve", help="arranca la API HTTP")
    serve.add_argument("--host", default=settings.server_host)
    serve.add_argument("--port", type=int, default=settings.server_port)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        logger.error("configuración inválida: %s", exc)
        return EXIT_CONFIG
    except (FedSimError, OSError, ValueError) as exc:
        logger.error("error en ejecución: %s", exc)
        return EXIT_RUNTIME
