from __future__ import annotations

import asyncio
import logging
from typing import Any, Dict, Literal, Optional

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from . import __version__
from .aggregation import AggregatorName, AggregatorOptions, aggregate
from .attacks import craft_for_protocol
from .config import ThreatSpec, build_config, settings
from .data import parse_matrix_csv
from .errors import ConfigError, FedSimError
from .job_manager import job_manager
from .results import list_runs

logger = logging.getLogger("fedsim.api")

app = FastAPI(title="fedsim: agregación robusta y experimentos federados")


def error_response(message: str, code: str, status_code: int = 400) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={"error": {"message": message, "type": "fedsim_error", "code": code}},
    )


@app.exception_handler(FedSimError)
async def fedsim_error_handler(_request, exc: FedSimError) -> JSONResponse:
    status_code = 422 if isinstance(exc, ValueError) else 500
    return error_response(str(exc), code=exc.code, status_code=status_code)


@app.exception_handler(ValueError)
async def value_error_handler(_request, exc: ValueError) -> JSONResponse:
    return error_response(str(exc), code="invalid_request", status_code=422)


# ---------------------------------------------------------------------------
# Peticiones
# ---------------------------------------------------------------------------

class AggregateRequest(BaseModel):
    rule: AggregatorName
    updates: list[list[float]] = Field(min_length=1)
    epsilon: float = 0.0
    data_sizes: Optional[list[float]] = None
    mwu_iters: int = Field(default=10, ge=1)
    cronus_mode: Literal["practical", "randomized"] = "practical"
    filter_iterations: int = Field(default=2, ge=1)
    early_exit: bool = False
    seed: int = Field(default=0, ge=0)

    def options(self) -> AggregatorOptions:
        return AggregatorOptions(
            mwu_iters=self.mwu_iters,
            cronus_mode=self.cronus_mode,
            filter_iterations=self.filter_iterations,
            early_exit=self.early_exit,
            seed=self.seed,
        )


class CraftRequest(BaseModel):
    attack: Literal["paf", "lie", "ofom"]
    benign_updates: list[list[float]] = Field(min_length=1)
    n: Optional[int] = Field(default=None, ge=2)
    m: int = Field(ge=1)
    magnitude: float = 1e3


class ExperimentRequest(BaseModel):
    config: Dict[str, Any] = Field(default_factory=dict)
    run_name: Optional[str] = None


def _aggregate_payload(rule: str, updates, epsilon: float, data_sizes, options: AggregatorOptions) -> dict:
    result = aggregate(rule, updates, epsilon=epsilon, data_sizes=data_sizes, options=options)
    return {
        "rule": rule,
        "aggregate": result.vector.tolist(),
        "selected_index": result.selected_index,
        "flagged_samples": result.flagged_samples,
    }


# ---------------------------------------------------------------------------
# Endpoints
# ---------------------------------------------------------------------------

@app.get("/status")
async def status() -> Dict[str, Any]:
    return {
        "version": __version__,
        "active_experiment": job_manager.active_job,
        "busy": job_manager.busy,
        "jobs": job_manager.counts(),
        "output_dir": settings.output_dir,
    }


@app.post("/v1/aggregate")
async def aggregate_json(req: AggregateRequest) -> Response:
    payload = await asyncio.to_thread(
        _aggregate_payload, req.rule, req.updates, req.epsilon, req.data_sizes, req.options(),
    )
    return JSONResponse(content=payload)


@app.post("/v1/aggregate/csv")
async def aggregate_csv(
    file: UploadFile = File(...),
    rule: str = Form(...),
    epsilon: float = Form(default=0.0),
    mwu_iters: int = Form(default=10),
    cronus_mode: str = Form(default="practical"),
) -> Response:
    raw = await file.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        return error_response("el fichero no es UTF-8", code="bad_data")
    updates = parse_matrix_csv(text)
    options = AggregatorOptions(mwu_iters=mwu_iters, cronus_mode=cronus_mode)
    payload = await asyncio.to_thread(_aggregate_payload, rule, list(updates), epsilon, None, options)
    return JSONResponse(content=payload)


@app.post("/v1/craft")
async def craft(req: CraftRequest) -> Response:
    n = req.n or len(req.benign_updates) + req.m
    try:
        threat = ThreatSpec(
            attack=req.attack, total_parties=n, malicious_count=req.m, paf_magnitude=req.magnitude,
        )
    except ValueError as exc:
        return error_response(str(exc), code="invalid_request", status_code=422)
    benign = [np.asarray(u, dtype=np.float64) for u in req.benign_updates]
    crafted = craft_for_protocol(threat, benign)
    return JSONResponse(content={
        "attack": req.attack,
        "n": n,
        "m": req.m,
        "updates": [u.tolist() for u in crafted.updates],
    })


@app.post("/v1/experiments")
async def experiments_submit(req: ExperimentRequest) -> Response:
    try:
        cfg = build_config(req.config)
        job = job_manager.submit(cfg, req.run_name)
    except (ConfigError, ValueError) as exc:
        return error_response(str(exc), code="config_error", status_code=422)
    return JSONResponse(status_code=202, content={"id": job.id, "run_name": job.run_name})


@app.get("/v1/experiments/{job_id}")
async def experiments_status(job_id: str) -> Response:
    job = job_manager.get(job_id)
    if not job:
        return error_response("experimento no encontrado", code="not_found", status_code=404)
    return JSONResponse(content=job.as_dict())


@app.get("/v1/runs")
async def runs() -> Response:
    return JSONResponse(content={"object": "list", "data": list_runs(settings.output_dir)})


@app.get("/debug/routes")
async def debug_routes() -> Dict[str, Any]:
    routes = [
        {
            "path": getattr(route, "path", None),
            "methods": sorted(getattr(route, "methods", []) or []),
            "name": getattr(route, "name", None),
        }
        for route in app.router.routes
        if getattr(route, "path", None)
    ]
    return {"routes": routes}
