from __future__ import annotations

import asyncio
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .config import ExperimentConfig, settings
from .experiments import run_experiment
from .results import emit_results, safe_run_name

logger = logging.getLogger("fedsim.jobs")


# ---------------------------------------------------------------------------
# Datos de estado público
# ---------------------------------------------------------------------------

@dataclass
class JobState:
    id: str
    status: str = "queued"  # queued | running | done | error
    run_name: str = ""
    created: float = field(default_factory=time.time)
    finished: Optional[float] = None
    report: Optional[dict] = None
    error: Optional[str] = None
    error_code: Optional[str] = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "status": self.status,
            "run_name": self.run_name,
            "created": self.created,
            "finished": self.finished,
            "report": self.report,
            "error": self.error,
            "error_code": self.error_code,
        }


# ---------------------------------------------------------------------------
# JobManager: un experimento activo a la vez
# ---------------------------------------------------------------------------

class JobManager:
    """Cola de experimentos mutuamente excluyentes (solo uno corre a la vez)."""

    def __init__(self, retention: Optional[int] = None) -> None:
        # trabajos terminados que se conservan para consulta
        self._retention = settings.job_retention if retention is None else retention
        self._lock = asyncio.Lock()
        self._active: Optional[str] = None
        self._jobs: Dict[str, JobState] = {}
        self._tasks: set[asyncio.Task] = set()

    @property
    def active_job(self) -> Optional[str]:
        return self._active

    @property
    def busy(self) -> bool:
        return self._active is not None

    def get(self, job_id: str) -> Optional[JobState]:
        return self._jobs.get(job_id)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for job in self._jobs.values():
            out[job.status] = out.get(job.status, 0) + 1
        return out

    def evict_finished(self) -> list[str]:
        """Olvida los trabajos terminados más antiguos por encima del límite de retención."""
        finished = sorted(
            (j for j in self._jobs.values() if j.finished is not None),
            key=lambda j: j.finished,
        )
        excess = finished[: max(0, len(finished) - self._retention)]
        for job in excess:
            del self._jobs[job.id]
        if excess:
            logger.debug("%d trabajo(s) terminados olvidados", len(excess))
        return [job.id for job in excess]

    def submit(self, cfg: ExperimentConfig, run_name: Optional[str] = None) -> JobState:
        job_id = str(uuid.uuid4())
        name = safe_run_name(run_name) if run_name else f"run-{job_id[:8]}"
        job = JobState(id=job_id, run_name=name)
        self._jobs[job_id] = job
        task = asyncio.create_task(self._run(job, cfg))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return job

    async def _run(self, job: JobState, cfg: ExperimentConfig) -> None:
        async with self._lock:
            self._active = job.id
            job.status = "running"
            logger.info("experimento %s (%s) arrancado", job.id, job.run_name)
            try:
                out_dir = Path(cfg.output_dir) / job.run_name
                outcome = await asyncio.to_thread(run_experiment, cfg, workers=settings.workers)
                await asyncio.to_thread(emit_results, outcome.runs, outcome.report, out_dir)
                job.report = outcome.report.model_dump(mode="json")
                job.status = "done"
                logger.info("experimento %s terminado", job.id)
            except Exception as exc:
                logger.exception("experimento %s falló: %s", job.id, exc)
                job.status = "error"
                job.error = str(exc)
                job.error_code = getattr(exc, "code", "runtime_error")
            finally:
                job.finished = time.time()
                self._active = None
                self.evict_finished()


job_manager = JobManager()
