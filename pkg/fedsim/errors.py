from __future__ import annotations

from typing import Optional

import numpy as np


class FedSimError(Exception):
    """Error base del simulador. ``code`` viaja tal cual al sobre JSON de la API."""

    code = "fedsim_error"

    def __init__(self, message: str, *, code: Optional[str] = None) -> None:
        super().__init__(message)
        if code:
            self.code = code


class DimensionMismatchError(FedSimError, ValueError):
    code = "dimension_mismatch"

    def __init__(self, message: str, *, index: Optional[int] = None) -> None:
        super().__init__(message)
        self.index = index


class ConvergenceError(FedSimError, ArithmeticError):
    """La iteración de potencia no convergió; ``value``/``vector`` son el último iterado."""

    code = "no_convergence"

    def __init__(self, message: str, *, value: float, vector: np.ndarray) -> None:
        super().__init__(message)
        self.value = value
        self.vector = vector


class WeightCollapseError(FedSimError, ArithmeticError):
    code = "weight_collapse"


class AttackInfeasibleError(FedSimError, ValueError):
    code = "attack_infeasible"


class ConfigError(FedSimError, ValueError):
    code = "config_error"


class RoundError(FedSimError):
    """Fallo dentro de una ronda, con el contexto de ronda añadido."""

    code = "round_failed"

    def __init__(self, message: str, *, round: int, cause_code: Optional[str] = None) -> None:
        super().__init__(message)
        self.round = round
        self.cause_code = cause_code


class DataFormatError(FedSimError, ValueError):
    """Fichero de datos mal formado; ``line`` es 1-based cuando se conoce."""

    code = "bad_data"

    def __init__(self, message: str, *, line: Optional[int] = None) -> None:
        super().__init__(message if line is None else f"línea {line}: {message}")
        self.line = line
