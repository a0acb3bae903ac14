"""
Иерархия ошибок beam-bnf.

Каждый класс знает свой код выхода для CLI:
0 - успех, 2 - ошибка валидации, 3 - превышен бюджет перебора,
4 - численный взрыв или выход из области потока.
"""

from __future__ import annotations

from typing import Any, Optional


class BeamBnfError(Exception):
    """Базовая ошибка пакета."""

    exit_code: int = 1


class ParameterError(BeamBnfError, ValueError):
    exit_code = 2


class DimensionError(BeamBnfError, ValueError):
    exit_code = 2


class DomainError(BeamBnfError, ValueError):
    exit_code = 2


class InsufficientDataError(BeamBnfError, ValueError):
    exit_code = 2


class BudgetError(BeamBnfError):
    exit_code = 3


class StepRejectedError(BeamBnfError):
    """Шаг нормальной формы отклонён условием малости."""

    exit_code = 1

    def __init__(self, message: str, step: int, reason: str, state: Optional[Any] = None):
        super().__init__(message)
        self.step = step
        self.reason = reason
        self.state = state


class BlowUpError(BeamBnfError):
    """NaN/inf в траектории; хранит последнее конечное время."""

    exit_code = 4

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = float(last_time)


class FlowDomainError(BeamBnfError):
    exit_code = 4


def exit_code_for(exc: BaseException) -> int:
    """Код выхода CLI для произвольного исключения."""
    if isinstance(exc, BeamBnfError):
        return exc.exit_code
    # pydantic.ValidationError наследует ValueError
    if isinstance(exc, ValueError):
        return 2
    return 1
