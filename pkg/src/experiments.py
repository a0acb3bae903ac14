"""
Вычислительная часть экспериментов: подгонка показателей, оптимальное p(δ),
сеточные прогоны (по δ и по массе m) и атомарная запись результатов.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import linregress

from .beam_dynamics import NonlinearitySpec, Scheme, random_state, stability_time
from .errors import DomainError, InsufficientDataError, ParameterError
from .small_divisors import DEFAULT_ENUM_BUDGET, check_diophantine
from .weighted_spaces import Weight

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


# ---------------------------------------------------------------------------
# Подгонка T ≈ C δ^{−a}
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    used: int
    excluded: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "used": self.used,
            "excluded": [list(p) for p in self.excluded],
        }


def fit_exponent(series: Union[pd.DataFrame, Sequence[Sequence[float]]]) -> FitResult:
    """
    МНК в логарифмах: ln T = intercept − a ln δ.

    Args:
        series: DataFrame с колонками delta, T_escape[, censored] или
                последовательность (δ, T) / (δ, T, censored)

    Returns:
        FitResult; цензурированные точки исключаются и перечисляются в excluded

    Raises:
        InsufficientDataError: меньше трёх нецензурированных точек
    """
    if isinstance(series, pd.DataFrame):
        censored = series["censored"] if "censored" in series else pd.Series(False, index=series.index)
        points = list(zip(series["delta"], series["T_escape"], censored))
    else:
        points = [(p[0], p[1], bool(p[2]) if len(p) > 2 else False) for p in series]
    used = [(float(d), float(T)) for d, T, c in points if not c]
    excluded = [(float(d), float(T)) for d, T, c in points if c]
    for d, T in used:
        if not (d > 0 and T > 0):
            raise ParameterError(f"delta and T must be positive, got delta={d}, T={T}")
    if len(used) < 3:
        raise InsufficientDataError(f"need at least 3 uncensored points, got {len(used)}")
    x = np.log([d for d, _ in used])
    y = np.log([T for _, T in used])
    fit = linregress(x, y)
    result = FitResult(-float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), len(used), excluded)
    logger.info("[FIT] a=%.4f ln C=%.4f R^2=%.6f (used %d, censored %d)", result.slope, result.intercept, result.r_squared, len(used), len(excluded))
    return result


# ---------------------------------------------------------------------------
# Оптимальная соболевская регулярность
# ---------------------------------------------------------------------------

def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")


def optimal_p(delta: float, gamma: float, delta_S: float, c: float = 1.0) -> float:
    """
    p(δ) = 1 + ( ln(δ_S/δ) / (24c² ln(1/γ)) )^{3/5}.

    Raises:
        DomainError: δ ≥ δ_S
    """
    _check_gamma(gamma)
    if not (delta > 0 and c > 0 and delta_S > 0):
        raise ParameterError(f"delta, delta_S and c must be positive, got {delta}, {delta_S}, {c}")
    if delta >= delta_S:
        raise DomainError(f"delta={delta:.6g} must be below delta_S={delta_S:.6g}")
    return 1.0 + (math.log(delta_S / delta) / (24.0 * c * c * math.log(1.0 / gamma))) ** 0.6


def delta_of_p(p: float, gamma: float, delta_S: float, c: float = 1.0) -> float:
    """Обратное соотношение δ = δ_S exp(−24c²(p−1)^{5/3} ln(1/γ))."""
    _check_gamma(gamma)
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    return delta_S * math.exp(-24.0 * c * c * (p - 1.0) ** (5.0 / 3.0) * math.log(1.0 / gamma))


# ---------------------------------------------------------------------------
# Сеточные прогоны
# ---------------------------------------------------------------------------

LIFESPAN_COLUMNS = ["index", "delta", "T_escape", "censored"]
MASS_SCAN_COLUMNS = ["index", "m", "passed", "worst_ell", "worst_ratio", "checked", "shortcut"]


def _lifespan_point(
    index: int,
    delta: float,
    spec: NonlinearitySpec,
    M: int,
    m: float,
    w: Weight,
    horizon: float,
    dt: float,
    scheme: Scheme,
    sample_every: int,
    active_modes: int,
    seed: int,
) -> Tuple[Dict[str, Any], pd.DataFrame]:
    u0 = random_state(M, m, delta, w, active_modes=active_modes, seed=seed)
    result = stability_time(u0, spec, delta, w, horizon, dt, scheme=scheme, sample_every=sample_every)
    row = {"index": index, "delta": delta, "T_escape": result.T_escape, "censored": result.censored}
    return row, result.trajectory


def lifespan_sweep(
    deltas: Sequence[float],
    spec: NonlinearitySpec,
    M: int,
    m: float,
    w: Weight,
    horizon: float,
    dt: float,
    scheme: Scheme = Scheme.strang,
    sample_every: int = 10,
    active_modes: int = 1,
    seed: int = 0,
    n_jobs: int = 1,
) -> Tuple[pd.DataFrame, Dict[float, pd.DataFrame]]:
    """
    Времена выхода для сетки δ. Профиль начальных данных один и тот же (seed),
    меняется только амплитуда; результаты упорядочены по индексу сетки.

    Returns:
        (таблица index/delta/T_escape/censored, траектории по δ)
    """
    if not deltas:
        raise ParameterError("delta grid is empty")
    jobs = [
        delayed(_lifespan_point)(i, float(d), spec, M, m, w, horizon, dt, Scheme(scheme), sample_every, active_modes, seed)
        for i, d in enumerate(deltas)
    ]
    results = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [job[0](*job[1], **job[2]) for job in jobs]
    results = sorted(results, key=lambda item: item[0]["index"])
    table = pd.DataFrame([row for row, _ in results], columns=LIFESPAN_COLUMNS)
    trajectories = {row["delta"]: traj for row, traj in results}
    logger.info("[RUN] lifespan sweep over %d deltas done", len(deltas))
    return table, trajectories


def _mass_point(index: int, m: float, gamma: float, max_l1: int, M: int, budget: int) -> Tuple[Dict[str, Any], pd.DataFrame]:
    report = check_diophantine(m, gamma, max_l1, M, budget=budget)
    worst_ell, worst_ratio = (report.worst[0].encode(), report.worst[1]) if report.worst else ("", math.inf)
    row = {
        "index": index,
        "m": m,
        "passed": report.passed,
        "worst_ell": worst_ell,
        "worst_ratio": worst_ratio,
        "checked": report.checked,
        "shortcut": report.shortcut,
    }
    return row, report.rows


def mass_scan(
    m_values: Sequence[float],
    gamma: float,
    max_l1: int,
    M: int,
    budget: int = DEFAULT_ENUM_BUDGET,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Диофантов аудит на сетке масс; строки в порядке сетки."""
    if len(m_values) == 0:
        raise ParameterError("mass grid is empty")
    jobs = [delayed(_mass_point)(i, float(m), gamma, max_l1, M, budget) for i, m in enumerate(m_values)]
    results = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [job[0](*job[1], **job[2]) for job in jobs]
    rows = sorted((row for row, _ in results), key=lambda row: row["index"])
    return pd.DataFrame(rows, columns=MASS_SCAN_COLUMNS)


# ---------------------------------------------------------------------------
# Атомарная запись
# ---------------------------------------------------------------------------

def _atomic_write(path: Union[str, Path], data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info("[SAVE] %s (%d bytes)", path, len(data))
    return path


def write_bytes_atomic(data: bytes, path: Union[str, Path]) -> Path:
    return _atomic_write(path, data)


def write_text_atomic(text: str, path: Union[str, Path]) -> Path:
    return _atomic_write(path, text.encode("utf-8"))


def csv_text(df: pd.DataFrame) -> str:
    """CSV с полной точностью float (%.17g), без индекса."""
    return df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def write_csv_atomic(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    return write_text_atomic(csv_text(df), path)


def json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"


def write_json_atomic(obj: Any, path: Union[str, Path]) -> Path:
    return write_text_atomic(json_text(obj), path)


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
