"""
Малые делители уравнения балки.

Частоты ω_j(m) = √(j⁴ + m), m ∈ [1, 2]; делитель ψ(m, ℓ) = ω·ℓ.
Модуль проверяет диофантово условие на конечных перечислениях решётки,
оценку производных по m (вандермондова оценка) и методом Монте-Карло
оценивает меру «плохих» масс.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import comb

from .errors import BudgetError, DomainError, ParameterError
from .weighted_spaces import bracket_index, floor_index

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 1024
DEFAULT_ENUM_BUDGET = 10 ** 8
MAX_VANDER_CARDINALITY = 6
MC_CHUNK = 4096


def _check_mass(m) -> None:
    arr = np.asarray(m, dtype=float)
    if arr.size and (np.any(arr < 1.0) or np.any(arr > 2.0) or not np.all(np.isfinite(arr))):
        raise ParameterError(f"mass m must lie in [1, 2], got {m}")


def mass_grid(n: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Равномерная сетка по [1, 2] с концами."""
    if n < 2:
        raise ParameterError(f"grid needs at least 2 points, got {n}")
    return np.linspace(1.0, 2.0, n)


@dataclass(frozen=True)
class FrequencyVector:
    m: float
    M: int

    def __post_init__(self) -> None:
        _check_mass(self.m)
        if int(self.M) != self.M or self.M < 1:
            raise ParameterError(f"mode cutoff M must be a positive integer, got {self.M}")
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "M", int(self.M))

    def omega(self, j):
        j = np.asarray(j, dtype=float)
        value = np.sqrt(j ** 4 + self.m)
        return float(value) if value.ndim == 0 else value

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def values(self) -> np.ndarray:
        """ω_j на окне [-M, M] (индекс j+M)."""
        return np.sqrt(self.modes.astype(float) ** 4 + self.m)

    def divisor(self, ell: "LatticeVector") -> float:
        return divisor(ell, self.m)


@dataclass(frozen=True)
class LatticeVector:
    """Разреженный целочисленный вектор ℓ; entries - пары (мода, значение) без нулей."""

    entries: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        acc: Dict[int, int] = {}
        for j, v in self.entries:
            if int(v) != v:
                raise DomainError(f"lattice entries must be integers, got {v} at mode {j}")
            acc[int(j)] = acc.get(int(j), 0) + int(v)
        object.__setattr__(self, "entries", tuple(sorted((j, v) for j, v in acc.items() if v)))

    @classmethod
    def from_mapping(cls, values: Mapping[int, int]) -> "LatticeVector":
        return cls(tuple(values.items()))

    @classmethod
    def from_key(cls, key) -> "LatticeVector":
        """ℓ = α − β для ключа монома ((α), (β))."""
        alpha, beta = key
        return cls(tuple(alpha) + tuple((j, -e) for j, e in beta))

    @classmethod
    def parse(cls, text: str) -> "LatticeVector":
        """Обратная операция к encode(): '2:1,1:-2,0:1'."""
        text = text.strip()
        if not text or text == "0":
            return cls()
        pairs = []
        for item in text.split(","):
            mode, _, value = item.partition(":")
            pairs.append((int(mode), int(value)))
        return cls(tuple(pairs))

    def encode(self) -> str:
        return ",".join(f"{j}:{v}" for j, v in self.entries) or "0"

    def as_dict(self) -> Dict[int, int]:
        return dict(self.entries)

    def get(self, j: int) -> int:
        return self.as_dict().get(j, 0)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    @property
    def cardinality(self) -> int:
        """d(ℓ) = #{j : ℓ_j ≠ 0}."""
        return len(self.entries)

    @property
    def l1(self) -> int:
        return sum(abs(v) for _, v in self.entries)

    @property
    def momentum(self) -> int:
        return sum(j * v for j, v in self.entries)

    @property
    def max_mode(self) -> int:
        return max((abs(j) for j, _ in self.entries), default=0)

    def is_zero(self) -> bool:
        return not self.entries

    def __neg__(self) -> "LatticeVector":
        return LatticeVector(tuple((j, -v) for j, v in self.entries))

    def __add__(self, other: "LatticeVector") -> "LatticeVector":
        return LatticeVector(self.entries + other.entries)

    def __sub__(self, other: "LatticeVector") -> "LatticeVector":
        return self + (-other)

    def __str__(self) -> str:
        return self.encode()


def unit(j: int, value: int = 1) -> LatticeVector:
    return LatticeVector(((j, value),))


# ---------------------------------------------------------------------------
# Делитель и приведение суперакций
# ---------------------------------------------------------------------------

def divisor(ell: LatticeVector, m: float) -> float:
    """ω·ℓ = Σ ℓ_j √(j⁴ + m); суммирование по убыванию |j|."""
    _check_mass(m)
    total = 0.0
    for j, v in sorted(ell.entries, key=lambda item: (-abs(item[0]), item[0])):
        total += v * math.sqrt(j ** 4 + m)
    return total


def divisor_grid(ell: LatticeVector, m_values: np.ndarray) -> np.ndarray:
    """Векторизованный ω·ℓ на массиве масс."""
    m_values = np.asarray(m_values, dtype=float)
    _check_mass(m_values)
    total = np.zeros_like(m_values)
    for j, v in sorted(ell.entries, key=lambda item: (-abs(item[0]), item[0])):
        total = total + v * np.sqrt(float(j) ** 4 + m_values)
    return total


def reduce_superactions(ell: LatticeVector) -> LatticeVector:
    """
    Складывает ℓ_q и ℓ_{−q} в одну ячейку (ω_q = ω_{−q}).

    Если присутствуют обе моды ±q, сумма кладётся в +q; если одна - она остаётся
    на своём месте, поэтому операция идемпотентна.
    """
    values = ell.as_dict()
    out: Dict[int, int] = {}
    for j, v in values.items():
        if j > 0 and -j in values:
            out[j] = v + values[-j]
        elif j < 0 and -j in values:
            continue
        else:
            out[j] = v
    return LatticeVector(tuple(out.items()))


def is_nonresonant_vector(ell: LatticeVector) -> bool:
    """ℓ ∈ Λ ⇔ приведённый вектор ненулевой (делитель не равен нулю тождественно по m)."""
    return not reduce_superactions(ell).is_zero()


# ---------------------------------------------------------------------------
# Диофантово условие
# ---------------------------------------------------------------------------

def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")


def diophantine_tau(d: int) -> int:
    """τ = d(d + 2)."""
    return d * (d + 2)


def log_diophantine_bound(ell: LatticeVector, gamma: float, reduced_tau: bool = False) -> float:
    """ln( γ^d / ∏_{n∈supp ℓ} (1 + ℓ_n² ⟨n⟩²)^τ )."""
    if ell.is_zero():
        raise DomainError("diophantine bound is undefined for the zero vector")
    _check_gamma(gamma)
    d = ell.cardinality
    tau = diophantine_tau(reduce_superactions(ell).cardinality if reduced_tau else d)
    log_prod = math.fsum(math.log1p(v * v * float(bracket_index(j)) ** 2) for j, v in ell.entries)
    return d * math.log(gamma) - tau * log_prod


def diophantine_bound(ell: LatticeVector, gamma: float, reduced_tau: bool = False) -> float:
    """
    Правая часть диофантова условия ∏ γ^{d(ℓ)} / (1 + |ℓ_n|²⟨n⟩²)^τ, τ = d(d+2).

    Args:
        ell: ненулевой вектор решётки
        gamma: параметр из (0, 1)
        reduced_tau: брать d приведённого вектора при вычислении τ

    Returns:
        Значение (может уйти в 0.0 при очень больших |ℓ|; для сравнения
        используйте log_diophantine_bound)
    """
    return math.exp(log_diophantine_bound(ell, gamma, reduced_tau))


def dichotomy_premise(ell: LatticeVector) -> bool:
    """|Σ ℓ_i i²| > 10 Σ|ℓ_i|: в этом случае |ω·ℓ| ≥ 1 без дальнейшей проверки."""
    return abs(sum(v * j * j for j, v in ell.entries)) > 10 * ell.l1


def dichotomy_holds(ell: LatticeVector, m_values: Optional[np.ndarray] = None) -> bool:
    """True, если посылка дихотомии ложна или min_m |ω·ℓ| ≥ 1 на сетке."""
    if not dichotomy_premise(ell):
        return True
    grid = mass_grid() if m_values is None else m_values
    return bool(np.min(np.abs(divisor_grid(ell, grid))) >= 1.0)


def enumeration_estimate(max_l1: int, M: int) -> int:
    """Число целых векторов в [-M, M] с |ℓ|₁ ≤ L: Σ_i 2^i C(n, i) C(L, i)."""
    n = 2 * M + 1
    return int(sum(2 ** i * comb(n, i, exact=True) * comb(max_l1, i, exact=True) for i in range(0, min(n, max_l1) + 1)))


def _vectors_with_l1(modes: Sequence[int], total: int) -> Iterator[Dict[int, int]]:
    """Все векторы на modes с |ℓ|₁ = total, первая ненулевая компонента положительна."""

    def walk(pos: int, remaining: int, acc: Dict[int, int], signed: bool):
        if remaining == 0:
            yield dict(acc)
            return
        if pos == len(modes):
            return
        yield from walk(pos + 1, remaining, acc, signed)
        for size in range(1, remaining + 1):
            signs = (1, -1) if signed else (1,)
            for sign in signs:
                acc[modes[pos]] = sign * size
                yield from walk(pos + 1, remaining - size, acc, True)
            del acc[modes[pos]]

    yield from walk(0, total, {}, False)


def enumerate_lattice(
    max_l1: int,
    M: int,
    nonresonant_only: bool = True,
    budget: int = DEFAULT_ENUM_BUDGET,
) -> Iterator[LatticeVector]:
    """
    Перебор ℓ с 1 ≤ |ℓ|₁ ≤ max_l1 и носителем в [-M, M] в ширину по |ℓ|₁.

    Сначала фильтр сохранения импульса, затем (по желанию) приведение суперакций.
    Из пары ±ℓ выдаётся один представитель: |ω·ℓ| и граница от знака не зависят.

    Raises:
        BudgetError: если оценка числа кандидатов превышает budget
    """
    if max_l1 < 1 or M < 1:
        raise ParameterError(f"max_l1 and M must be positive, got max_l1={max_l1}, M={M}")
    estimate = enumeration_estimate(max_l1, M)
    if estimate > budget:
        raise BudgetError(f"enumeration of {estimate} vectors exceeds budget {budget}")
    modes = list(range(-M, M + 1))
    for total in range(1, max_l1 + 1):
        for values in _vectors_with_l1(modes, total):
            if sum(j * v for j, v in values.items()):
                continue
            ell = LatticeVector(tuple(values.items()))
            if nonresonant_only and not is_nonresonant_vector(ell):
                continue
            yield ell


@dataclass
class DiophantineReport:
    m: float
    gamma: float
    passed: bool
    worst: Optional[Tuple[LatticeVector, float]]
    enumerated: int
    checked: int
    skipped_resonant: int
    shortcut: int
    rows: pd.DataFrame

    def to_dict(self) -> Dict:
        worst = None
        if self.worst is not None:
            worst = {"ell": self.worst[0].encode(), "ratio": self.worst[1]}
        return {
            "m": self.m,
            "gamma": self.gamma,
            "passed": self.passed,
            "worst": worst,
            "enumerated": self.enumerated,
            "checked": self.checked,
            "skipped_resonant": self.skipped_resonant,
            "shortcut": self.shortcut,
        }


AUDIT_COLUMNS = ["ell", "d", "tau", "min_abs_divisor", "bound", "ratio"]


def check_diophantine(
    m: float,
    gamma: float,
    max_l1: int,
    M: int,
    budget: int = DEFAULT_ENUM_BUDGET,
    reduced_tau: bool = False,
) -> DiophantineReport:
    """
    Проверка |ω·ℓ| ≥ bound(ℓ, γ) для всех ℓ ∈ Λ с |ℓ|₁ ≤ max_l1, supp ⊂ [-M, M].

    Резонансные ℓ пропускаются; векторы с выполненной посылкой дихотомии
    засчитываются без вычисления делителя.
    """
    _check_mass(m)
    _check_gamma(gamma)
    rows: List[Dict] = []
    enumerated = skipped = shortcut = 0
    worst: Optional[Tuple[LatticeVector, float]] = None
    worst_log = math.inf
    for ell in enumerate_lattice(max_l1, M, nonresonant_only=False, budget=budget):
        enumerated += 1
        if not is_nonresonant_vector(ell):
            skipped += 1
            continue
        if dichotomy_premise(ell):
            shortcut += 1
            continue
        value = abs(divisor(ell, m))
        log_bound = log_diophantine_bound(ell, gamma, reduced_tau)
        log_ratio = math.log(value) - log_bound if value > 0 else -math.inf
        ratio = math.exp(min(log_ratio, 700.0))
        rows.append(
            {
                "ell": ell.encode(),
                "d": ell.cardinality,
                "tau": diophantine_tau(reduce_superactions(ell).cardinality if reduced_tau else ell.cardinality),
                "min_abs_divisor": value,
                "bound": math.exp(log_bound),
                "ratio": ratio,
            }
        )
        if log_ratio < worst_log:
            worst_log = log_ratio
            worst = (ell, ratio)
    passed = worst is None or worst_log >= 0.0
    logger.info(
        "[DIV] m=%.6g gamma=%.3g |l|<=%d M=%d: enumerated=%d checked=%d shortcut=%d passed=%s",
        m, gamma, max_l1, M, enumerated, len(rows), shortcut, passed,
    )
    return DiophantineReport(
        m=float(m),
        gamma=float(gamma),
        passed=passed,
        worst=worst,
        enumerated=enumerated,
        checked=len(rows),
        skipped_resonant=skipped,
        shortcut=shortcut,
        rows=pd.DataFrame(rows, columns=AUDIT_COLUMNS),
    )


# ---------------------------------------------------------------------------
# Производные делителя и вандермондова оценка
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def double_factorial(n: int) -> int:
    """n!! с соглашением (−1)!! = 0!! = 1."""
    if n <= 0:
        return 1
    return n * double_factorial(n - 2)


def gamma_coefficient(k: int) -> float:
    """Γ(k) = (−1)^{k+1} (2k−3)!! / 2^k."""
    if k < 1:
        raise DomainError(f"derivative order must be >= 1, got {k}")
    return (-1) ** (k + 1) * double_factorial(2 * k - 3) / 2.0 ** k


def derivative_divisor(k: int, ell: LatticeVector, m):
    """∂_m^k (ω·ℓ) = Γ(k) Σ ℓ_j ω_j^{1−2k}; m может быть массивом."""
    coeff = gamma_coefficient(k)
    m_arr = np.asarray(m, dtype=float)
    _check_mass(m_arr)
    total = np.zeros_like(m_arr)
    for j, v in sorted(ell.entries, key=lambda item: (-abs(item[0]), item[0])):
        total = total + v * (float(j) ** 4 + m_arr) ** (0.5 - k)
    out = coeff * total
    return float(out) if out.ndim == 0 else out


@dataclass
class VanderReport:
    ell: LatticeVector
    k_star: int
    min_abs: List[float]
    bound: float
    passed: bool

    def to_dict(self) -> Dict:
        return {
            "ell": self.ell.encode(),
            "k_star": self.k_star,
            "min_abs": list(self.min_abs),
            "bound": self.bound,
            "passed": self.passed,
        }


def vander_bound(ell: LatticeVector) -> float:
    """∏_{i∈supp} (1 + ℓ_i² ⟨i⟩²)^{−d(ℓ)}."""
    d = ell.cardinality
    return math.exp(-d * math.fsum(math.log1p(v * v * float(bracket_index(j)) ** 2) for j, v in ell.entries))


def vander_check(ell: LatticeVector, m_values: Optional[np.ndarray] = None) -> VanderReport:
    """
    Для k = 0..d−1 считает min по сетке |∂^k_m ψ(m, ℓ)| и сравнивает лучший из минимумов
    с оценкой vander_bound. Вектор предварительно приводится.

    Raises:
        DomainError: ℓ ∉ Λ
        BudgetError: d(ℓ) > 6
    """
    reduced = reduce_superactions(ell)
    if reduced.is_zero():
        raise DomainError(f"vector {ell.encode()} is resonant: its divisor vanishes identically")
    d = reduced.cardinality
    if d > MAX_VANDER_CARDINALITY:
        raise BudgetError(f"cardinality {d} exceeds the Vandermonde check limit {MAX_VANDER_CARDINALITY}")
    grid = mass_grid() if m_values is None else np.asarray(m_values, dtype=float)
    minima = [float(np.min(np.abs(divisor_grid(reduced, grid))))]
    for k in range(1, d):
        minima.append(float(np.min(np.abs(derivative_divisor(k, reduced, grid)))))
    k_star = int(np.argmax(minima))
    bound = vander_bound(reduced)
    return VanderReport(reduced, k_star, minima, bound, minima[k_star] >= bound)


# ---------------------------------------------------------------------------
# Мера плохого множества
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureEstimate:
    fraction: float
    stderr: float
    samples: int
    bad: int
    family_size: int

    def to_dict(self) -> Dict:
        return {
            "fraction": self.fraction,
            "stderr": self.stderr,
            "samples": self.samples,
            "bad": self.bad,
            "family_size": self.family_size,
        }


def _count_bad(seed: np.random.SeedSequence, size: int, modes: np.ndarray, lattice: np.ndarray, bounds: np.ndarray) -> int:
    rng = np.random.Generator(np.random.Philox(seed))
    masses = rng.uniform(1.0, 2.0, size)
    omega = np.sqrt(modes[None, :] ** 4 + masses[:, None])
    values = np.abs(omega @ lattice.T)
    return int(np.count_nonzero(np.any(values < bounds[None, :], axis=1)))


def bad_set_measure(
    family: Sequence[LatticeVector],
    gamma: float,
    samples: int,
    seed: int = 0,
    bound_fn: Callable[[LatticeVector, float], float] = diophantine_bound,
    n_jobs: int = 1,
) -> MeasureEstimate:
    """
    Монте-Карло оценка доли m ∈ [1, 2], для которых хотя бы один ℓ семейства
    нарушает |ω·ℓ| ≥ bound_fn(ℓ, γ).

    Выборка разбита на блоки фиксированного размера, каждому блоку - свой потомок
    SeedSequence, поэтому результат не зависит от n_jobs.

    Returns:
        MeasureEstimate с биномиальной стандартной ошибкой
    """
    if samples < 1000:
        raise ParameterError(f"need at least 1000 samples, got {samples}")
    _check_gamma(gamma)
    members = [ell for ell in family if is_nonresonant_vector(ell)]
    if not members:
        raise DomainError("bad-set family is empty after removing resonant vectors")
    M = max(ell.max_mode for ell in members)
    modes = np.arange(-M, M + 1, dtype=float)
    lattice = np.zeros((len(members), modes.size))
    for row, ell in enumerate(members):
        for j, v in ell.entries:
            lattice[row, j + M] = v
    bounds = np.array([bound_fn(ell, gamma) for ell in members])
    sizes = [MC_CHUNK] * (samples // MC_CHUNK)
    if samples % MC_CHUNK:
        sizes.append(samples % MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if n_jobs == 1:
        counts = [_count_bad(s, n, modes, lattice, bounds) for s, n in zip(seeds, sizes)]
    else:
        counts = Parallel(n_jobs=n_jobs)(
            delayed(_count_bad)(s, n, modes, lattice, bounds) for s, n in zip(seeds, sizes)
        )
    bad = int(sum(counts))
    fraction = bad / samples
    stderr = math.sqrt(fraction * (1.0 - fraction) / samples)
    logger.info("[DIV] bad-set gamma=%.3g family=%d samples=%d -> %.3e +- %.1e", gamma, len(members), samples, fraction, stderr)
    return MeasureEstimate(fraction, stderr, samples, bad, len(members))


# ---------------------------------------------------------------------------
# Вспомогательные оценки для соболевского режима
# ---------------------------------------------------------------------------

def decreasing_rearrangement(v: Mapping[int, int]) -> List[int]:
    """
    n̂(v): каждое h > 1 повторено v_h + v_{−h} раз, единица повторена
    v_1 + v_{−1} + v_0 раз; всё по убыванию.
    """
    counts: Dict[int, int] = {}
    for j, e in v.items():
        if e < 0:
            raise DomainError(f"rearrangement needs nonnegative counts, got {e} at mode {j}")
        h = max(1, abs(int(j)))
        counts[h] = counts.get(h, 0) + int(e)
    out: List[int] = []
    for h in sorted(counts, reverse=True):
        out.extend([h] * counts[h])
    return out


def log_sobolev_sup_term(alpha: Mapping[int, int], beta: Mapping[int, int], j: int, delta: float, tau: float) -> float:
    """
    ln[ (⌊j⌋² / ∏⌊i⌋^{α_i+β_i})^δ · ∏_{i∈supp(α−β)} ((1 + |α_i−β_i|²)⟨i⟩²)^τ ].
    """
    a = {int(k): int(e) for k, e in alpha.items() if e}
    b = {int(k): int(e) for k, e in beta.items() if e}
    if a.get(j, 0) + b.get(j, 0) == 0:
        raise DomainError(f"mode {j} is not in the support of (alpha, beta)")
    modes = sorted(set(a) | set(b))
    log_ratio = 2.0 * math.log(floor_index(j)) - math.fsum(
        (a.get(i, 0) + b.get(i, 0)) * math.log(floor_index(i)) for i in modes
    )
    log_prod = 0.0
    for i in modes:
        ell = a.get(i, 0) - b.get(i, 0)
        if ell:
            log_prod += math.log1p(ell * ell) + 2.0 * math.log(bracket_index(i))
    return delta * log_ratio + tau * log_prod


def log_sobolev_sup_bound(delta: float, N: int) -> float:
    """ln[ 2^{δ−1} (4⁶ e²⁷)^{72N²} 6^δ ]."""
    return (delta - 1.0) * math.log(2.0) + 72.0 * N * N * (6.0 * math.log(4.0) + 27.0) + delta * math.log(6.0)


def sobolev_sup_admissible(alpha: Mapping[int, int], beta: Mapping[int, int], j: int, delta: float, tau: float, N: int) -> bool:
    """Условия, при которых справедлива оценка log_sobolev_sup_bound."""
    if N < 1 or delta < (36 * N) ** 2 or tau > 36 * N * N:
        return False
    a = {int(k): int(e) for k, e in alpha.items() if e}
    b = {int(k): int(e) for k, e in beta.items() if e}
    if sum(a.values()) + sum(b.values()) != N + 2:
        return False
    if a.get(j, 0) + b.get(j, 0) == 0:
        return False
    if sum(k * e for k, e in a.items()) != sum(k * e for k, e in b.items()):
        return False
    return a != b
