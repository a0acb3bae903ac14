"""
Весовые последовательности и нормы на усечённом окне мод [-M, M].

Поддерживаются два семейства весов:
    sub-exponential: w_j = ⌊j⌋^p · exp(s·λ(j)),  λ(j) = (ln(2 + ⟨j⟩))^q
    Sobolev:         w_j = ⌊j⌋^p
где ⌊j⌋ = max(2, |j|), ⟨j⟩ = max(1, |j|).

Все веса вычисляются по формуле (лениво), таблицы не хранятся.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.special import zeta

from .errors import DimensionError, DomainError, ParameterError

logger = logging.getLogger(__name__)

REL_TOL = 1e-12

IndexLike = Union[Mapping[int, int], Iterable[Tuple[int, int]]]


class WeightKind(str, Enum):
    subexp = "subexp"
    sobolev = "sobolev"


def floor_index(j):
    """⌊j⌋ := max{2, |j|}; работает и для numpy-массивов."""
    return np.maximum(2, np.abs(j))


def bracket_index(j):
    """⟨j⟩ := max{1, |j|}."""
    return np.maximum(1, np.abs(j))


def _check_q(q: float) -> None:
    if not (1.0 < q <= 2.0):
        raise ParameterError(f"q must lie in (1, 2], got {q}")


def lambda_weight(j, q: float):
    """
    λ(j) = (ln(2 + ⟨j⟩))^q.

    Args:
        j: целое число или массив мод
        q: показатель из (1, 2]

    Returns:
        float или np.ndarray, чётная по j функция
    """
    _check_q(q)
    value = np.log(2.0 + bracket_index(np.asarray(j, dtype=float))) ** q
    if np.ndim(value) == 0:
        return float(value)
    return value


def lambda_real(x, q: float):
    """λ(x) = (ln(2 + x))^q для вещественных x > 0 (используется в оценках приложения)."""
    _check_q(q)
    return np.log(2.0 + np.asarray(x, dtype=float)) ** q


@dataclass(frozen=True)
class Weight:
    kind: WeightKind
    p: float
    M: int
    s: float = 0.0
    q: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if not self.p > 0.5:
            raise ParameterError(f"p must be > 1/2, got {self.p}")
        if int(self.M) != self.M or self.M < 1:
            raise ParameterError(f"mode cutoff M must be a positive integer, got {self.M}")
        object.__setattr__(self, "M", int(self.M))
        if self.kind is WeightKind.subexp:
            _check_q(self.q)
            if self.s < 0:
                raise ParameterError(f"s must be nonnegative, got {self.s}")

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def log_value(self, j):
        """ln w_j; массивы поддерживаются."""
        j = np.asarray(j)
        out = self.p * np.log(floor_index(j).astype(float))
        if self.kind is WeightKind.subexp and self.s:
            out = out + self.s * np.log(2.0 + bracket_index(j).astype(float)) ** self.q
        return out

    def value(self, j):
        return np.exp(self.log_value(j))

    def values(self) -> np.ndarray:
        """Веса на всём окне [-M, M]."""
        return self.value(self.modes)

    def shifted(self, sigma: float = 0.0, dp: float = 0.0) -> "Weight":
        """w(s + σ, p + dp) с тем же окном."""
        return Weight(kind=self.kind, p=self.p + dp, M=self.M, s=self.s + sigma, q=self.q)

    def with_cutoff(self, M: int) -> "Weight":
        return Weight(kind=self.kind, p=self.p, M=M, s=self.s, q=self.q)


@dataclass(frozen=True, eq=False)
class SeqState:
    """Коэффициенты (u_j)_{|j|≤M}; хранятся массивом длины 2M+1, индекс j+M."""

    coeffs: np.ndarray
    M: int = field(default=-1)

    def __post_init__(self) -> None:
        arr = np.array(self.coeffs, dtype=complex)
        if arr.ndim != 1 or arr.size % 2 == 0:
            raise DimensionError(f"expected a vector of odd length 2M+1, got shape {arr.shape}")
        M = (arr.size - 1) // 2
        if self.M not in (-1, M):
            raise DimensionError(f"cutoff M={self.M} does not match vector length {arr.size}")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)
        object.__setattr__(self, "M", M)

    @classmethod
    def zeros(cls, M: int) -> "SeqState":
        return cls(np.zeros(2 * M + 1, dtype=complex), M)

    @classmethod
    def unit(cls, j: int, M: int, value: complex = 1.0) -> "SeqState":
        if abs(j) > M:
            raise DimensionError(f"mode {j} outside window [-{M}, {M}]")
        arr = np.zeros(2 * M + 1, dtype=complex)
        arr[j + M] = value
        return cls(arr, M)

    @classmethod
    def from_mapping(cls, entries: Mapping[int, complex], M: int) -> "SeqState":
        arr = np.zeros(2 * M + 1, dtype=complex)
        for j, value in entries.items():
            if abs(j) > M:
                raise DimensionError(f"mode {j} outside window [-{M}, {M}]")
            arr[j + M] = value
        return cls(arr, M)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def __getitem__(self, j: int) -> complex:
        if abs(j) > self.M:
            return 0j
        return complex(self.coeffs[j + self.M])

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


def _same_cutoff(a: int, b: int, what: str) -> None:
    if a != b:
        raise DimensionError(f"cutoff mismatch in {what}: {a} != {b}")


def seq_norm(u: SeqState, w: Weight) -> float:
    """|u|_w = sqrt(Σ w_j² |u_j|²) по окну [-M, M]."""
    _same_cutoff(u.M, w.M, "seq_norm")
    return float(np.sqrt(np.sum(w.values() ** 2 * np.abs(u.coeffs) ** 2)))


def convolve(f: SeqState, g: SeqState) -> SeqState:
    """
    Свёртка (f⋆g)_j = Σ_{j1+j2=j} f_{j1} g_{j2}, обрезанная до окна [-M, M].

    Полная свёртка имеет длину 4M+1 с центром в 2M.
    """
    _same_cutoff(f.M, g.M, "convolve")
    M = f.M
    full = np.convolve(f.coeffs, g.coeffs)
    return SeqState(full[M : 3 * M + 1], M)


def algebra_constant(kind: WeightKind, p: float) -> float:
    """
    Константа алгебры свёртки.

    sub-exponential: C_alg(p) = 8^p (Σ_{i∈Z} ⟨i⟩^{-p})^{1/2} = 8^p (1 + 2ζ(p))^{1/2};
    ряд расходится при p ≤ 1, тогда возвращается +inf.
    Sobolev: C_alg,M(p) = √2 · √(2 + (2p+1)/(2p-1)).
    """
    kind = WeightKind(kind)
    if not p > 0.5:
        raise ParameterError(f"p must be > 1/2, got {p}")
    if kind is WeightKind.sobolev:
        return math.sqrt(2.0) * math.sqrt(2.0 + (2.0 * p + 1.0) / (2.0 * p - 1.0))
    if p <= 1.0:
        return math.inf
    return 8.0 ** p * math.sqrt(1.0 + 2.0 * float(zeta(p, 1)))


def _as_dict(index: IndexLike) -> dict:
    if isinstance(index, Mapping):
        return {int(k): int(v) for k, v in index.items() if v}
    return {int(k): int(v) for k, v in index if v}


def log_coeff_c(j: int, alpha: IndexLike, beta: IndexLike, r: float, w: Weight) -> float:
    """ln c^{(j)}_{r,w}(α, β); см. coeff_c."""
    if not r > 0:
        raise ParameterError(f"radius r must be positive, got {r}")
    a = _as_dict(alpha)
    b = _as_dict(beta)
    if a.get(j, 0) + b.get(j, 0) == 0:
        raise DomainError(f"mode {j} is not in the support of (alpha, beta)")
    degree = sum(a.values()) + sum(b.values())
    support = sorted(set(a) | set(b))
    exps = np.array([a.get(i, 0) + b.get(i, 0) for i in support], dtype=float)
    log_w = w.log_value(np.array(support))
    return float((degree - 2) * math.log(r) + 2.0 * w.log_value(j) - np.dot(exps, log_w))


def coeff_c(j: int, alpha: IndexLike, beta: IndexLike, r: float, w: Weight) -> float:
    """
    c^{(j)}_{r,w}(α, β) = r^{|α|+|β|-2} · w_j² / ∏_i w_i^{α_i+β_i}.

    Считается в логарифмах: произведение весов переполняется уже на умеренных степенях.

    Raises:
        DomainError: если α_j + β_j = 0
    """
    return math.exp(log_coeff_c(j, alpha, beta, r, w))


# ---------------------------------------------------------------------------
# Элементарные неравенства, на которых держатся оценки весов
# ---------------------------------------------------------------------------

def sublinear_gap(xs: Sequence[float], q: float, c: float = 0.0) -> float:
    """
    Σ_{ℓ≥2} λ(x_ℓ) − λ(Σ_{ℓ≥2} x_ℓ) − c·Σ_{ℓ≥3} λ(x_ℓ) для x_2 ≥ … ≥ x_N ≥ 1, N ≥ 4.

    Неотрицательность этой величины и есть проверяемое свойство.
    """
    x = np.sort(np.asarray(xs, dtype=float))[::-1]
    if x.size < 3:
        raise ParameterError(f"need N >= 4, i.e. at least 3 values x_2..x_N, got {x.size}")
    if x[-1] < 1.0:
        raise ParameterError(f"values must be >= 1, got min {x[-1]}")
    lam = lambda_real(x, q)
    return float(lam.sum() - lambda_real(x.sum(), q) - c * lam[1:].sum())


def max_power_exp(p: float, beta: float, x0: float) -> float:
    """
    max_{x ≥ x0} x^p e^{-βx}:
    (p/β)^p e^{-p}, если x0 ≤ p/β, иначе x0^p e^{-βx0}.
    """
    if p <= 0 or beta <= 0:
        raise ParameterError(f"p and beta must be positive, got p={p}, beta={beta}")
    x_star = p / beta
    if x0 <= x_star:
        return float(x_star ** p * math.exp(-p))
    return float(x0 ** p * math.exp(-beta * x0))


def rearrangement_bound(xs: Sequence[float]) -> Tuple[float, float]:
    """
    Возвращает (Σx_ℓ / ∏√x_ℓ, √x_1 + 4/√x_1) для x_1 ≥ … ≥ x_N ≥ 2.
    """
    x = np.sort(np.asarray(xs, dtype=float))[::-1]
    if x.size == 0 or x[-1] < 2.0:
        raise ParameterError("values must be nonempty and >= 2")
    lhs = x.sum() / math.exp(0.5 * np.log(x).sum())
    rhs = math.sqrt(x[0]) + 4.0 / math.sqrt(x[0])
    return float(lhs), float(rhs)
