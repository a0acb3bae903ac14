"""
Разреженные полиномиальные гамильтонианы на усечённом фазовом пространстве.

Гамильтониан хранится как словарь {(α, β): H_{α,β}}, где мультииндекс α -
отсортированный кортеж пар (мода, степень) без нулевых степеней.
Моном u^α ū^β вещественного гамильтониана всегда хранится вместе с
сопряжённым партнёром (β, α) с коэффициентом conj(H_{α,β}).

Соглашения о знаках:
    {H, G} = i Σ_j (∂_{u_j}G ∂_{ū_j}H − ∂_{ū_j}G ∂_{u_j}H)
    X_H^{(j)} = −i ∂_{ū_j} H
    L_S H = {H, S},  H∘Φ¹_S = e^{L_S} H
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .errors import DimensionError, DomainError, ParameterError
from .weighted_spaces import SeqState, Weight

logger = logging.getLogger(__name__)

MultiIndex = Tuple[Tuple[int, int], ...]
Key = Tuple[MultiIndex, MultiIndex]

DROP_TOL = 1e-15
REALITY_TOL = 1e-12
# меньше этого числа пар мономов скобка считается в одном процессе
PARALLEL_MIN_PAIRS = 20000


class DegreeMode(str, Enum):
    equal = "equal"
    greater = "greater"


class ResonantPart(str, Enum):
    kernel = "kernel"
    range = "range"


# ---------------------------------------------------------------------------
# Мультииндексы
# ---------------------------------------------------------------------------

def multi_index(entries: Union[Mapping[int, int], Iterable[Tuple[int, int]], None]) -> MultiIndex:
    """Канонический мультииндекс: пары (мода, степень) по возрастанию моды, без нулей."""
    if entries is None:
        return ()
    items = entries.items() if isinstance(entries, Mapping) else entries
    acc: Dict[int, int] = defaultdict(int)
    for mode, exp in items:
        if int(exp) != exp or exp < 0:
            raise DomainError(f"exponents must be nonnegative integers, got {exp} at mode {mode}")
        acc[int(mode)] += int(exp)
    return tuple(sorted((j, e) for j, e in acc.items() if e))


def mi_degree(index: MultiIndex) -> int:
    return sum(e for _, e in index)


def key_degree(key: Key) -> int:
    return mi_degree(key[0]) + mi_degree(key[1])


def conjugate_key(key: Key) -> Key:
    return (key[1], key[0])


def key_momentum(key: Key) -> int:
    """π(α − β) = Σ_j j(α_j − β_j)."""
    return sum(j * e for j, e in key[0]) - sum(j * e for j, e in key[1])


def key_lattice(key: Key) -> Dict[int, int]:
    """ℓ = α − β без нулевых компонент."""
    ell: Dict[int, int] = defaultdict(int)
    for j, e in key[0]:
        ell[j] += e
    for j, e in key[1]:
        ell[j] -= e
    return {j: v for j, v in sorted(ell.items()) if v}


def is_resonant_key(key: Key) -> bool:
    """
    (α, β) ∈ R  ⇔  ℓ_j + ℓ_{−j} = 0 для всех j ≥ 0, ℓ = α − β,
    то есть reduce_superactions(ℓ) = 0 (условие на суперактивности, а не помодовое).

    Делитель ω·ℓ при этом тождественно равен нулю по m. Помодово допустимые мономы
    вроде ū₋₁²ū₂ с ненулевым делителем попадают в Range.
    """
    ell = key_lattice(key)
    if ell.get(0, 0):
        return False
    return all(v + ell.get(-j, 0) == 0 for j, v in ell.items() if j > 0) and all(
        v + ell.get(-j, 0) == 0 for j, v in ell.items() if j < 0
    )


def _sort_key(key: Key):
    return (key_degree(key), key)


def _format_index(index: MultiIndex) -> str:
    return ",".join(f"{j}:{e}" for j, e in index)


def format_key(key: Key) -> str:
    return f"u^[{_format_index(key[0])}] ubar^[{_format_index(key[1])}]"


@dataclass(frozen=True)
class Monomial:
    alpha: MultiIndex
    beta: MultiIndex
    coeff: complex

    @property
    def key(self) -> Key:
        return (self.alpha, self.beta)

    @property
    def degree(self) -> int:
        return mi_degree(self.alpha) + mi_degree(self.beta)

    @property
    def momentum(self) -> int:
        return key_momentum(self.key)


# ---------------------------------------------------------------------------
# Полиномиальный гамильтониан
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Compiled:
    """Плотное представление для численной оценки: коэффициенты и матрицы степеней."""

    coeffs: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def _clean(terms: Mapping[Key, complex]) -> Dict[Key, complex]:
    if not terms:
        return {}
    scale = max(abs(c) for c in terms.values())
    if scale == 0:
        return {}
    out: Dict[Key, complex] = {}
    for key in sorted(terms, key=_sort_key):
        c = complex(terms[key])
        if abs(c) <= DROP_TOL * scale:
            continue
        if key[0] == key[1]:
            c = complex(c.real, 0.0)
            if c == 0:
                continue
        out[key] = c
    return out


@dataclass(frozen=True, eq=False)
class PolyHamiltonian:
    terms: Mapping[Key, complex]
    M: int
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        if self.M < 1:
            raise DimensionError(f"mode cutoff M must be positive, got {self.M}")
        if not self._checked:
            _validate_terms(self.terms, self.M)
        object.__setattr__(self, "terms", MappingProxyType(_clean(self.terms)))

    # -- конструкторы -------------------------------------------------------

    @classmethod
    def zero(cls, M: int) -> "PolyHamiltonian":
        return cls({}, M, True)

    @classmethod
    def from_terms(cls, terms: Mapping[Key, complex], M: int) -> "PolyHamiltonian":
        """
        Публичный конструктор: проверяет импульс, степени и окно мод,
        достраивает сопряжённых партнёров.
        """
        _validate_terms(terms, M)
        return cls(_symmetrize(terms), M, True)

    @classmethod
    def from_monomials(
        cls,
        monomials: Iterable[Tuple[Mapping[int, int], Mapping[int, int], complex]],
        M: int,
    ) -> "PolyHamiltonian":
        terms: Dict[Key, complex] = defaultdict(complex)
        for alpha, beta, coeff in monomials:
            terms[(multi_index(alpha), multi_index(beta))] += coeff
        return cls.from_terms(terms, M)

    @classmethod
    def diagonal(cls, values: Union[Mapping[int, float], Sequence[float], np.ndarray], M: int) -> "PolyHamiltonian":
        """Σ_j f_j |u_j|²; массив значений индексируется j+M."""
        if isinstance(values, Mapping):
            items = values.items()
        else:
            arr = np.asarray(values, dtype=float)
            if arr.size != 2 * M + 1:
                raise DimensionError(f"expected {2 * M + 1} diagonal values, got {arr.size}")
            items = zip(range(-M, M + 1), arr)
        terms = {(((j, 1),), ((j, 1),)): complex(v) for j, v in items if v}
        return cls.from_terms(terms, M)

    @classmethod
    def _trusted(cls, terms: Mapping[Key, complex], M: int) -> "PolyHamiltonian":
        return cls(terms, M, True)

    # -- арифметика ---------------------------------------------------------

    def _combine(self, other: "PolyHamiltonian", sign: float) -> "PolyHamiltonian":
        _same_cutoff(self, other)
        acc: Dict[Key, complex] = dict(self.terms)
        for key, c in other.terms.items():
            acc[key] = acc.get(key, 0j) + sign * c
        return PolyHamiltonian._trusted(acc, self.M)

    def __add__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self._combine(other, 1.0)

    def __sub__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self._combine(other, -1.0)

    def __neg__(self) -> "PolyHamiltonian":
        return self.scale(-1.0)

    def scale(self, factor: float) -> "PolyHamiltonian":
        if isinstance(factor, complex) and factor.imag:
            raise DomainError("only real scalars keep a Hamiltonian real")
        return PolyHamiltonian._trusted({k: c * factor for k, c in self.terms.items()}, self.M)

    def __mul__(self, factor: float) -> "PolyHamiltonian":
        return self.scale(factor)

    __rmul__ = __mul__

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def monomials(self) -> List[Monomial]:
        return [Monomial(k[0], k[1], c) for k, c in self.terms.items()]

    def coefficient(self, alpha, beta) -> complex:
        return self.terms.get((multi_index(alpha), multi_index(beta)), 0j)

    def degrees(self) -> List[int]:
        return sorted({key_degree(k) for k in self.terms})

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def l1_coeff(self) -> float:
        return math.fsum(abs(c) for c in self.terms.values())

    def with_cutoff(self, M: int) -> "PolyHamiltonian":
        """Тот же полином в более широком окне мод."""
        if M < self.M:
            raise DimensionError(f"cannot shrink cutoff from {self.M} to {M}")
        return PolyHamiltonian._trusted(dict(self.terms), M)

    # -- инварианты ----------------------------------------------------------

    def reality_defect(self) -> float:
        """max |H_{α,β} − conj(H_{β,α})|."""
        worst = 0.0
        for key, c in self.terms.items():
            partner = self.terms.get(conjugate_key(key), 0j)
            worst = max(worst, abs(c - partner.conjugate()))
        return worst

    def check_invariants(self) -> None:
        """Поднимает DomainError при нарушении вещественности или сохранения импульса."""
        scale = max(1.0, self.max_abs_coeff())
        if self.reality_defect() > REALITY_TOL * scale:
            raise DomainError(f"reality violated, defect {self.reality_defect():.3e}")
        for key in self.terms:
            if key_momentum(key):
                raise DomainError(f"momentum not conserved by {format_key(key)}")
            if key_degree(key) < 2:
                raise DomainError(f"monomial {format_key(key)} has degree < 2")

    # -- численная оценка ----------------------------------------------------

    @cached_property
    def compiled(self) -> _Compiled:
        n = 2 * self.M + 1
        size = len(self.terms)
        alpha = np.zeros((size, n), dtype=np.int64)
        beta = np.zeros((size, n), dtype=np.int64)
        coeffs = np.zeros(size, dtype=complex)
        for row, (key, c) in enumerate(self.terms.items()):
            coeffs[row] = c
            for j, e in key[0]:
                alpha[row, j + self.M] = e
            for j, e in key[1]:
                beta[row, j + self.M] = e
        return _Compiled(coeffs, alpha, beta)

    def evaluate(self, u: Union[SeqState, np.ndarray]) -> float:
        """H(u) = Σ H_{α,β} u^α ū^β (вещественное число)."""
        vec = _as_vector(u, self.M)
        comp = self.compiled
        if comp.coeffs.size == 0:
            return 0.0
        values = np.prod(vec[None, :] ** comp.alpha, axis=1) * np.prod(np.conj(vec)[None, :] ** comp.beta, axis=1)
        return float(np.sum(comp.coeffs * values).real)

    def field_array(self, u: Union[SeqState, np.ndarray], majorant: bool = False) -> np.ndarray:
        """Векторное поле X_H(u) как массив длины 2M+1."""
        vec = _as_vector(u, self.M)
        comp = self.compiled
        n = 2 * self.M + 1
        out = np.zeros(n, dtype=complex)
        if comp.coeffs.size == 0:
            return out
        coeffs = np.abs(comp.coeffs) if majorant else comp.coeffs
        u_pow = np.prod(vec[None, :] ** comp.alpha, axis=1)
        conj = np.conj(vec)
        for col in range(n):
            rows = comp.beta[:, col] > 0
            if not np.any(rows):
                continue
            b = comp.beta[rows].copy()
            b[:, col] -= 1
            ubar_pow = np.prod(conj[None, :] ** b, axis=1)
            out[col] = -1j * np.sum(coeffs[rows] * comp.beta[rows, col] * u_pow[rows] * ubar_pow)
        return out


def _as_vector(u: Union[SeqState, np.ndarray], M: int) -> np.ndarray:
    if isinstance(u, SeqState):
        if u.M != M:
            raise DimensionError(f"cutoff mismatch: state M={u.M}, Hamiltonian M={M}")
        return np.asarray(u.coeffs)
    vec = np.asarray(u, dtype=complex)
    if vec.shape != (2 * M + 1,):
        raise DimensionError(f"expected vector of length {2 * M + 1}, got shape {vec.shape}")
    return vec


def _validate_terms(terms: Mapping[Key, complex], M: int) -> None:
    for key in terms:
        alpha, beta = key
        for j, e in alpha + beta:
            if abs(j) > M:
                raise DimensionError(f"mode {j} of {format_key(key)} outside window [-{M}, {M}]")
            if e <= 0:
                raise DomainError(f"non-canonical exponent {e} in {format_key(key)}")
        if key_degree(key) < 2:
            raise DomainError(f"monomial {format_key(key)} has degree < 2")
        if key_momentum(key):
            raise DomainError(f"monomial {format_key(key)} does not conserve momentum")


def _symmetrize(terms: Mapping[Key, complex]) -> Dict[Key, complex]:
    out: Dict[Key, complex] = {}
    for key, c in terms.items():
        c = complex(c)
        partner = conjugate_key(key)
        tol = REALITY_TOL * max(1.0, abs(c))
        if partner == key:
            if abs(c.imag) > tol:
                raise DomainError(f"self-conjugate monomial {format_key(key)} needs a real coefficient, got {c}")
            out[key] = complex(c.real, 0.0)
        elif partner in terms:
            if abs(complex(terms[partner]) - c.conjugate()) > tol:
                raise DomainError(f"coefficients of {format_key(key)} and its conjugate are inconsistent")
            out[key] = c
        else:
            out[key] = c
            out[partner] = c.conjugate()
    return out


def _same_cutoff(a: PolyHamiltonian, b: PolyHamiltonian) -> None:
    if a.M != b.M:
        raise DimensionError(f"cutoff mismatch: {a.M} != {b.M}")


# ---------------------------------------------------------------------------
# Скобка Пуассона
# ---------------------------------------------------------------------------

_Unpacked = Tuple[Key, complex, Dict[int, int], Dict[int, int], int]


def _unpack(terms: Mapping[Key, complex]) -> List[_Unpacked]:
    rows = [(k, complex(c), dict(k[0]), dict(k[1]), key_degree(k)) for k, c in terms.items()]
    rows.sort(key=lambda row: (row[4], row[0]))
    return rows


def _shift(left: Dict[int, int], right: Dict[int, int], j: int) -> MultiIndex:
    acc = dict(left)
    for mode, e in right.items():
        acc[mode] = acc.get(mode, 0) + e
    acc[j] -= 1
    return tuple(sorted((mode, e) for mode, e in acc.items() if e))


def _bracket_chunk(hs: List[_Unpacked], gs: List[_Unpacked], max_degree: Optional[int]):
    parts: Dict[Key, List[complex]] = defaultdict(list)
    dropped = 0.0
    # хвостовые суммы |g|·deg(g) для оценки отброшенной массы
    tail = np.zeros(len(gs) + 1)
    for idx in range(len(gs) - 1, -1, -1):
        tail[idx] = tail[idx + 1] + abs(gs[idx][1]) * gs[idx][4]
    for _, hc, ha, hb, hd in hs:
        for idx, (_, gc, ga, gb, gd) in enumerate(gs):
            if max_degree is not None and hd + gd - 2 > max_degree:
                dropped += abs(hc) * hd * float(tail[idx])
                break
            # моды, где ∂_{u_j}G ∂_{ū_j}H или ∂_{ū_j}G ∂_{u_j}H не ноль
            modes = sorted((gb.keys() & ha.keys()) | (ga.keys() & hb.keys()))
            for j in modes:
                factor = ga.get(j, 0) * hb.get(j, 0) - gb.get(j, 0) * ha.get(j, 0)
                if factor == 0:
                    continue
                key = (_shift(ha, ga, j), _shift(hb, gb, j))
                parts[key].append(1j * hc * gc * factor)
    return parts, dropped


def bracket_terms(
    h_terms: Mapping[Key, complex],
    g_terms: Mapping[Key, complex],
    max_degree: Optional[int] = None,
    n_jobs: int = 1,
) -> Tuple[Dict[Key, complex], float]:
    """
    Скобка {H, G} на уровне словарей мономов, без проверок вещественности и импульса.

    Args:
        h_terms, g_terms: словари {(α, β): коэффициент}
        max_degree: наибольшая сохраняемая полная степень |α|+|β|
        n_jobs: число процессов joblib (1 - последовательно)

    Returns:
        (словарь результата, грубая l1-оценка отброшенных коэффициентов)
    """
    hs = _unpack(h_terms)
    gs = _unpack(g_terms)
    if not hs or not gs:
        return {}, 0.0
    if n_jobs != 1 and len(hs) * len(gs) >= PARALLEL_MIN_PAIRS:
        n_chunks = min(len(hs), 4 * abs(n_jobs) if n_jobs > 0 else 16)
        chunks = [hs[i::n_chunks] for i in range(n_chunks)]
        results = Parallel(n_jobs=n_jobs)(delayed(_bracket_chunk)(chunk, gs, max_degree) for chunk in chunks)
    else:
        results = [_bracket_chunk(hs, gs, max_degree)]
    merged: Dict[Key, List[complex]] = defaultdict(list)
    dropped = 0.0
    for parts, lost in results:
        dropped += lost
        for key, values in parts.items():
            merged[key].extend(values)
    # fsum не зависит от порядка слагаемых: результат воспроизводим при любом n_jobs
    out = {
        key: complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))
        for key, values in merged.items()
    }
    return {k: c for k, c in out.items() if c != 0}, dropped


def poisson_bracket(H: PolyHamiltonian, G: PolyHamiltonian, n_jobs: int = 1) -> PolyHamiltonian:
    """{H, G} = i Σ_j (∂_{u_j}G ∂_{ū_j}H − ∂_{ū_j}G ∂_{u_j}H)."""
    _same_cutoff(H, G)
    terms, _ = bracket_terms(H.terms, G.terms, n_jobs=n_jobs)
    return PolyHamiltonian._trusted(terms, H.M)


# ---------------------------------------------------------------------------
# Степени и проекции
# ---------------------------------------------------------------------------

def scaling_degree(H: PolyHamiltonian) -> Union[int, float]:
    """Минимальное d с Π^{(d)}H ≠ 0; для нулевого гамильтониана +inf."""
    if not H.terms:
        return math.inf
    return min(key_degree(k) for k in H.terms) - 2


def project_degree(H: PolyHamiltonian, d: int, mode: DegreeMode = DegreeMode.equal) -> PolyHamiltonian:
    """Π^{(d)}H (mode=equal) или Π^{(>d)}H (mode=greater); d - масштабная степень."""
    if d < 0:
        raise ParameterError(f"scaling degree must be >= 0, got {d}")
    mode = DegreeMode(mode)
    total = d + 2
    if mode is DegreeMode.equal:
        kept = {k: c for k, c in H.terms.items() if key_degree(k) == total}
    else:
        kept = {k: c for k, c in H.terms.items() if key_degree(k) > total}
    return PolyHamiltonian._trusted(kept, H.M)


def split_by_degree(H: PolyHamiltonian) -> Dict[int, PolyHamiltonian]:
    """Разложение по масштабным степеням {d: Π^{(d)}H}."""
    groups: Dict[int, Dict[Key, complex]] = defaultdict(dict)
    for key, c in H.terms.items():
        groups[key_degree(key) - 2][key] = c
    return {d: PolyHamiltonian._trusted(groups[d], H.M) for d in sorted(groups)}


def project_resonant(H: PolyHamiltonian, part: ResonantPart = ResonantPart.kernel) -> PolyHamiltonian:
    """Π_K (резонансные мономы) или Π_R (остальные); Π_K + Π_R = id."""
    part = ResonantPart(part)
    want_kernel = part is ResonantPart.kernel
    kept = {k: c for k, c in H.terms.items() if is_resonant_key(k) == want_kernel}
    return PolyHamiltonian._trusted(kept, H.M)


def vector_field(H: PolyHamiltonian, u: SeqState, majorant: bool = False) -> SeqState:
    """
    X_H^{(j)}(u) = −i ∂_{ū_j} H(u).

    При majorant=True коэффициенты заменяются модулями (поле мажоранты H̲).
    """
    if u.M != H.M:
        raise DimensionError(f"cutoff mismatch: state M={u.M}, Hamiltonian M={H.M}")
    return SeqState(H.field_array(u, majorant=majorant), H.M)


def momentum_hamiltonian(M: int) -> PolyHamiltonian:
    """Σ_j j |u_j|²."""
    return PolyHamiltonian.diagonal({j: float(j) for j in range(-M, M + 1)}, M)


# ---------------------------------------------------------------------------
# Мажорантная норма
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormBracket:
    lower: float
    upper: float

    def scaled(self, factor: float) -> "NormBracket":
        return NormBracket(self.lower * factor, self.upper * factor)


@dataclass(frozen=True)
class _YMap:
    """Y^{(j)}(y) = Σ_rows a_row · y^{E_row}, строки сгруппированы по компоненте j."""

    component: np.ndarray
    amplitude: np.ndarray
    exponents: np.ndarray
    n: int


def _build_ymap(H: PolyHamiltonian, r: float, w: Weight) -> _YMap:
    if not r > 0:
        raise ParameterError(f"radius r must be positive, got {r}")
    if w.M != H.M:
        raise DimensionError(f"cutoff mismatch: weight M={w.M}, Hamiltonian M={H.M}")
    n = 2 * H.M + 1
    log_w = w.log_value(w.modes)
    log_r = math.log(r)
    components: List[int] = []
    amplitudes: List[float] = []
    exponents: List[np.ndarray] = []
    for key, c in H.terms.items():
        gamma = np.zeros(n, dtype=np.int64)
        for j, e in key[0] + key[1]:
            gamma[j + H.M] += e
        degree = int(gamma.sum())
        log_base = (degree - 2) * log_r - float(np.dot(gamma, log_w))
        for col in np.nonzero(gamma)[0]:
            log_c = log_base + 2.0 * log_w[col]
            amplitudes.append(abs(c) * gamma[col] / 2.0 * float(np.exp(min(log_c, 709.0))))
            exp_row = gamma.copy()
            exp_row[col] -= 1
            exponents.append(exp_row)
            components.append(int(col))
    if not components:
        return _YMap(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, n), dtype=np.int64), n)
    return _YMap(np.array(components), np.array(amplitudes), np.vstack(exponents), n)


def _y_values(ymap: _YMap, y: np.ndarray) -> np.ndarray:
    mono = ymap.amplitude * np.prod(y[None, :] ** ymap.exponents, axis=1)
    return np.bincount(ymap.component, weights=mono, minlength=ymap.n)


def _y_gradient(ymap: _YMap, y: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """∇ |Y(y)|² по y."""
    grad = np.zeros(ymap.n)
    weights = 2.0 * Y[ymap.component] * ymap.amplitude
    for k in range(ymap.n):
        rows = ymap.exponents[:, k] > 0
        if not np.any(rows):
            continue
        e = ymap.exponents[rows].copy()
        coef = e[:, k].astype(float)
        e[:, k] -= 1
        grad[k] = np.sum(weights[rows] * coef * np.prod(y[None, :] ** e, axis=1))
    return grad


def _ball_sup(exponents: np.ndarray) -> np.ndarray:
    """sup_{|y|≤1, y≥0} y^g = ∏ (g_i/|g|)^{g_i/2}."""
    total = exponents.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(exponents > 0, exponents / np.maximum(total, 1.0)[:, None], 1.0)
        logs = np.where(exponents > 0, 0.5 * exponents * np.log(ratio), 0.0)
    return np.exp(logs.sum(axis=1))


def majorant_upper(H: PolyHamiltonian, r: float, w: Weight) -> float:
    """Верхняя оценка |H|_{r,w}: неравенство треугольника по мономам и точный sup каждого монома на шаре."""
    ymap = _build_ymap(H, r, w)
    if ymap.amplitude.size == 0:
        return 0.0
    comp = np.bincount(ymap.component, weights=ymap.amplitude * _ball_sup(ymap.exponents), minlength=ymap.n)
    return float(np.linalg.norm(comp))


def _ascend(ymap: _YMap, y: np.ndarray, iterations: int) -> float:
    y = y / np.linalg.norm(y)
    value = float(np.linalg.norm(_y_values(ymap, y)))
    step = 0.5
    for _ in range(iterations):
        Y = _y_values(ymap, y)
        grad = _y_gradient(ymap, y, Y)
        gnorm = np.linalg.norm(grad)
        if gnorm == 0 or step < 1e-10:
            break
        trial = np.maximum(y + step * grad / gnorm, 0.0)
        tnorm = np.linalg.norm(trial)
        if tnorm == 0:
            step *= 0.5
            continue
        trial /= tnorm
        trial_value = float(np.linalg.norm(_y_values(ymap, trial)))
        if trial_value >= value:
            y, value = trial, trial_value
            step *= 1.2
        else:
            step *= 0.5
    return value


def majorant_norm(
    H: PolyHamiltonian,
    r: float,
    w: Weight,
    starts: int = 8,
    samples: int = 64,
    iterations: int = 200,
    seed: int = 0,
) -> NormBracket:
    """
    Вилка [lower, upper] для |H|_{r,w} = sup_{|y|≤1} |Y_H(y; r, w)|.

    lower - лучшее значение проекционного градиентного подъёма из случайных
    и базисных стартов на неотрицательной единичной сфере плюс случайные точки
    сферы (то же, что r⁻¹|X_H̲(u)|_w при |u|_w = r); upper - majorant_upper.
    """
    ymap = _build_ymap(H, r, w)
    if ymap.amplitude.size == 0:
        return NormBracket(0.0, 0.0)
    upper = majorant_upper(H, r, w)
    rng = np.random.Generator(np.random.Philox(seed))
    best = 0.0
    for point in np.abs(rng.standard_normal((samples, ymap.n))):
        point /= np.linalg.norm(point)
        best = max(best, float(np.linalg.norm(_y_values(ymap, point))))
    initial = [np.eye(ymap.n)[k] for k in range(ymap.n)]
    initial.append(np.ones(ymap.n))
    initial.extend(np.abs(rng.standard_normal((starts, ymap.n))) + 1e-3)
    for y0 in initial:
        best = max(best, _ascend(ymap, np.asarray(y0, dtype=float), iterations))
    return NormBracket(min(best, upper), upper)


# ---------------------------------------------------------------------------
# Ряд Ли
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LieSeries:
    """Слагаемые L_S^k H, k = 0, 1, ..., уже усечённые по степени."""

    terms: List[PolyHamiltonian]
    dropped_l1: float

    def total(self, start: int = 0) -> PolyHamiltonian:
        """Σ_{k≥start} L_S^k H / k!."""
        M = self.terms[0].M
        acc: Dict[Key, List[complex]] = defaultdict(list)
        for k, term in enumerate(self.terms):
            if k < start:
                continue
            inv = 1.0 / math.factorial(k)
            for key, c in term.terms.items():
                acc[key].append(c * inv)
        summed = {
            key: complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))
            for key, vals in acc.items()
        }
        return PolyHamiltonian._trusted(summed, M)


def lie_series(H: PolyHamiltonian, S: PolyHamiltonian, degree_cutoff: int, n_jobs: int = 1) -> LieSeries:
    """Итерированные скобки L_S^k H с обрезкой по полной степени ≤ degree_cutoff + 2."""
    _same_cutoff(H, S)
    d_S = scaling_degree(S)
    if S.terms and d_S == 0:
        raise DomainError("generator has scaling degree 0: the Lie series does not terminate")
    if degree_cutoff < 0:
        raise ParameterError(f"degree_cutoff must be >= 0, got {degree_cutoff}")
    max_total = degree_cutoff + 2
    first = PolyHamiltonian._trusted({k: c for k, c in H.terms.items() if key_degree(k) <= max_total}, H.M)
    terms = [first]
    dropped = 0.0
    current = first
    while current.terms and S.terms:
        raw, lost = bracket_terms(current.terms, S.terms, max_degree=max_total, n_jobs=n_jobs)
        dropped += lost / math.factorial(len(terms))
        current = PolyHamiltonian._trusted(raw, H.M)
        if not current.terms:
            break
        terms.append(current)
    return LieSeries(terms, dropped)


def lie_transform(H: PolyHamiltonian, S: PolyHamiltonian, degree_cutoff: int, n_jobs: int = 1) -> PolyHamiltonian:
    """
    e^{L_S} H = Σ_k L_S^k H / k!, усечённое до мономов степени ≤ degree_cutoff + 2.

    Ряд обрывается, так как каждая скобка поднимает масштабную степень на d(S) ≥ 1.
    """
    return lie_series(H, S, degree_cutoff, n_jobs=n_jobs).total()


def flow_delta(r: float, rho: float) -> float:
    """δ = ρ / (8e(r + ρ)) - допустимая величина |S|_{r+ρ} для потока за время 1."""
    if r <= 0 or rho <= 0:
        raise ParameterError(f"r and rho must be positive, got r={r}, rho={rho}")
    return rho / (8.0 * math.e * (r + rho))


def lie_tail_bound(H_norm: float, S_norm: float, delta: float, h: int) -> float:
    """2|H|(|S|/2δ)^h - оценка хвоста ряда Ли начиная с k = h."""
    return 2.0 * H_norm * (S_norm / (2.0 * delta)) ** h


def displacement_bound(r: float, rho: float, S_norm: float) -> float:
    """‖Φ¹_S(u) − u‖_w ≤ (r + ρ)|S|_{r+ρ,w}."""
    return (r + rho) * S_norm


def a_priori_time(R_norm: float) -> float:
    """Время 1/(8|R|), в течение которого поток D_ω + R не покидает шар удвоенного радиуса."""
    if R_norm < 0:
        raise ParameterError(f"R_norm must be non-negative, got {R_norm}")
    return math.inf if R_norm == 0 else 1.0 / (8.0 * R_norm)


def poisson_norm_factor(r: float, rho: float) -> float:
    """4(1 + r/ρ) из оценки |{F,G}|_r ≤ 4(1 + r/ρ)|F|_{r+ρ}|G|_{r+ρ}."""
    return 4.0 * (1.0 + r / rho)


# ---------------------------------------------------------------------------
# Текстовый формат
# ---------------------------------------------------------------------------

def dumps_hamiltonian(H: PolyHamiltonian) -> str:
    """Строка на моном: `re im | j:e,... | j:e,...`; первая строка - комментарий с M."""
    lines = [f"# M={H.M}"]
    for key, c in H.terms.items():
        lines.append(f"{c.real:.17g} {c.imag:.17g} | {_format_index(key[0])} | {_format_index(key[1])}")
    return "\n".join(lines) + "\n"


def _parse_index(chunk: str) -> MultiIndex:
    chunk = chunk.strip()
    if not chunk:
        return ()
    pairs = []
    for item in chunk.split(","):
        mode, _, exp = item.partition(":")
        pairs.append((int(mode), int(exp)))
    return multi_index(pairs)


def loads_hamiltonian(text: str, M: Optional[int] = None) -> PolyHamiltonian:
    """Обратная операция к dumps_hamiltonian; M берётся из заголовка или по наибольшей моде."""
    terms: Dict[Key, complex] = {}
    header_M: Optional[int] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = line[1:].strip()
            if header.startswith("M="):
                if not header[2:].strip().isdigit():
                    raise DomainError(f"line {lineno}: bad header {raw!r}")
                header_M = int(header[2:])
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise DomainError(f"line {lineno}: expected 're im | alpha | beta', got {raw!r}")
        try:
            re_part, im_part = parts[0].split()
            key = (_parse_index(parts[1]), _parse_index(parts[2]))
            value = complex(float(re_part), float(im_part))
        except ValueError as exc:
            raise DomainError(f"line {lineno}: {exc}") from exc
        terms[key] = terms.get(key, 0j) + value
    cutoff = M or header_M
    if cutoff is None:
        cutoff = max((abs(j) for key in terms for j, _ in key[0] + key[1]), default=1)
    return PolyHamiltonian.from_terms(terms, max(int(cutoff), 1))
