"""
Нормальная форма Биркгофа для гамильтониана D_ω + R₀.

Шаг N: S = L_ω⁻¹ Π_R R^(N), Z^(N) = Π_K R^(N), новый гамильтониан
H∘Φ¹_S = e^{L_S}H, перегруппированный по масштабным степеням.
После K шагов: H = D_ω + Σ_{d≤K} Z^(d) + остаток степени ≥ K+1.

Константы теории (J_K, 𝙲₁*, 𝙲₂*, 𝙲₃*) на настольных размерах астрономически велики,
поэтому все они хранятся в логарифмах.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from .errors import DimensionError, DomainError, ParameterError, StepRejectedError
from .experiments import optimal_p
from .ham_algebra import (
    PolyHamiltonian,
    ResonantPart,
    format_key,
    is_resonant_key,
    key_degree,
    lie_series,
    lie_transform,
    majorant_upper,
    project_resonant,
    split_by_degree,
)
from .small_divisors import FrequencyVector, LatticeVector, divisor
from .weighted_spaces import Weight, WeightKind

logger = logging.getLogger(__name__)

DEFAULT_BUFFER = 2
LOG_OVERFLOW = 700.0


class GateMode(str, Enum):
    theoretical = "theoretical"
    empirical = "empirical"
    none = "none"


# ---------------------------------------------------------------------------
# Расписание параметров
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamSchedule:
    """
    r_k = r₀(1 − k/2K), δ_k = (r_k − r_{k+1})/(16e r_k),
    s_k = s₀(1 + k/2K), σ_k = s₀k/2K, ζ_k = (36k)², p_k = p + Σ_{i≤k} ζ_i.
    """

    r0: float
    K: int
    M: int
    kind: WeightKind = WeightKind.subexp
    s0: float = 1.0
    p: float = 2.0
    q: float = 2.0
    gamma: float = 0.5
    r_bar: float = 1e-2
    abs_C: float = 1.0
    R0_norm: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", WeightKind(self.kind))
        if int(self.K) != self.K or self.K < 1:
            raise ParameterError(f"K must be a positive integer, got {self.K}")
        if not self.r0 > 0:
            raise ParameterError(f"r0 must be positive, got {self.r0}")
        if not (0.0 < self.gamma <= 1.0):
            raise ParameterError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.r_bar > 0:
            raise ParameterError(f"r_bar must be positive, got {self.r_bar}")
        if self.kind is WeightKind.subexp and not self.s0 > 0:
            raise ParameterError(f"s0 must be positive in the sub-exponential regime, got {self.s0}")
        # проверка p, q и M
        self.weight(0)

    def _check_k(self, k: int) -> None:
        if not 0 <= k <= self.K:
            raise ParameterError(f"step index must lie in [0, {self.K}], got {k}")

    def r(self, k: int) -> float:
        self._check_k(k)
        return self.r0 * (1.0 - k / (2.0 * self.K))

    def delta(self, k: int) -> float:
        if not 0 <= k < self.K:
            raise ParameterError(f"delta_k defined for k in [0, {self.K - 1}], got {k}")
        r_k = self.r(k)
        return (r_k - self.r(k + 1)) / (16.0 * math.e * r_k)

    def s(self, k: int) -> float:
        self._check_k(k)
        return self.s0 * (1.0 + k / (2.0 * self.K))

    def sigma(self, k: int) -> float:
        self._check_k(k)
        return self.s0 * k / (2.0 * self.K)

    @staticmethod
    def zeta(k: int) -> float:
        return float((36 * k) ** 2)

    def p_k(self, k: int) -> float:
        self._check_k(k)
        return self.p + sum(self.zeta(i) for i in range(1, k + 1))

    def weight(self, k: int) -> Weight:
        """Вес на шаге k: w(s_k, p) или w(p_k)."""
        if self.kind is WeightKind.subexp:
            return Weight(WeightKind.subexp, self.p, self.M, s=self.s(k), q=self.q)
        return Weight(WeightKind.sobolev, self.p_k(k), self.M)

    @property
    def epsilon(self) -> float:
        return self.r0 / self.r_bar

    def to_dict(self) -> Dict[str, Any]:
        ks = range(self.K + 1)
        return {
            "kind": self.kind.value,
            "r0": self.r0,
            "K": self.K,
            "M": self.M,
            "s0": self.s0,
            "p": self.p,
            "q": self.q,
            "gamma": self.gamma,
            "r_bar": self.r_bar,
            "abs_C": self.abs_C,
            "r": [self.r(k) for k in ks],
            "s": [self.s(k) for k in ks],
            "sigma": [self.sigma(k) for k in ks],
            "zeta": [self.zeta(k) for k in ks],
            "delta": [self.delta(k) for k in range(self.K)],
        }


# ---------------------------------------------------------------------------
# Состояние и отчёт
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    N: int
    r: float
    delta: float
    eps: Dict[int, float]
    eps_tail: float
    log_J_theoretical: float
    J_empirical: float
    gate_theoretical: bool
    gate_empirical: bool
    accepted: bool
    overridden: bool
    eliminated: int = 0
    kernel_terms: int = 0
    residual: float = 0.0
    truncation_loss: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "N": self.N,
            "r": self.r,
            "delta": self.delta,
            "eps": {str(d): v for d, v in self.eps.items()},
            "eps_tail": self.eps_tail,
            "log_J_theoretical": self.log_J_theoretical,
            "J_empirical": self.J_empirical,
            "gate_theoretical": self.gate_theoretical,
            "gate_empirical": self.gate_empirical,
            "accepted": self.accepted,
            "overridden": self.overridden,
            "eliminated": self.eliminated,
            "kernel_terms": self.kernel_terms,
            "residual": self.residual,
            "truncation_loss": self.truncation_loss,
        }


@dataclass(frozen=True)
class NormalFormState:
    """H = D_ω + Σ_{d<N} Z^(d) + Σ_{d=N}^{K} R^(d) + tail, N = k + 1."""

    freq: FrequencyVector
    Z: Dict[int, PolyHamiltonian]
    R: Dict[int, PolyHamiltonian]
    tail: PolyHamiltonian
    k: int
    K: int
    generators: Tuple[PolyHamiltonian, ...] = ()
    history: Tuple[StepRecord, ...] = ()

    @classmethod
    def from_hamiltonian(cls, H0: PolyHamiltonian, freq: FrequencyVector, K: int) -> "NormalFormState":
        """Раскладывает возмущение H0 (без D_ω) по масштабным степеням."""
        if H0.M != freq.M:
            raise DimensionError(f"cutoff mismatch: H0 M={H0.M}, frequencies M={freq.M}")
        if K < 1:
            raise ParameterError(f"K must be >= 1, got {K}")
        parts = split_by_degree(H0)
        if 0 in parts:
            raise DomainError("perturbation has quadratic terms (scaling degree 0)")
        R = {d: h for d, h in parts.items() if d <= K}
        tail = _sum(H0.M, [h for d, h in parts.items() if d > K])
        return cls(freq, {}, R, tail, 0, K)

    @property
    def M(self) -> int:
        return self.freq.M

    @property
    def N(self) -> int:
        return self.k + 1

    @property
    def done(self) -> bool:
        return self.k >= self.K

    def perturbation(self) -> PolyHamiltonian:
        """Σ Z^(d) + Σ R^(d) + tail (без D_ω)."""
        return _sum(self.M, list(self.Z.values()) + list(self.R.values()) + [self.tail])

    def normal_form(self) -> PolyHamiltonian:
        return _sum(self.M, list(self.Z.values()))

    def remainder(self) -> PolyHamiltonian:
        return _sum(self.M, list(self.R.values()) + [self.tail])

    def hamiltonian(self) -> PolyHamiltonian:
        """Полный гамильтониан D_ω + возмущение."""
        return diagonal_hamiltonian(self.freq) + self.perturbation()

    def check(self) -> None:
        """Инварианты: Z резонансно, Z^(d) = 0 для нечётных d, R^(d) однородно."""
        for d, z in self.Z.items():
            if d % 2 and z.terms:
                raise DomainError(f"odd kernel Z^({d}) is nonzero")
            for key in z.terms:
                if not is_resonant_key(key):
                    raise DomainError(f"Z^({d}) holds non-resonant monomial {format_key(key)}")
        for d, r in self.R.items():
            for key in r.terms:
                if key_degree(key) != d + 2:
                    raise DomainError(f"R^({d}) holds monomial {format_key(key)} of wrong degree")


@dataclass
class BnfReport:
    schedule: Dict[str, Any]
    gate: GateMode
    override: bool
    steps: List[StepRecord] = field(default_factory=list)
    log_J_K: float = 0.0
    smallness: bool = False
    log_C1: float = 0.0
    log_C2: float = 0.0
    log_C3: float = 0.0
    log_C2_r0sq: float = 0.0
    log_C3_r0K1: float = 0.0
    log_r0_star: float = 0.0
    R0_norm: float = 0.0
    completed: int = 0
    rejected: Optional[Dict[str, Any]] = None
    normal_form_norm: float = 0.0
    remainder_norm: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schedule": self.schedule,
            "gate": self.gate.value,
            "override": self.override,
            "steps": [s.to_dict() for s in self.steps],
            "log_J_K": self.log_J_K,
            "smallness": self.smallness,
            "log_C1": self.log_C1,
            "log_C2": self.log_C2,
            "log_C3": self.log_C3,
            "log_C2_r0sq": self.log_C2_r0sq,
            "log_C3_r0K1": self.log_C3_r0K1,
            "log_r0_star": self.log_r0_star,
            "R0_norm": self.R0_norm,
            "completed": self.completed,
            "rejected": self.rejected,
            "normal_form_norm": self.normal_form_norm,
            "remainder_norm": self.remainder_norm,
        }


def _sum(M: int, parts: List[PolyHamiltonian]) -> PolyHamiltonian:
    acc: Dict = {}
    for part in parts:
        for key, c in part.terms.items():
            acc[key] = acc.get(key, 0j) + c
    return PolyHamiltonian._trusted(acc, M)


def diagonal_hamiltonian(freq: FrequencyVector) -> PolyHamiltonian:
    """D_ω = Σ ω_j |u_j|²."""
    return PolyHamiltonian.diagonal(freq.values(), freq.M)


# ---------------------------------------------------------------------------
# Гомологическое уравнение
# ---------------------------------------------------------------------------

def apply_adjoint(S: PolyHamiltonian, freq: FrequencyVector) -> PolyHamiltonian:
    """L_ω S = {S, D_ω}: коэффициенты умножаются на −i ω·(α−β)."""
    if S.M > freq.M:
        raise DimensionError(f"generator cutoff {S.M} exceeds frequency cutoff {freq.M}")
    out = {}
    for key, c in S.terms.items():
        out[key] = c * (-1j) * divisor(LatticeVector.from_key(key), freq.m)
    return PolyHamiltonian._trusted(out, S.M)


def solve_homological(R: PolyHamiltonian, freq: FrequencyVector) -> PolyHamiltonian:
    """
    S = L_ω⁻¹ R: S_{α,β} = R_{α,β} / (−i ω·(α−β)).

    Raises:
        DomainError: в R есть резонансный моном (указывается в сообщении)
    """
    if R.M > freq.M:
        raise DimensionError(f"Hamiltonian cutoff {R.M} exceeds frequency cutoff {freq.M}")
    out = {}
    for key, c in R.terms.items():
        if is_resonant_key(key):
            raise DomainError(f"resonant monomial {format_key(key)} cannot be removed by the homological equation")
        value = divisor(LatticeVector.from_key(key), freq.m)
        if value == 0.0:
            raise DomainError(f"divisor of {format_key(key)} vanishes at m={freq.m}")
        out[key] = c / (-1j * value)
    return PolyHamiltonian._trusted(out, R.M)


def empirical_J(R: PolyHamiltonian, freq: FrequencyVector) -> float:
    """max 1/|ω·ℓ| по нерезонансным мономам R (0 для пустого)."""
    worst = 0.0
    for key in R.terms:
        if is_resonant_key(key):
            continue
        value = abs(divisor(LatticeVector.from_key(key), freq.m))
        worst = max(worst, math.inf if value == 0 else 1.0 / value)
    return worst


# ---------------------------------------------------------------------------
# Константы J
# ---------------------------------------------------------------------------

def _exp_or_inf(x: float) -> float:
    return math.inf if x > LOG_OVERFLOW else math.exp(x)


def j0_bound(kind: WeightKind, sigma_or_zeta: float, N: int, gamma: float, q: float = 2.0, abs_C: float = 1.0) -> float:
    """
    ln J₀: sub-exponential −4N ln γ + exp((N²𝙲/σ)^{1/(q−1)}),
    Sobolev −4N ln γ + 𝙲ζ при ζ ≥ (36N)². Переполнение даёт +inf.
    """
    kind = WeightKind(kind)
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    if not (0.0 < gamma <= 1.0):
        raise ParameterError(f"gamma must lie in (0, 1], got {gamma}")
    base = -4.0 * N * math.log(gamma)
    if kind is WeightKind.sobolev:
        if sigma_or_zeta < (36 * N) ** 2:
            raise ParameterError(f"zeta must be >= (36N)^2 = {(36 * N) ** 2}, got {sigma_or_zeta}")
        return base + abs_C * sigma_or_zeta
    if not sigma_or_zeta > 0:
        raise ParameterError(f"sigma must be positive, got {sigma_or_zeta}")
    if not (1.0 < q <= 2.0):
        raise ParameterError(f"q must lie in (1, 2], got {q}")
    inner = (N * N * abs_C / sigma_or_zeta) ** (1.0 / (q - 1.0))
    return base + _exp_or_inf(inner)


def log_J_K(schedule: ParamSchedule) -> float:
    """ln J_K: −4K ln γ + exp((K²𝙲/s₀)^{1/(q−1)}) или −4K ln γ + 𝙲 2¹² K³."""
    K = schedule.K
    base = -4.0 * K * math.log(schedule.gamma)
    if schedule.kind is WeightKind.sobolev:
        return base + schedule.abs_C * 2 ** 12 * K ** 3
    return base + _exp_or_inf((K * K * schedule.abs_C / schedule.s0) ** (1.0 / (schedule.q - 1.0)))


def _step_log_J(schedule: ParamSchedule, N: int) -> float:
    if schedule.kind is WeightKind.sobolev:
        return j0_bound(WeightKind.sobolev, ParamSchedule.zeta(N), N, schedule.gamma, abs_C=schedule.abs_C)
    sigma = schedule.s0 / (2.0 * schedule.K)
    return j0_bound(WeightKind.subexp, sigma, N, schedule.gamma, q=schedule.q, abs_C=schedule.abs_C)


# ---------------------------------------------------------------------------
# Шаг и итерация
# ---------------------------------------------------------------------------

def bnf_step(
    state: NormalFormState,
    schedule: ParamSchedule,
    gate: GateMode = GateMode.empirical,
    override: bool = False,
    buffer: int = DEFAULT_BUFFER,
    n_jobs: int = 1,
) -> NormalFormState:
    """
    Один шаг нормальной формы на степени N = k + 1.

    Новое возмущение: Z^{<N} + Π_K R^(N) + T₁ + T₂ + T₃, где
        T₁ = −Σ_{k≥2} L_S^{k−1} Π_R R^(N) / k!
        T₂ = (e^{L_S} − id)(Z^{<N} + R^(N))
        T₃ = e^{L_S}(R^{>N} + tail)
    с обрезкой по масштабной степени K + 1 + buffer.

    Raises:
        StepRejectedError: активное условие малости нарушено и override=False
    """
    if state.done:
        raise ParameterError(f"all {state.K} steps already performed")
    if schedule.K != state.K or schedule.M != state.M:
        raise ParameterError(f"schedule (K={schedule.K}, M={schedule.M}) does not match state (K={state.K}, M={state.M})")
    if buffer < 0:
        raise ParameterError(f"truncation buffer must be >= 0, got {buffer}")
    gate = GateMode(gate)
    k, N, M, K = state.k, state.N, state.M, state.K
    R_N = state.R.get(N, PolyHamiltonian.zero(M))
    kernel = project_resonant(R_N, ResonantPart.kernel)
    rng = project_resonant(R_N, ResonantPart.range)

    r_k = schedule.r(k)
    w_k = schedule.weight(k)
    delta_k = schedule.delta(k)
    eps = {d: majorant_upper(h, r_k, w_k) for d, h in sorted(state.R.items()) if d >= N}
    eps_tail = majorant_upper(state.tail, r_k, w_k)
    total_eps = math.fsum(eps.values()) + eps_tail
    log_J = _step_log_J(schedule, N)
    J_emp = empirical_J(rng, state.freq)
    gate_theory = total_eps == 0 or log_J + math.log(total_eps) <= math.log(delta_k)
    gate_emp = J_emp * total_eps <= delta_k
    passed = {GateMode.theoretical: gate_theory, GateMode.empirical: gate_emp, GateMode.none: True}[gate]
    record = StepRecord(
        step=k,
        N=N,
        r=r_k,
        delta=delta_k,
        eps=eps,
        eps_tail=eps_tail,
        log_J_theoretical=log_J,
        J_empirical=J_emp,
        gate_theoretical=gate_theory,
        gate_empirical=gate_emp,
        accepted=passed or override,
        overridden=not passed and override,
    )
    if not passed and not override:
        logger.warning("[BNF] step %d rejected by %s gate: J*eps=%.3e > delta=%.3e", k, gate.value, J_emp * total_eps, delta_k)
        raise StepRejectedError(
            f"smallness condition ({gate.value} gate) fails at step {k}",
            step=k,
            reason=f"{gate.value} gate",
            state=replace(state, history=state.history + (record,)),
        )
    if not passed:
        logger.warning("[BNF] step %d: %s gate fails, proceeding on override", k, gate.value)

    S = solve_homological(rng, state.freq)
    cutoff = K + 1 + buffer
    Z_low = _sum(M, [z for d, z in state.Z.items() if d < N])
    R_high = _sum(M, [h for d, h in state.R.items() if d > N] + [state.tail])

    series_rng = lie_series(rng, S, cutoff, n_jobs=n_jobs)
    series_low = lie_series(Z_low + R_N, S, cutoff, n_jobs=n_jobs)
    series_high = lie_series(R_high, S, cutoff, n_jobs=n_jobs)

    t1_parts = []
    for j, term in enumerate(series_rng.terms[1:], start=2):
        t1_parts.append(term.scale(-1.0 / math.factorial(j)))
    T1 = _sum(M, t1_parts)
    T2 = series_low.total(start=1)
    T3 = series_high.total()
    new_part = T1 + T2 + T3

    groups = split_by_degree(new_part)
    for d in groups:
        if d <= N:
            raise DomainError(f"normalization step produced terms of scaling degree {d} <= {N}")
    new_R = {d: h for d, h in groups.items() if d <= K}
    new_tail = _sum(M, [h for d, h in groups.items() if d > K])
    new_Z = dict(state.Z)
    if kernel.terms:
        new_Z[N] = kernel
    record.eliminated = len(rng.terms)
    record.kernel_terms = len(kernel.terms)
    record.truncation_loss = series_rng.dropped_l1 + series_low.dropped_l1 + series_high.dropped_l1
    scale = max(R_N.max_abs_coeff(), 1e-300)
    record.residual = project_resonant(new_R.get(N, PolyHamiltonian.zero(M)), ResonantPart.range).max_abs_coeff() / scale
    logger.info(
        "[BNF] step %d (N=%d): eliminated %d, kernel %d, generator %d terms, remainder %d terms",
        k, N, record.eliminated, record.kernel_terms, len(S.terms), sum(len(h) for h in new_R.values()) + len(new_tail),
    )
    return NormalFormState(
        freq=state.freq,
        Z=new_Z,
        R=new_R,
        tail=new_tail,
        k=k + 1,
        K=K,
        generators=state.generators + (S,),
        history=state.history + (record,),
    )


def _fill_constants(report: BnfReport, schedule: ParamSchedule, R0_norm: float) -> None:
    K = schedule.K
    logJ = log_J_K(schedule)
    report.log_J_K = logJ
    report.R0_norm = R0_norm
    if R0_norm <= 0:
        report.smallness = True
        report.log_C1 = report.log_C2 = report.log_C3 = -math.inf
        report.log_C2_r0sq = report.log_C3_r0K1 = -math.inf
        report.log_r0_star = math.log(schedule.r_bar)
        return
    log_R0 = math.log(R0_norm)
    log_rbar = math.log(schedule.r_bar)
    log_eps = math.log(schedule.epsilon)
    report.smallness = log_R0 + (K + 3) * math.log(4.0) + logJ + log_eps <= math.log(schedule.delta(0))
    report.log_C1 = log_R0 - log_rbar + logJ
    report.log_C2 = math.log(16.0 * math.e * K) + log_R0 + (K + 1) * math.log(4.0) - 2.0 * log_rbar + logJ
    report.log_C3 = log_R0 + K * math.log(16.0 * math.e * K * 4.0 ** (K + 2)) - (K + 1) * log_rbar + K * logJ
    report.log_C2_r0sq = report.log_C2 + 2.0 * math.log(schedule.r0)
    report.log_C3_r0K1 = report.log_C3 + (K + 1) * math.log(schedule.r0)
    inv = (K + 3) * math.log(4.0) + log_R0 - log_rbar + logJ + math.log(32.0 * math.e * K)
    report.log_r0_star = min(log_rbar, -inv)


def bnf_iterate(
    H0: PolyHamiltonian,
    freq: FrequencyVector,
    schedule: ParamSchedule,
    gate: GateMode = GateMode.empirical,
    override: bool = False,
    buffer: int = DEFAULT_BUFFER,
    n_jobs: int = 1,
) -> Tuple[NormalFormState, BnfReport, List[PolyHamiltonian]]:
    """
    K шагов нормальной формы. При отклонении шага возвращается частичный
    результат: состояние и отчёт до последнего принятого шага.
    """
    state = NormalFormState.from_hamiltonian(H0, freq, schedule.K)
    report = BnfReport(schedule=schedule.to_dict(), gate=GateMode(gate), override=override)
    R0_norm = schedule.R0_norm
    if R0_norm is None:
        R0_norm = majorant_upper(H0, schedule.r_bar, schedule.weight(0))
    _fill_constants(report, schedule, R0_norm)
    logger.info(
        "[BNF] start: K=%d M=%d m=%.4g r0=%.3g gate=%s, ln J_K=%.4g, smallness=%s",
        schedule.K, freq.M, freq.m, schedule.r0, report.gate.value, report.log_J_K, report.smallness,
    )
    while not state.done:
        try:
            state = bnf_step(state, schedule, gate=gate, override=override, buffer=buffer, n_jobs=n_jobs)
        except StepRejectedError as exc:
            report.rejected = {"step": exc.step, "reason": exc.reason, "message": str(exc)}
            if exc.state is not None:
                report.steps = list(exc.state.history)
            break
        report.steps = list(state.history)
    report.completed = len(state.generators)
    final_w = schedule.weight(state.k)
    final_r = schedule.r(state.k)
    report.normal_form_norm = majorant_upper(state.normal_form(), final_r, final_w)
    report.remainder_norm = majorant_upper(state.remainder(), final_r, final_w)
    logger.info("[BNF] done: %d/%d steps, |Z|=%.3e |R|=%.3e", report.completed, schedule.K, report.normal_form_norm, report.remainder_norm)
    return state, report, list(state.generators)


def transformed_hamiltonian(H: PolyHamiltonian, generators: List[PolyHamiltonian], degree_cutoff: int) -> PolyHamiltonian:
    """H∘Φ¹_{S₁}∘…∘Φ¹_{S_k} = e^{L_{S_k}}⋯e^{L_{S_1}} H с обрезкой по степени."""
    out = H
    for S in generators:
        out = lie_transform(out, S, degree_cutoff)
    return out


# ---------------------------------------------------------------------------
# Предсказанные времена устойчивости
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoremParams:
    R: float = 1.0
    F_R: float = 1.0
    gamma: float = 0.5
    c: float = 1.0
    p: float = 2.0
    s: float = 1.0
    q: float = 2.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("R", "F_R", "c", "s", "C1", "C2", "C3"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not (1.0 < self.q <= 2.0):
            raise ParameterError(f"q must lie in (1, 2], got {self.q}")
        if not self.p > 1.0:
            raise ParameterError(f"p must be > 1, got {self.p}")

    @property
    def log_delta_S(self) -> float:
        """δ_S = R/(2⁵|F|_R)."""
        return math.log(self.R) - 5.0 * math.log(2.0) - math.log(self.F_R)

    @property
    def delta_S(self) -> float:
        return math.exp(self.log_delta_S)

    @property
    def log_sobolev_threshold(self) -> float:
        """ln(δ_S γ^{cp})."""
        return self.log_delta_S + self.c * self.p * math.log(self.gamma)

    @property
    def corollary_exponent(self) -> float:
        """b = 24c²(2⁶·36²)^{5/3}."""
        return 24.0 * self.c ** 2 * (2.0 ** 6 * 36.0 ** 2) ** (5.0 / 3.0)

    @property
    def log_corollary_threshold(self) -> float:
        return self.log_delta_S + self.corollary_exponent * math.log(self.gamma)

    @property
    def log_delta_sE(self) -> float:
        """ln min{exp exp(−(c/(γ⁴s))^{1/(q−1)})/(C₁|F|_R), 1/(C₂|F|_R)}."""
        inner = (self.c / (self.gamma ** 4 * self.s)) ** (1.0 / (self.q - 1.0))
        first = math.exp(-inner) - math.log(self.C1 * self.F_R)
        second = -math.log(self.C2 * self.F_R)
        return min(first, second)


@dataclass
class PredictedTimes:
    delta: float
    log_T_subexp: Optional[float]
    log_T_sobolev: Optional[float]
    log_T_coro: Optional[float]
    p_of_delta: Optional[float]
    thresholds: Dict[str, float]
    threshold_violations: Dict[str, str]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta": self.delta,
            "log_T_subexp": self.log_T_subexp,
            "log_T_sobolev": self.log_T_sobolev,
            "log_T_coro": self.log_T_coro,
            "p_of_delta": self.p_of_delta,
            "log_thresholds": self.thresholds,
            "threshold_violations": self.threshold_violations,
        }


def predicted_times(delta: float, params: TheoremParams) -> PredictedTimes:
    """
    Нижние оценки времени устойчивости (в логарифмах).

    sub-exponential: ln T = ln C₃ + L + ½L(γ⁴s c⁻¹ ln L)^{(q−1)/2}, L = ln(δ_sE/δ),
        ln L заменяется нулём при L ≤ 1;
    Sobolev: ln T = ln R + c p² ln γ − ln(2|F|_R δ) + (1/c)(p−1)^{1/3} ln(δ_S/δ);
    следствие: ln T = ln(R/(2|F|_R δ)) + c(ln 1/γ)^{−1/5}/(24c²)^{6/5} · (ln δ_S/δ)^{6/5}.

    Выше порога вместо числа возвращается None и отметка в threshold_violations.
    """
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    P = params
    log_delta = math.log(delta)
    log_gamma = math.log(P.gamma)
    violations: Dict[str, str] = {}
    thresholds = {
        "subexp": P.log_delta_sE,
        "sobolev": P.log_sobolev_threshold,
        "corollary": P.log_corollary_threshold,
        "delta_S": P.log_delta_S,
    }
    base = math.log(P.R) - math.log(2.0 * P.F_R) - log_delta

    T_sub: Optional[float] = None
    L = P.log_delta_sE - log_delta
    if L < 0:
        violations["subexp"] = "delta above delta_sE"
    else:
        lnL = math.log(L) if L > 1.0 else 0.0
        factor = (P.gamma ** 4 * P.s / P.c * lnL) ** ((P.q - 1.0) / 2.0)
        T_sub = math.log(P.C3) + L + 0.5 * L * factor

    T_sob: Optional[float] = None
    if log_delta > thresholds["sobolev"]:
        violations["sobolev"] = "delta above delta_S * gamma^(c p)"
    else:
        T_sob = base + P.c * P.p ** 2 * log_gamma + (P.p - 1.0) ** (1.0 / 3.0) / P.c * (P.log_delta_S - log_delta)

    T_coro: Optional[float] = None
    if log_delta > thresholds["corollary"]:
        violations["corollary"] = "delta above delta_S * gamma^b"
    else:
        ell = P.log_delta_S - log_delta
        T_coro = base + P.c * (-log_gamma) ** (-0.2) / (24.0 * P.c ** 2) ** 1.2 * ell ** 1.2

    p_delta: Optional[float] = None
    if log_delta >= P.log_delta_S:
        violations["p_of_delta"] = "delta above delta_S"
    else:
        p_delta = optimal_p(delta, P.gamma, P.delta_S, P.c)
    return PredictedTimes(delta, T_sub, T_sob, T_coro, p_delta, thresholds, violations)
