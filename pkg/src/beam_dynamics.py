"""
Уравнение балки ∂ₜₜψ + ∂ₓₓₓₓψ + mψ + f(ψ) = 0 на окружности в комплексных координатах.

u_j = (ω_j^{1/2} ψ_j + i ω_j^{−1/2} v_j)/√2,  v = ∂ₜψ,
u̇_j = −iω_j u_j − (i/√2) ω_j^{−1/2} (f(φ))_j,  φ_k = ω_k^{−1/2}(u_k + ū_{−k})/√2.

Нелинейное поле при интегрировании по времени считается свёрточными степенями φ,
разложение в мономы (build_R0) используется только для алгебры нормальной формы.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations_with_replacement
from math import factorial
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from .errors import BlowUpError, DimensionError, DomainError, FlowDomainError, ParameterError
from .ham_algebra import PolyHamiltonian
from .small_divisors import FrequencyVector
from .weighted_spaces import SeqState, Weight, WeightKind, algebra_constant, seq_norm

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BEAM"
TRAJECTORY_COLUMNS = ["t", "norm_w", "energy", "momentum"]
REALITY_TOL = 1e-12
KICK_TOL = 1e-15
KICK_MAX_ITER = 50


class Scheme(str, Enum):
    strang = "strang"
    rk4 = "rk4"


# ---------------------------------------------------------------------------
# Нелинейность
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearitySpec:
    """F(y) = Σ_{d≥3} F^(d) y^d, f = F′; R - радиус аналитичности."""

    coefficients: Tuple[Tuple[int, float], ...] = ((3, 1.0),)
    R: float = 1.0

    def __post_init__(self) -> None:
        acc: Dict[int, float] = {}
        for d, value in self.coefficients:
            if int(d) != d or d < 3:
                raise ParameterError(f"Taylor degrees must be integers >= 3, got {d}")
            value = float(value)
            if not math.isfinite(value):
                raise ParameterError(f"Taylor coefficient F^({d}) must be finite, got {value}")
            acc[int(d)] = acc.get(int(d), 0.0) + value
        if not self.R > 0:
            raise ParameterError(f"radius R must be positive, got {self.R}")
        object.__setattr__(self, "coefficients", tuple(sorted((d, v) for d, v in acc.items() if v)))

    @classmethod
    def cubic(cls, coefficient: float = 1.0, R: float = 1.0) -> "NonlinearitySpec":
        return cls(((3, coefficient),), R)

    @classmethod
    def zero(cls) -> "NonlinearitySpec":
        return cls((), 1.0)

    @classmethod
    def parse(cls, text: str, R: float = 1.0) -> "NonlinearitySpec":
        """Строка вида '3:1.0, 4:-0.5'."""
        pairs = []
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            degree, sep, value = item.partition(":")
            if not sep:
                raise ParameterError(f"expected 'degree:coefficient', got {item!r}")
            pairs.append((int(degree), float(value)))
        return cls(tuple(pairs), R)

    def as_dict(self) -> Dict[int, float]:
        return dict(self.coefficients)

    @property
    def D_max(self) -> int:
        return max((d for d, _ in self.coefficients), default=0)

    @property
    def F_R(self) -> float:
        """|F|_R = Σ |F^(d)| R^d."""
        return math.fsum(abs(v) * self.R ** d for d, v in self.coefficients)

    def is_zero(self) -> bool:
        return not self.coefficients

    def encode(self) -> str:
        return ", ".join(f"{d}:{v:.17g}" for d, v in self.coefficients)


# ---------------------------------------------------------------------------
# Состояние
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BeamState:
    u: np.ndarray
    m: float
    t: float = 0.0

    def __post_init__(self) -> None:
        arr = np.array(self.u, dtype=complex)
        if arr.ndim != 1 or arr.size % 2 == 0:
            raise DimensionError(f"expected a vector of odd length 2M+1, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "u", arr)
        FrequencyVector(self.m, max(1, (arr.size - 1) // 2))
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "t", float(self.t))

    @property
    def M(self) -> int:
        return (self.u.size - 1) // 2

    @property
    def freq(self) -> FrequencyVector:
        return FrequencyVector(self.m, self.M)

    def as_seq(self) -> SeqState:
        return SeqState(self.u, self.M)

    def evolved(self, u: np.ndarray, t: float) -> "BeamState":
        return BeamState(u, self.m, t)

    @classmethod
    def from_seq(cls, u: SeqState, m: float, t: float = 0.0) -> "BeamState":
        return cls(u.coeffs, m, t)


def _check_real(seq: SeqState, name: str) -> None:
    c = np.asarray(seq.coeffs)
    defect = float(np.max(np.abs(c - np.conj(c[::-1])))) if c.size else 0.0
    if defect > REALITY_TOL * max(1.0, float(np.max(np.abs(c)))):
        raise DomainError(f"{name} is not the Fourier series of a real function (defect {defect:.3e})")


def complexify(psi: SeqState, v: SeqState, m: float) -> BeamState:
    """u = (ω^{1/2}ψ + iω^{−1/2}v)/√2; ψ, v - коэффициенты Фурье вещественных функций."""
    if psi.M != v.M:
        raise DimensionError(f"cutoff mismatch: psi M={psi.M}, v M={v.M}")
    _check_real(psi, "psi")
    _check_real(v, "v")
    omega = FrequencyVector(m, psi.M).values()
    u = (np.sqrt(omega) * psi.coeffs + 1j * v.coeffs / np.sqrt(omega)) / math.sqrt(2.0)
    return BeamState(u, m)


def realify(state: BeamState) -> Tuple[SeqState, SeqState]:
    """Обратное к complexify: (ψ, v)."""
    omega = state.freq.values()
    u = state.u
    partner = np.conj(u[::-1])
    psi = (u + partner) / (math.sqrt(2.0) * np.sqrt(omega))
    v = (u - partner) * np.sqrt(omega) / (math.sqrt(2.0) * 1j)
    return SeqState(psi, state.M), SeqState(v, state.M)


def random_state(
    M: int,
    m: float,
    delta: float,
    w: Weight,
    active_modes: int = 1,
    seed: int = 0,
) -> BeamState:
    """
    Случайные вещественные данные (ψ, v) на модах |j| ≤ active_modes,
    отмасштабированные так, что |u|_w = δ.
    """
    if active_modes < 0 or active_modes > M:
        raise ParameterError(f"active_modes must lie in [0, {M}], got {active_modes}")
    rng = np.random.Generator(np.random.Philox(seed))
    n = 2 * M + 1
    psi = np.zeros(n, dtype=complex)
    vel = np.zeros(n, dtype=complex)
    for j in range(0, active_modes + 1):
        a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        if j == 0:
            a, b = complex(a.real), complex(b.real)
        psi[M + j], psi[M - j] = a, np.conj(a)
        vel[M + j], vel[M - j] = b, np.conj(b)
    state = complexify(SeqState(psi, M), SeqState(vel, M), m)
    norm = seq_norm(state.as_seq(), w)
    if norm == 0:
        raise DomainError("random initial data vanished")
    return BeamState(state.u * (delta / norm), m)


# ---------------------------------------------------------------------------
# Гамильтониан R₀ и векторное поле
# ---------------------------------------------------------------------------

def build_R0(spec: NonlinearitySpec, m: float, M: int, degree_cutoff: Optional[int] = None) -> PolyHamiltonian:
    """
    R₀(u) = ∫ F(ω^{−1/2}(u+ū)/√2) dx как полином по (u, ū).

    Коэффициент монома u^α ū^β степени d:
        F^(d)/2^{d/2} · d!/(∏α!∏β!) · ∏_j ω_j^{−(α_j+β_j)/2}.

    Args:
        degree_cutoff: наибольшая степень; значения выше D_max обрезаются до D_max

    Raises:
        DomainError: degree_cutoff < 3
    """
    freq = FrequencyVector(m, M)
    if spec.is_zero():
        return PolyHamiltonian.zero(M)
    cutoff = spec.D_max if degree_cutoff is None else int(degree_cutoff)
    if cutoff < 3:
        raise DomainError(f"degree cutoff must be >= 3, got {cutoff}")
    cutoff = min(cutoff, spec.D_max)
    modes = list(range(-M, M + 1))
    n = len(modes)
    log_omega = 0.5 * np.log(freq.values())
    terms: Dict = {}
    for d, F_d in spec.coefficients:
        if d > cutoff:
            continue
        scale = F_d / 2.0 ** (d / 2.0) * factorial(d)
        for combo in combinations_with_replacement(range(2 * n), d):
            momentum = sum(modes[c] if c < n else -modes[c - n] for c in combo)
            if momentum:
                continue
            alpha: Dict[int, int] = {}
            beta: Dict[int, int] = {}
            for c in combo:
                if c < n:
                    alpha[modes[c]] = alpha.get(modes[c], 0) + 1
                else:
                    beta[modes[c - n]] = beta.get(modes[c - n], 0) + 1
            denom = 1
            for e in list(alpha.values()) + list(beta.values()):
                denom *= factorial(e)
            log_w = sum(e * log_omega[j + M] for j, e in alpha.items()) + sum(e * log_omega[j + M] for j, e in beta.items())
            key = (tuple(sorted(alpha.items())), tuple(sorted(beta.items())))
            terms[key] = complex(scale / denom * math.exp(-log_w))
    logger.info("[R0] built %d monomials, degrees 3..%d, M=%d, m=%.4g", len(terms), cutoff, M, m)
    return PolyHamiltonian.from_terms(terms, M)


def _conv_power(phi: np.ndarray, power: int) -> np.ndarray:
    out = phi
    for _ in range(power - 1):
        out = np.convolve(out, phi)
    return out


def _window(full: np.ndarray, power: int, M: int) -> np.ndarray:
    center = power * M
    return full[center - M : center + M + 1]


def _phi(u: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return (u + np.conj(u[::-1])) / (math.sqrt(2.0) * np.sqrt(omega))


def nonlinear_field(u: np.ndarray, spec: NonlinearitySpec, omega: np.ndarray) -> np.ndarray:
    """−(i/√2) ω_j^{−1/2} (f(φ))_j, f(y) = Σ d F^(d) y^{d−1}."""
    M = (u.size - 1) // 2
    out = np.zeros_like(u, dtype=complex)
    if spec.is_zero():
        return out
    phi = _phi(u, omega)
    power = phi
    current = 1
    for d, F_d in spec.coefficients:
        while current < d - 1:
            power = np.convolve(power, phi)
            current += 1
        out += d * F_d * _window(power, d - 1, M)
    return -1j / math.sqrt(2.0) * out / np.sqrt(omega)


def r0_vector_field(state: BeamState, spec: NonlinearitySpec, include_linear: bool = False) -> np.ndarray:
    """Поле X_{R₀} (и при include_linear=True полное поле −iωu + X_{R₀})."""
    omega = state.freq.values()
    out = nonlinear_field(state.u, spec, omega)
    if include_linear:
        out = out - 1j * omega * state.u
    return out


def energy(state: BeamState, spec: NonlinearitySpec) -> float:
    """H = Σ ω_j|u_j|² + Σ_d F^(d) [φ^d]_0."""
    omega = state.freq.values()
    total = float(np.sum(omega * np.abs(state.u) ** 2))
    if spec.is_zero():
        return total
    phi = _phi(state.u, omega)
    for d, F_d in spec.coefficients:
        full = _conv_power(phi, d)
        total += F_d * float(full[d * state.M].real)
    return total


def momentum(state: Union[BeamState, SeqState]) -> float:
    """Σ j |u_j|²."""
    u = state.u if isinstance(state, BeamState) else state.coeffs
    M = (u.size - 1) // 2
    return float(np.sum(np.arange(-M, M + 1) * np.abs(u) ** 2))


# ---------------------------------------------------------------------------
# Интеграторы
# ---------------------------------------------------------------------------

FieldFn = Callable[[np.ndarray], np.ndarray]


def _implicit_midpoint_kick(u: np.ndarray, dt: float, field_fn: FieldFn) -> np.ndarray:
    # предиктор - явная средняя точка, затем итерации до неявного правила средней точки
    mid = u + 0.5 * dt * field_fn(u)
    new = u + dt * field_fn(mid)
    scale = max(float(np.max(np.abs(u))), 1e-300)
    for _ in range(KICK_MAX_ITER):
        candidate = u + dt * field_fn(0.5 * (u + new))
        change = float(np.max(np.abs(candidate - new)))
        new = candidate
        if change <= KICK_TOL * scale:
            break
    return new


def _strang(u: np.ndarray, omega: np.ndarray, dt: float, field_fn: FieldFn) -> np.ndarray:
    half = np.exp(-0.5j * omega * dt)
    u = half * u
    u = _implicit_midpoint_kick(u, dt, field_fn)
    return half * u


def _rk4_interaction(u: np.ndarray, omega: np.ndarray, dt: float, field_fn: FieldFn) -> np.ndarray:
    def g(tau: float, v: np.ndarray) -> np.ndarray:
        return np.exp(1j * omega * tau) * field_fn(np.exp(-1j * omega * tau) * v)

    k1 = g(0.0, u)
    k2 = g(0.5 * dt, u + 0.5 * dt * k1)
    k3 = g(0.5 * dt, u + 0.5 * dt * k2)
    k4 = g(dt, u + dt * k3)
    v = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return np.exp(-1j * omega * dt) * v


def _advance(u: np.ndarray, omega: np.ndarray, dt: float, field_fn: FieldFn, scheme: Scheme, t: float) -> np.ndarray:
    if scheme is Scheme.strang:
        new = _strang(u, omega, dt, field_fn)
    else:
        new = _rk4_interaction(u, omega, dt, field_fn)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite state after step from t={t:.6g}", last_time=t)
    return new


def step(state: BeamState, spec: NonlinearitySpec, dt: float, scheme: Scheme = Scheme.strang) -> BeamState:
    """
    Один шаг по времени.

    strang: точный поворот e^{−iω dt/2}, толчок по X_{R₀} правилом средней точки, снова поворот.
    rk4: классический RK4 для поля в представлении взаимодействия v = e^{iωt}u.
    """
    if dt == 0 or not math.isfinite(dt):
        raise ParameterError(f"dt must be a nonzero finite number, got {dt}")
    omega = state.freq.values()
    new = _advance(np.asarray(state.u), omega, dt, lambda x: nonlinear_field(x, spec, omega), Scheme(scheme), state.t)
    return state.evolved(new, state.t + dt)


def integrate(state: BeamState, spec: NonlinearitySpec, dt: float, n_steps: int, scheme: Scheme = Scheme.strang) -> BeamState:
    omega = state.freq.values()
    scheme = Scheme(scheme)
    field_fn = lambda x: nonlinear_field(x, spec, omega)  # noqa: E731
    u = np.asarray(state.u)
    t = state.t
    for _ in range(n_steps):
        u = _advance(u, omega, dt, field_fn, scheme, t)
        t += dt
    return state.evolved(u, t)


@dataclass
class StabilityResult:
    T_escape: float
    censored: bool
    delta: float
    trajectory: pd.DataFrame = field(repr=False)

    def to_dict(self) -> Dict:
        return {"T_escape": self.T_escape, "censored": self.censored, "delta": self.delta, "samples": len(self.trajectory)}


def _escape_loop(
    u: np.ndarray,
    omega: np.ndarray,
    field_fn: FieldFn,
    delta: float,
    w: Weight,
    horizon: float,
    dt: float,
    scheme: Scheme,
    sample_every: int,
    energy_fn: Callable[[np.ndarray], float],
) -> StabilityResult:
    if not dt > 0 or not horizon > 0:
        raise ParameterError(f"dt and horizon must be positive, got dt={dt}, horizon={horizon}")
    if sample_every < 1:
        raise ParameterError(f"sample_every must be >= 1, got {sample_every}")
    weights = w.values()
    M = w.M

    def sample(vec: np.ndarray, t: float) -> Dict[str, float]:
        norm = float(np.sqrt(np.sum(weights ** 2 * np.abs(vec) ** 2)))
        return {"t": t, "norm_w": norm, "energy": energy_fn(vec), "momentum": momentum(SeqState(vec, M))}

    n_steps = int(math.ceil(horizon / dt - 1e-9))
    rows = [sample(u, 0.0)]
    t = 0.0
    for index in range(1, n_steps + 1):
        u = _advance(u, omega, dt, field_fn, scheme, t)
        t = index * dt
        if index % sample_every == 0 or index == n_steps:
            row = sample(u, t)
            rows.append(row)
            if row["norm_w"] > 2.0 * delta:
                logger.info("[FLOW] escape at t=%.6g (delta=%.3g)", t, delta)
                return StabilityResult(t, False, delta, pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS))
    logger.info("[FLOW] censored at horizon %.6g (delta=%.3g)", horizon, delta)
    return StabilityResult(float(horizon), True, delta, pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS))


def stability_time(
    u0: BeamState,
    spec: NonlinearitySpec,
    delta: float,
    w: Weight,
    horizon: float,
    dt: float,
    scheme: Scheme = Scheme.strang,
    sample_every: int = 10,
) -> StabilityResult:
    """
    Время выхода из шара радиуса 2δ: первое время отсчёта с |u(t)|_w > 2δ,
    иначе цензурировано горизонтом. Норма снимается каждые sample_every шагов.
    """
    if w.M != u0.M:
        raise DimensionError(f"cutoff mismatch: weight M={w.M}, state M={u0.M}")
    start = seq_norm(u0.as_seq(), w)
    if start > delta * (1.0 + 1e-12):
        raise DomainError(f"initial norm {start:.6g} exceeds delta={delta:.6g}")
    omega = u0.freq.values()
    return _escape_loop(
        np.asarray(u0.u),
        omega,
        lambda x: nonlinear_field(x, spec, omega),
        delta,
        w,
        horizon,
        dt,
        Scheme(scheme),
        sample_every,
        lambda x: energy(BeamState(x, u0.m), spec),
    )


def simulate_polynomial(
    H: PolyHamiltonian,
    freq: FrequencyVector,
    u0: SeqState,
    delta: float,
    w: Weight,
    horizon: float,
    dt: float,
    sample_every: int = 10,
) -> StabilityResult:
    """
    Время выхода для системы D_ω + H с полиномиальным H (например, нормализованной):
    точный поворот по D_ω и толчок неявным правилом средней точки по X_H, как в integrate.
    """
    if H.M != freq.M or u0.M != freq.M:
        raise DimensionError(f"cutoff mismatch: H M={H.M}, freq M={freq.M}, state M={u0.M}")
    omega = freq.values()
    return _escape_loop(
        np.asarray(u0.coeffs),
        omega,
        lambda x: H.field_array(x),
        delta,
        w,
        horizon,
        dt,
        Scheme.strang,
        sample_every,
        lambda x: float(np.sum(omega * np.abs(x) ** 2)) + H.evaluate(x),
    )


def apply_generator_flow(
    u: Union[BeamState, SeqState],
    S: PolyHamiltonian,
    direction: int = 1,
    radius: Optional[float] = None,
    rtol: float = 1e-12,
    atol: float = 1e-15,
) -> Union[BeamState, SeqState]:
    """
    Поток за время 1 поля ±X_S (DOP853 на вещественных координатах [Re u, Im u]).

    Raises:
        FlowDomainError: |u| вне радиуса области или интегратор не сошёлся
    """
    if direction not in (1, -1):
        raise ParameterError(f"direction must be +1 or -1, got {direction}")
    vec = np.asarray(u.u if isinstance(u, BeamState) else u.coeffs, dtype=complex)
    if vec.size != 2 * S.M + 1:
        raise DimensionError(f"cutoff mismatch: state length {vec.size}, generator M={S.M}")
    if radius is not None and float(np.linalg.norm(vec)) > radius:
        raise FlowDomainError(f"state norm {np.linalg.norm(vec):.6g} outside flow domain radius {radius:.6g}")
    if not S.terms:
        return u
    n = vec.size

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        z = y[:n] + 1j * y[n:]
        dz = direction * S.field_array(z)
        return np.concatenate([dz.real, dz.imag])

    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate([vec.real, vec.imag]), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise FlowDomainError(f"generator flow failed: {sol.message}")
    end = sol.y[:n, -1] + 1j * sol.y[n:, -1]
    if not np.all(np.isfinite(end)):
        raise FlowDomainError("generator flow left the domain (non-finite state)")
    if isinstance(u, BeamState):
        return u.evolved(end, u.t)
    return SeqState(end, u.M)


def r0_norm_bound(kind: WeightKind, p: float, R: float, F_R: float, r_bar: float) -> float:
    """
    Оценка нормы R₀ на шаре радиуса r̄:
    sub-exponential: (8 C_alg(p)/R³)|F|_R r̄ при 2C_alg(p) r̄ < R;
    Sobolev: (C_alg,M(p)/R)|F|_R r̄.
    """
    kind = WeightKind(kind)
    C = algebra_constant(kind, p)
    if kind is WeightKind.subexp:
        if not 2.0 * C * r_bar < R:
            raise ParameterError(f"need 2*C_alg*r_bar < R, got {2.0 * C * r_bar:.6g} >= {R}")
        return 8.0 * C / R ** 3 * F_R * r_bar
    return C / R * F_R * r_bar


# ---------------------------------------------------------------------------
# Контрольные точки
# ---------------------------------------------------------------------------

def save_checkpoint(state: BeamState, path: Union[str, Path]) -> Path:
    """BEAM | <i8 M | <f8 m | <f8 t | 2(2M+1) <f8 (Re, Im поочерёдно); запись через временный файл."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.empty(2 * state.u.size, dtype="<f8")
    data[0::2] = state.u.real
    data[1::2] = state.u.imag
    payload = CHECKPOINT_MAGIC + struct.pack("<qdd", state.M, state.m, state.t) + data.tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: Union[str, Path]) -> BeamState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    raw = path.read_bytes()
    header = len(CHECKPOINT_MAGIC) + struct.calcsize("<qdd")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DomainError(f"{path} is not a beam checkpoint")
    M, m, t = struct.unpack("<qdd", raw[len(CHECKPOINT_MAGIC) : header])
    data = np.frombuffer(raw[header:], dtype="<f8")
    if data.size != 2 * (2 * M + 1):
        raise DomainError(f"{path}: expected {2 * (2 * M + 1)} floats, found {data.size}")
    return BeamState(data[0::2] + 1j * data[1::2], m, t)
