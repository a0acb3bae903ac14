import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.beam_dynamics import NonlinearitySpec, apply_generator_flow, build_R0, random_state, simulate_polynomial
from src.bnf_engine import (
    GateMode,
    NormalFormState,
    ParamSchedule,
    TheoremParams,
    apply_adjoint,
    bnf_iterate,
    bnf_step,
    diagonal_hamiltonian,
    empirical_J,
    j0_bound,
    log_J_K,
    predicted_times,
    solve_homological,
    transformed_hamiltonian,
)
from src.errors import DimensionError, DomainError, ParameterError, StepRejectedError
from src.experiments import fit_exponent, optimal_p
from src.ham_algebra import (
    PolyHamiltonian,
    ResonantPart,
    is_resonant_key,
    lie_transform,
    majorant_upper,
    multi_index,
    poisson_bracket,
    project_degree,
    project_resonant,
    split_by_degree,
)
from src.small_divisors import FrequencyVector
from src.weighted_spaces import SeqState, Weight, WeightKind

M = 2
MASS = 1.37


@pytest.fixture(scope="module")
def freq():
    return FrequencyVector(MASS, M)


@pytest.fixture(scope="module")
def cubic_R0():
    return build_R0(NonlinearitySpec.cubic(), MASS, M)


def _max_diff(a, b):
    return (a - b).max_abs_coeff()


def test_schedule_values():
    schedule = ParamSchedule(r0=1.0, K=2, M=M)
    assert [schedule.r(k) for k in range(3)] == [1.0, 0.75, 0.5]
    assert_allclose(schedule.delta(0), 0.25 / (16 * math.e), rtol=1e-14)
    assert_allclose(schedule.delta(1), 0.25 / (16 * math.e * 0.75), rtol=1e-14)
    assert [schedule.s(k) for k in range(3)] == [1.0, 1.25, 1.5]
    assert [schedule.sigma(k) for k in range(3)] == [0.0, 0.25, 0.5]
    assert ParamSchedule.zeta(1) == 1296.0
    assert schedule.weight(2).s == 1.5
    assert_allclose(schedule.epsilon, 100.0)
    sob = ParamSchedule(r0=1.0, K=2, M=M, kind=WeightKind.sobolev)
    assert sob.p_k(2) == 2.0 + 1296.0 + 5184.0
    payload = schedule.to_dict()
    assert payload["r"] == [1.0, 0.75, 0.5]
    assert len(payload["delta"]) == 2


def test_schedule_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        ParamSchedule(r0=1.0, K=0, M=M)
    with pytest.raises(ParameterError):
        ParamSchedule(r0=-1.0, K=2, M=M)
    with pytest.raises(ParameterError):
        ParamSchedule(r0=1.0, K=2, M=M, q=3.0)
    with pytest.raises(ParameterError):
        ParamSchedule(r0=1.0, K=2, M=M).delta(2)


def test_adjoint_matches_bracket_with_quadratic_part(freq, cubic_R0):
    D = diagonal_hamiltonian(freq)
    assert _max_diff(apply_adjoint(cubic_R0, freq), poisson_bracket(cubic_R0, D)) <= 1e-12 * cubic_R0.max_abs_coeff() * 20


def test_homological_equation_solved(freq, cubic_R0):
    rng = project_resonant(cubic_R0, ResonantPart.range)
    S = solve_homological(rng, freq)
    S.check_invariants()
    assert _max_diff(apply_adjoint(S, freq), rng) <= 1e-12 * rng.max_abs_coeff()
    # {D, S} = −Π_R R
    D = diagonal_hamiltonian(freq)
    moved = project_degree(lie_transform(D, S, 1), 1)
    assert _max_diff(moved, -1.0 * rng) <= 1e-12 * rng.max_abs_coeff()


def test_homological_equation_rejects_resonant_monomials(freq):
    H = PolyHamiltonian.from_monomials([({1: 1, 2: 1}, {1: 1, 2: 1}, 1.0)], M)
    with pytest.raises(DomainError, match="resonant"):
        solve_homological(H, freq)
    assert empirical_J(H, freq) == 0.0
    with pytest.raises(DimensionError):
        solve_homological(PolyHamiltonian.zero(M + 1), freq)


def _random_nonresonant_monomial(rng, modes):
    while True:
        degree = int(rng.integers(2, 6))
        picks = rng.integers(-modes, modes + 1, size=degree)
        conj = rng.random(degree) < 0.5
        alpha = multi_index((int(j), 1) for j, c in zip(picks, conj) if not c)
        beta = multi_index((int(j), 1) for j, c in zip(picks, conj) if c)
        if sum(j * e for j, e in alpha) != sum(j * e for j, e in beta):
            continue
        if not is_resonant_key((alpha, beta)):
            return alpha, beta


def test_homological_equation_on_random_nonresonant_monomials():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        alpha, beta = _random_nonresonant_monomial(rng, 6)
        c = complex(*rng.standard_normal(2))
        H = PolyHamiltonian.from_monomials([(alpha, beta, c), (beta, alpha, c.conjugate())], 6)
        freq6 = FrequencyVector(float(rng.uniform(1.0, 2.0)), 6)
        S = solve_homological(H, freq6)
        S.check_invariants()
        assert _max_diff(apply_adjoint(S, freq6), H) <= 1e-12 * H.max_abs_coeff()


def test_state_decomposition_errors(freq, cubic_R0):
    with pytest.raises(DomainError):
        NormalFormState.from_hamiltonian(diagonal_hamiltonian(freq), freq, 2)
    with pytest.raises(DimensionError):
        NormalFormState.from_hamiltonian(build_R0(NonlinearitySpec.cubic(), MASS, M + 1), freq, 2)
    state = NormalFormState.from_hamiltonian(cubic_R0, freq, 2)
    assert set(state.R) == {1}
    assert not state.tail
    assert state.N == 1


def test_bnf_iterate_produces_resonant_even_normal_form(freq, cubic_R0):
    schedule = ParamSchedule(r0=1e-3, K=2, M=M)
    state, report, generators = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.none, buffer=0)
    state.check()
    assert state.done
    assert report.completed == 2
    assert len(generators) == 2
    assert report.rejected is None
    assert 1 not in state.Z
    assert 2 in state.Z
    Z = state.normal_form()
    assert project_resonant(Z, ResonantPart.kernel).terms == Z.terms
    Z.check_invariants()
    assert all(record.residual <= 1e-12 for record in report.steps)
    assert report.steps[0].eliminated == len(cubic_R0)
    assert report.normal_form_norm > 0


def test_bnf_result_matches_direct_lie_transforms(freq, cubic_R0):
    K = 2
    schedule = ParamSchedule(r0=1e-3, K=K, M=M)
    state, _, generators = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.none, buffer=0)
    H = diagonal_hamiltonian(freq) + cubic_R0
    direct = split_by_degree(transformed_hamiltonian(H, generators, K))
    engine = split_by_degree(state.hamiltonian())
    scale = max(cubic_R0.max_abs_coeff(), 1.0)
    for d in range(K + 1):
        a = direct.get(d, PolyHamiltonian.zero(M))
        b = engine.get(d, PolyHamiltonian.zero(M))
        assert _max_diff(a, b) <= 1e-9 * scale * max(1.0, a.max_abs_coeff())


def test_normal_form_is_conjugate_to_original_hamiltonian(freq, cubic_R0):
    r0 = 0.05
    schedule = ParamSchedule(r0=r0, K=2, M=M)
    state, _, generators = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.none, buffer=2)
    H0 = diagonal_hamiltonian(freq) + cubic_R0
    H = state.hamiltonian()
    rng = np.random.default_rng(12)
    conjugated, untransformed = [], []
    for _ in range(10):
        z = rng.standard_normal(2 * M + 1) + 1j * rng.standard_normal(2 * M + 1)
        u = SeqState(z * (0.5 * r0 / np.linalg.norm(z)), M)
        # H_K = H_0 ∘ Φ_{S_1} ∘ ... ∘ Φ_{S_K}
        x = u
        for S in reversed(generators):
            x = apply_generator_flow(x, S)
        reference = H0.evaluate(x)
        conjugated.append(abs(H.evaluate(u) - reference) / abs(reference))
        untransformed.append(abs(H0.evaluate(u) - H.evaluate(u)) / abs(reference))
    assert max(conjugated) <= 1e-5
    assert max(conjugated) < 0.1 * max(untransformed)


@pytest.mark.slow
def test_bnf_steps_at_four_modes():
    modes = 4
    freq4 = FrequencyVector(MASS, modes)
    R0 = build_R0(NonlinearitySpec.cubic(), MASS, modes)
    schedule = ParamSchedule(r0=1e-3, K=3, M=modes)
    state = NormalFormState.from_hamiltonian(R0, freq4, 3)
    for N in (1, 2, 3):
        assert state.N == N
        state = bnf_step(state, schedule, gate=GateMode.none, buffer=0)
        state.check()
        record = state.history[-1]
        assert record.N == N
        assert record.accepted
        assert record.residual <= 1e-12
        assert all(d > N for d in state.R)
    assert state.done
    assert set(state.Z) == {2}

    iterated, report, generators = bnf_iterate(R0, freq4, schedule, gate=GateMode.none, buffer=0)
    iterated.check()
    assert report.completed == 3
    assert report.rejected is None
    assert [record.N for record in report.steps] == [1, 2, 3]
    assert all(record.residual <= 1e-12 for record in report.steps)
    for ours, theirs in zip(state.generators, generators):
        assert _max_diff(ours, theirs) <= 1e-12 * max(1.0, theirs.max_abs_coeff())
    Z = iterated.normal_form()
    assert Z
    assert project_resonant(Z, ResonantPart.kernel).terms == Z.terms
    assert all(d % 2 == 0 for d in Z.degrees())


@pytest.mark.slow
def test_remainder_field_scales_beyond_fourth_power():
    modes = 4
    freq4 = FrequencyVector(MASS, modes)
    R0 = build_R0(NonlinearitySpec.cubic(), MASS, modes)
    schedule = ParamSchedule(r0=1e-3, K=2, M=modes)
    state, _, _ = bnf_iterate(R0, freq4, schedule, gate=GateMode.none, buffer=1)
    R = state.remainder()
    assert R
    assert min(R.degrees()) >= 5
    w = Weight(WeightKind.sobolev, 2.0, modes)
    deltas = [1e-1, 1e-2, 1e-3]
    # sup_{|u|≤δ} |X_R| ≤ δ |R|_{δ}
    fields = [delta * majorant_upper(R, delta, w) for delta in deltas]
    fit = fit_exponent([(delta, 1.0 / value) for delta, value in zip(deltas, fields)])
    assert fit.slope >= 3.8

    delta = 1e-2
    u0 = random_state(modes, MASS, delta, w, active_modes=1, seed=3).as_seq()
    result = simulate_polynomial(state.perturbation(), freq4, u0, delta, w, horizon=1010.0, dt=0.1, sample_every=50)
    assert result.T_escape >= 10.0 / delta


def test_empirical_gate_passes_for_small_radius(freq, cubic_R0):
    schedule = ParamSchedule(r0=1e-9, K=2, M=M)
    state, report, _ = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.empirical, buffer=0)
    assert report.completed == 2
    assert all(record.gate_empirical and record.accepted and not record.overridden for record in report.steps)


def test_gate_rejection_returns_partial_result(freq, cubic_R0):
    schedule = ParamSchedule(r0=10.0, K=2, M=M)
    state, report, generators = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.empirical, buffer=0)
    assert report.completed == 0
    assert generators == []
    assert state.k == 0
    assert report.rejected["step"] == 0
    assert report.rejected["reason"] == "empirical gate"
    assert len(report.steps) == 1
    assert not report.steps[0].accepted
    assert report.to_dict()["rejected"]["step"] == 0


def test_override_continues_past_failed_gate(freq, cubic_R0):
    schedule = ParamSchedule(r0=10.0, K=2, M=M)
    _, report, _ = bnf_iterate(cubic_R0, freq, schedule, gate=GateMode.empirical, override=True, buffer=0)
    assert report.completed == 2
    assert report.steps[0].overridden
    assert report.steps[0].accepted


def test_bnf_step_raises_with_partial_state(freq, cubic_R0):
    schedule = ParamSchedule(r0=10.0, K=2, M=M)
    state = NormalFormState.from_hamiltonian(cubic_R0, freq, 2)
    with pytest.raises(StepRejectedError) as info:
        bnf_step(state, schedule, gate=GateMode.empirical, buffer=0)
    assert info.value.step == 0
    assert len(info.value.state.history) == 1
    with pytest.raises(ParameterError):
        bnf_step(state, ParamSchedule(r0=1.0, K=3, M=M))
    with pytest.raises(ParameterError):
        bnf_step(state, schedule, gate=GateMode.none, buffer=-1)


def test_j_constants():
    assert_allclose(j0_bound(WeightKind.sobolev, 1296.0, 1, 0.5), -4.0 * math.log(0.5) + 1296.0)
    with pytest.raises(ParameterError):
        j0_bound(WeightKind.sobolev, 100.0, 1, 0.5)
    assert j0_bound(WeightKind.subexp, 1e-6, 3, 0.5, q=1.1) == math.inf
    assert_allclose(j0_bound(WeightKind.subexp, 1.0, 1, 0.5, q=2.0), -4.0 * math.log(0.5) + math.e)
    sob = ParamSchedule(r0=1.0, K=2, M=M, kind=WeightKind.sobolev, gamma=0.5)
    assert_allclose(log_J_K(sob), -8.0 * math.log(0.5) + 2 ** 12 * 8)


def test_theorem_params_validation():
    with pytest.raises(ParameterError):
        TheoremParams(gamma=1.0)
    with pytest.raises(ParameterError):
        TheoremParams(q=2.5)
    with pytest.raises(ParameterError):
        TheoremParams(p=1.0)
    with pytest.raises(ParameterError):
        TheoremParams(F_R=0.0)
    assert_allclose(TheoremParams(R=1.0, F_R=1.0).delta_S, 1.0 / 32.0)


def test_predicted_times_below_thresholds():
    params = TheoremParams()
    delta = 1e-3
    times = predicted_times(delta, params)
    # при c = s = 1, γ = 1/2, q = 2: δ_sE = min(exp(e^{−16}), 1) = 1
    assert params.log_delta_sE == 0.0
    L = -math.log(delta)
    expected_sub = L + 0.5 * L * (0.5 ** 4 * math.log(L)) ** 0.5
    assert_allclose(times.log_T_subexp, expected_sub, rtol=1e-12)
    base = -math.log(2.0) - math.log(delta)
    expected_sob = base + 4.0 * math.log(0.5) + (math.log(1.0 / 32.0) - math.log(delta))
    assert_allclose(times.log_T_sobolev, expected_sob, rtol=1e-12)
    assert times.log_T_coro is None
    assert "corollary" in times.threshold_violations
    assert_allclose(times.p_of_delta, optimal_p(delta, 0.5, 1.0 / 32.0, 1.0))
    payload = times.to_dict()
    assert set(payload) == {
        "delta", "log_T_subexp", "log_T_sobolev", "log_T_coro", "p_of_delta", "log_thresholds", "threshold_violations",
    }


def test_predicted_times_threshold_violations():
    params = TheoremParams()
    above_S = predicted_times(0.1, params)
    assert above_S.log_T_sobolev is None
    assert above_S.p_of_delta is None
    assert {"sobolev", "p_of_delta"} <= set(above_S.threshold_violations)
    assert above_S.log_T_subexp is not None
    above_sE = predicted_times(2.0, params)
    assert above_sE.log_T_subexp is None
    assert "subexp" in above_sE.threshold_violations
    with pytest.raises(ParameterError):
        predicted_times(0.0, params)


def test_predicted_subexp_time_decreases_with_delta():
    params = TheoremParams()
    values = [predicted_times(d, params).log_T_subexp for d in np.logspace(-8, -1, 15)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_lnln_clamped_near_threshold():
    params = TheoremParams()
    # L = 0.5 ≤ 1: ln L заменяется нулём
    times = predicted_times(math.exp(-0.5), params)
    assert_allclose(times.log_T_subexp, 0.5, rtol=1e-12)
