import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import DimensionError, DomainError, ParameterError
from src.ham_algebra import (
    DegreeMode,
    PolyHamiltonian,
    ResonantPart,
    a_priori_time,
    bracket_terms,
    conjugate_key,
    dumps_hamiltonian,
    is_resonant_key,
    lie_tail_bound,
    lie_transform,
    loads_hamiltonian,
    majorant_norm,
    majorant_upper,
    momentum_hamiltonian,
    multi_index,
    poisson_bracket,
    poisson_norm_factor,
    project_degree,
    project_resonant,
    scaling_degree,
    vector_field,
)
from src.small_divisors import FrequencyVector, LatticeVector, reduce_superactions
from src.weighted_spaces import SeqState, Weight, WeightKind


def _key(alpha, beta):
    return (multi_index(alpha), multi_index(beta))


def random_hamiltonian(rng, M, degrees=(2, 3), count=6):
    """Случайный вещественный гамильтониан с сохранением импульса."""
    terms = {}
    while len(terms) < 2 * count:
        d = int(rng.choice(degrees))
        na = int(rng.integers(0, d))
        a = [int(j) for j in rng.integers(-M, M + 1, na)]
        b = [int(j) for j in rng.integers(-M, M + 1, d - na - 1)]
        last = sum(a) - sum(b)
        if abs(last) > M:
            continue
        b.append(last)
        alpha, beta = {}, {}
        for j in a:
            alpha[j] = alpha.get(j, 0) + 1
        for j in b:
            beta[j] = beta.get(j, 0) + 1
        key = _key(alpha, beta)
        if key in terms or conjugate_key(key) in terms:
            continue
        c = complex(rng.standard_normal(), rng.standard_normal())
        if conjugate_key(key) == key:
            c = complex(c.real, 0.0)
        terms[key] = c
        terms[conjugate_key(key)] = c.conjugate()
    return PolyHamiltonian.from_terms(terms, M)


def assert_valid(H):
    H.check_invariants()


def test_construction_symmetrizes_and_validates():
    H = PolyHamiltonian.from_monomials([({1: 2}, {2: 1}, 1 + 2j)], 3)
    assert H.coefficient({2: 1}, {1: 2}) == 1 - 2j
    assert len(H) == 2
    with pytest.raises(DomainError):
        PolyHamiltonian.from_monomials([({1: 1}, {2: 1}, 1.0)], 3)
    with pytest.raises(DimensionError):
        PolyHamiltonian.from_monomials([({4: 1}, {4: 1}, 1.0)], 3)
    with pytest.raises(DomainError):
        PolyHamiltonian.from_monomials([({1: 1}, {1: 1}, 1j)], 3)


def test_bracket_self_is_zero():
    H = PolyHamiltonian.from_monomials([({1: 2}, {2: 1}, 1 + 0.5j), ({1: 1, -1: 1}, {0: 2}, 0.3)], 3)
    assert not poisson_bracket(H, H)


def test_bracket_hand_example():
    # {u₁ū₂, u₂ū₁} = i(u₁ū₁ − u₂ū₂)
    terms, _ = bracket_terms({_key({1: 1}, {2: 1}): 1.0}, {_key({2: 1}, {1: 1}): 1.0})
    assert terms == {_key({1: 1}, {1: 1}): 1j, _key({2: 1}, {2: 1}): -1j}


def with_action_factor(rng, H):
    """Домножает каждый моном H на |u_j|² со случайным j."""
    M = H.M
    terms = {}
    seen = set()
    for key, c in H.terms.items():
        if conjugate_key(key) in seen:
            continue
        seen.add(key)
        j = int(rng.integers(-M, M + 1))
        alpha = dict(key[0])
        beta = dict(key[1])
        alpha[j] = alpha.get(j, 0) + 1
        beta[j] = beta.get(j, 0) + 1
        dressed = _key(alpha, beta)
        if dressed in terms or conjugate_key(dressed) in terms:
            continue
        terms[dressed] = c
    return PolyHamiltonian.from_terms(terms, M)


def assert_real(H):
    for key, c in H.terms.items():
        partner = H.terms.get(conjugate_key(key), 0j)
        assert abs(partner - c.conjugate()) <= 1e-12 * max(1.0, abs(c))


def test_bracket_with_action_factor():
    # H = u₋₁u₂ū₁ū₀ + c.c., G = |u₁|²: {H, G} = i(h − h̄)
    H = PolyHamiltonian.from_monomials([({-1: 1, 2: 1}, {1: 1, 0: 1}, 1.0)], 3)
    G = PolyHamiltonian.diagonal({1: 1.0}, 3)
    HG = poisson_bracket(H, G)
    assert dict(HG.terms) == {
        _key({-1: 1, 2: 1}, {0: 1, 1: 1}): 1j,
        _key({0: 1, 1: 1}, {-1: 1, 2: 1}): -1j,
    }
    assert not (HG + poisson_bracket(G, H))
    assert_valid(HG)


def test_bracket_antisymmetric_and_preserves_invariants():
    rng = np.random.default_rng(0)
    M = 4
    for index in range(100):
        F = random_hamiltonian(rng, M, degrees=(3, 4), count=3)
        if index % 2:
            G = with_action_factor(rng, random_hamiltonian(rng, M, degrees=(2,), count=2))
        else:
            G = random_hamiltonian(rng, M, degrees=(3, 4), count=3)
        FG = poisson_bracket(F, G)
        GF = poisson_bracket(G, F)
        assert (FG + GF).max_abs_coeff() <= 1e-12 * max(1.0, FG.max_abs_coeff())
        assert_real(FG)
        assert_valid(FG)
        expected = {a + b - 2 for a in F.degrees() for b in G.degrees()}
        assert set(FG.degrees()) <= expected
    with pytest.raises(DimensionError):
        poisson_bracket(F, random_hamiltonian(rng, 3))


def test_bracket_matches_finite_difference_bracket():
    rng = np.random.default_rng(5)
    M = 3
    F = random_hamiltonian(rng, M, degrees=(3, 4), count=4)
    G = with_action_factor(rng, random_hamiltonian(rng, M, degrees=(2, 3), count=3))
    u = 0.3 * (rng.standard_normal(2 * M + 1) + 1j * rng.standard_normal(2 * M + 1))
    h = 1e-6

    def grads(H):
        du = np.zeros(2 * M + 1, dtype=complex)
        dubar = np.zeros(2 * M + 1, dtype=complex)
        for i in range(2 * M + 1):
            e = np.zeros(2 * M + 1)
            e[i] = h
            dx = (H.evaluate(u + e) - H.evaluate(u - e)) / (2 * h)
            dy = (H.evaluate(u + 1j * e) - H.evaluate(u - 1j * e)) / (2 * h)
            du[i] = 0.5 * (dx - 1j * dy)
            dubar[i] = 0.5 * (dx + 1j * dy)
        return du, dubar

    F_u, F_ubar = grads(F)
    G_u, G_ubar = grads(G)
    expected = 1j * np.sum(G_u * F_ubar - G_ubar * F_u)
    assert abs(expected.imag) <= 1e-6 * max(1.0, abs(expected))
    assert_allclose(poisson_bracket(F, G).evaluate(u), expected.real, rtol=1e-6, atol=1e-8)


def test_jacobi_identity():
    rng = np.random.default_rng(1)
    for _ in range(10):
        F, G = (random_hamiltonian(rng, 4, count=4) for _ in range(2))
        H = with_action_factor(rng, random_hamiltonian(rng, 4, degrees=(2, 3), count=3))
        total = (
            poisson_bracket(poisson_bracket(F, G), H)
            + poisson_bracket(poisson_bracket(G, H), F)
            + poisson_bracket(poisson_bracket(H, F), G)
        )
        scale = max(F.max_abs_coeff(), G.max_abs_coeff(), H.max_abs_coeff()) ** 3
        assert total.max_abs_coeff() <= 1e-11 * scale


def test_resonant_commutes_with_even_weighted_action():
    M = 3
    w = Weight(WeightKind.subexp, 2.0, M, s=0.5, q=2.0)
    f = np.array([1.3, 0.4, 2.0, 0.7, 2.0, 0.4, 1.3])
    action = PolyHamiltonian.diagonal(w.values() ** 2 * f ** 2, M)
    H = PolyHamiltonian.from_monomials(
        [({1: 1, 2: 1}, {1: 1, 2: 1}, 2.0), ({2: 1, -1: 2}, {-2: 1, 1: 2}, 0.5 - 0.25j)], M
    )
    assert project_resonant(H, ResonantPart.kernel).terms == H.terms
    bracket = poisson_bracket(H, action)
    assert bracket.max_abs_coeff() <= 1e-12 * action.max_abs_coeff()


def test_momentum_commutes_with_admissible_hamiltonians():
    rng = np.random.default_rng(2)
    P = momentum_hamiltonian(4)
    for _ in range(5):
        H = random_hamiltonian(rng, 4, degrees=(2, 3, 4))
        assert poisson_bracket(H, P).max_abs_coeff() <= 1e-12 * H.max_abs_coeff()


def test_scaling_degree_examples():
    assert scaling_degree(PolyHamiltonian.diagonal({1: 1.0}, 2)) == 0
    assert scaling_degree(PolyHamiltonian.from_monomials([({1: 2}, {2: 1}, 1.0)], 2)) == 1
    assert scaling_degree(PolyHamiltonian.zero(2)) == math.inf


def test_project_degree_examples():
    quad = PolyHamiltonian.diagonal({1: 1.0}, 2)
    cubic = PolyHamiltonian.from_monomials([({1: 2}, {2: 1}, 1.0)], 2)
    mixed = quad + cubic
    assert project_degree(mixed, 1, DegreeMode.equal).terms == cubic.terms
    assert project_degree(cubic, 1, DegreeMode.equal).terms == cubic.terms
    assert not project_degree(cubic, 1, DegreeMode.greater)
    rebuilt = project_degree(mixed, 0) + project_degree(mixed, 0, DegreeMode.greater)
    assert rebuilt.terms == mixed.terms
    with pytest.raises(ParameterError):
        project_degree(mixed, -1)


def test_project_resonant_examples():
    H = PolyHamiltonian.from_monomials([({1: 1, 2: 1}, {1: 1, 2: 1}, 1.0)], 2)
    assert project_resonant(H, ResonantPart.kernel).terms == H.terms
    G = PolyHamiltonian.from_monomials([({1: 1, -1: 1}, {0: 2}, 1.0)], 2)
    assert project_resonant(G, ResonantPart.range).terms == G.terms
    assert not project_resonant(G, ResonantPart.kernel)
    assert is_resonant_key(_key({1: 1}, {-1: 1}))
    assert not is_resonant_key(_key({1: 1, -1: 1}, {0: 2}))


def test_resonant_keys_have_vanishing_superaction_reduction():
    rng = np.random.default_rng(13)
    H = random_hamiltonian(rng, 3, degrees=(2, 4), count=60)
    keys = list(H.terms) + [_key({}, {-1: 2, 2: 1}), _key({2: 1, -2: 1}, {2: 1, -2: 1})]
    for key in keys:
        assert is_resonant_key(key) == reduce_superactions(LatticeVector.from_key(key)).is_zero()
    # ū₋₁²ū₂ сохраняет импульс, но его знаменатель не равен нулю тождественно
    assert not is_resonant_key(_key({}, {-1: 2, 2: 1}))


def test_resonant_projection_splits_and_kills_odd_degrees():
    rng = np.random.default_rng(3)
    H = random_hamiltonian(rng, 4, degrees=(3, 4), count=10)
    kernel = project_resonant(H, ResonantPart.kernel)
    rng_part = project_resonant(H, ResonantPart.range)
    assert (kernel + rng_part).terms == H.terms
    assert not project_resonant(project_degree(H, 1), ResonantPart.kernel)
    w = Weight(WeightKind.sobolev, 2.0, 4)
    assert majorant_upper(kernel, 0.1, w) <= majorant_upper(H, 0.1, w) * (1 + 1e-12)


def test_vector_field_of_diagonal_and_zero():
    freq = FrequencyVector(1.5, 3)
    D = PolyHamiltonian.diagonal(freq.values(), 3)
    rng = np.random.default_rng(4)
    u = SeqState(rng.standard_normal(7) + 1j * rng.standard_normal(7), 3)
    assert_allclose(vector_field(D, u).coeffs, -1j * freq.values() * u.coeffs, rtol=1e-13)
    assert vector_field(PolyHamiltonian.zero(3), u).is_zero()
    with pytest.raises(DimensionError):
        vector_field(D, SeqState.zeros(2))


def test_vector_field_matches_finite_differences():
    rng = np.random.default_rng(5)
    M = 3
    H = random_hamiltonian(rng, M, degrees=(3, 4), count=8)
    u = 0.3 * (rng.standard_normal(2 * M + 1) + 1j * rng.standard_normal(2 * M + 1))
    field = vector_field(H, SeqState(u, M)).coeffs
    h = 1e-6
    expected = np.zeros_like(field)
    for k in range(2 * M + 1):
        e = np.zeros(2 * M + 1, dtype=complex)
        e[k] = 1.0
        dx = (H.evaluate(u + h * e) - H.evaluate(u - h * e)) / (2 * h)
        dy = (H.evaluate(u + 1j * h * e) - H.evaluate(u - 1j * h * e)) / (2 * h)
        expected[k] = -0.5j * (dx + 1j * dy)
    assert np.max(np.abs(field - expected)) <= 1e-6 * max(1.0, np.max(np.abs(field)))


def test_majorant_norm_single_mode_is_exact():
    w = Weight(WeightKind.subexp, 2.0, 3, s=1.0, q=2.0)
    H = PolyHamiltonian.diagonal({1: -2.5}, 3)
    bracket = majorant_norm(H, 0.1, w)
    assert_allclose(bracket.upper, 2.5, rtol=1e-12)
    assert_allclose(bracket.lower, bracket.upper, rtol=1e-9)
    with pytest.raises(ParameterError):
        majorant_norm(H, 0.0, w)


def test_majorant_norm_homogeneity_and_order():
    rng = np.random.default_rng(6)
    w = Weight(WeightKind.sobolev, 2.0, 3)
    H = project_degree(random_hamiltonian(rng, 3, degrees=(3,), count=6), 1)
    assert_allclose(majorant_upper(H, 0.3, w), 3.0 * majorant_upper(H, 0.1, w), rtol=1e-12)
    bracket = majorant_norm(H, 0.1, w)
    assert 0.0 < bracket.lower <= bracket.upper


def test_poisson_norm_inequality():
    rng = np.random.default_rng(7)
    w = Weight(WeightKind.sobolev, 2.0, 3)
    r, rho = 0.05, 0.05
    for _ in range(3):
        F = project_degree(random_hamiltonian(rng, 3, degrees=(3,), count=4), 1)
        G = project_degree(random_hamiltonian(rng, 3, degrees=(3,), count=4), 1)
        lhs = majorant_norm(poisson_bracket(F, G), r, w, starts=4, iterations=100).lower
        rhs = poisson_norm_factor(r, rho) * majorant_upper(F, r + rho, w) * majorant_upper(G, r + rho, w)
        assert lhs <= rhs


def test_lie_transform_examples():
    freq = FrequencyVector(1.3, 3)
    D = PolyHamiltonian.diagonal(freq.values(), 3)
    s = 0.2 - 0.1j
    S = PolyHamiltonian.from_monomials([({1: 2}, {2: 1}, s)], 3)
    assert lie_transform(D, PolyHamiltonian.zero(3), 4).terms == D.terms
    out = lie_transform(D, S, 1)
    divisor = 2 * freq.omega(1) - freq.omega(2)
    assert_allclose(out.coefficient({1: 2}, {2: 1}), 1j * divisor * s, rtol=1e-12)
    assert_allclose(out.coefficient({2: 1}, {1: 2}), -1j * divisor * s.conjugate(), rtol=1e-12)
    assert max(out.degrees()) == 3
    assert_valid(out)
    with pytest.raises(DomainError):
        lie_transform(S, D, 4)


def test_lie_tail_and_flow_time_helpers():
    assert_allclose(lie_tail_bound(3.0, 0.1, 0.5, 2), 2 * 3.0 * (0.1 / 1.0) ** 2)
    assert a_priori_time(0.5) == 0.25
    assert a_priori_time(0.0) == math.inf
    with pytest.raises(ParameterError):
        a_priori_time(-1.0)


def test_text_format_roundtrip():
    rng = np.random.default_rng(8)
    H = random_hamiltonian(rng, 3, degrees=(3, 4))
    text = dumps_hamiltonian(H)
    assert text.startswith("# M=3\n")
    back = loads_hamiltonian(text)
    assert back.M == 3
    assert set(back.terms) == set(H.terms)
    for key, c in H.terms.items():
        assert back.terms[key] == c
    with pytest.raises(DomainError):
        loads_hamiltonian("1 0 | 1:1\n")


@pytest.mark.parametrize(
    "text",
    [
        "1.0 | 1:1 | 1:1\n",
        "1.0 zero | 1:1 | 1:1\n",
        "1 0 | one:1 | 1:1\n",
        "# M=two\n1 0 | 1:1 | 1:1\n",
    ],
)
def test_text_format_rejects_malformed_lines(text):
    with pytest.raises(DomainError):
        loads_hamiltonian(text)
