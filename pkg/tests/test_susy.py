import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _curated import (
    FREE,
    GRID,
    INTERTWINING_SET,
    OSC,
    X,
    cf,
    cubic_case2,
    cubic_case3,
    exponential3,
    hermite_01,
    hermite_12,
    one_soliton,
    oscillator_cell,
    strippable2,
    strippable3,
    type_one_pair,
)
from susy_forge.crum import JordanBasis, build_intertwiner, partner_potential
from susy_forge.diffop import Hamiltonian, LinearDiffOperator, compose, gaussian_test_set, operator_distance
from susy_forge.susy import (
    EigenvalueResolutionError,
    IllConditionedBasisError,
    JordanCell,
    JordanStructure,
    MinimizationError,
    Verdict,
    classify2,
    closure_polynomial,
    closure_residual,
    collocate_smatrix,
    compare_spectra,
    compute_smatrix,
    jordan_structure,
    minimize,
    spectra_agree,
)

SL = GRID.interior()


def setup(make):
    h, b = make()
    q = build_intertwiner(h, b)
    return h, b, q, Hamiltonian(partner_potential(h.potential, b))


class TestSMatrix:
    def test_collocation_recovers_eigenvalues(self):
        h, b = exponential3()
        s = collocate_smatrix(h, b.functions())
        assert np.allclose(s.entries, np.diag([-1, -4, -9]), atol=1e-8)
        assert s.action_residual < 1e-8

    def test_collocation_sees_chain(self):
        h, b = oscillator_cell()
        s = collocate_smatrix(h, b.functions())
        assert np.allclose(s.entries, [[3, 0], [1, 3]], atol=1e-6)

    def test_compute_confirms_declared(self):
        h, b = cubic_case3()
        s = compute_smatrix(h, b)
        assert s.source == "declared" and s.collocation_mismatch < 1e-6

    def test_compute_rejects_wrong_declaration(self):
        # e^{2x} declared at -1 instead of -4
        b = JordanBasis.from_functions([(-1, cf("exp", 1)), (-1.5, cf("exp", 2))])
        with pytest.raises(ValueError, match="disagrees"):
            compute_smatrix(FREE, b)

    def test_dependent_functions(self):
        f = cf("exp", 1)
        with pytest.raises(IllConditionedBasisError):
            collocate_smatrix(FREE, [f, f * 2.0])


class TestJordanStructure:
    def test_diagonal(self):
        js = jordan_structure(np.diag([-1.0, -4.0, -9.0]))
        assert sorted(c.lam.real for c in js.cells) == [-9, -4, -1]
        assert all(c.size == 1 for c in js.cells)

    def test_cells(self):
        s = np.array([[2, 0, 0, 0], [1, 2, 0, 0], [0, 0, 2, 0], [0, 0, 0, 5]], dtype=float)
        js = jordan_structure(s)
        assert js.sizes(2) == [2, 1] and js.sizes(5) == [1]
        assert js.paired() == [(2, 2, 1)]
        assert sorted(js.multiset(), key=lambda z: z.real) == [2, 2, 2, 5]

    def test_unresolved(self):
        with pytest.raises(EigenvalueResolutionError, match="resolution"):
            jordan_structure(np.diag([0.0, 2e-6]))

    def test_three_cells_rejected(self):
        with pytest.raises(ValueError):
            JordanStructure([JordanCell(1, 1)] * 3)

    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=4, unique=True))
    @settings(max_examples=20, deadline=None)
    def test_similarity_invariance(self, lams):
        s = np.diag(np.array(lams, dtype=float))
        rng = np.random.default_rng(len(lams))
        p = np.eye(len(lams)) + 0.3 * rng.standard_normal((len(lams), len(lams)))
        t = p @ s @ np.linalg.inv(p)
        mismatch, ok = spectra_agree(jordan_structure(s), jordan_structure(t))
        assert ok and mismatch < 1e-8


class TestClosure:
    def test_exponential_polynomial(self):
        _, b = exponential3()
        p = closure_polynomial(b.declared_smatrix())
        # (E + 1)(E + 4)(E + 9)
        assert np.max(np.abs(p.coeffs - [1, 14, 49, 36])) < 1e-12
        assert p(-4) == 0

    @pytest.mark.parametrize("name", sorted(INTERTWINING_SET))
    def test_operator_identity(self, name):
        h, b, q, h2 = setup(INTERTWINING_SET[name])
        assert closure_residual(q, h, h2, b.declared_smatrix(), gaussian_test_set(GRID)) < 1e-5

    def test_wrong_polynomial_fails(self):
        h, b, q, h2 = setup(one_soliton)
        assert closure_residual(q, h, h2, np.array([[-2.0]])) > 1e-2

    def test_real_coefficients_for_conjugate_pair(self):
        _, b = type_one_pair()
        p = closure_polynomial(b.declared_smatrix())
        # (E - 2i)(E + 2i)
        assert np.allclose(p.coeffs, [1, 0, 4]) and np.all(p.coeffs.imag == 0)


class TestSpectra:
    @pytest.mark.parametrize("make", [type_one_pair, hermite_12, exponential3, oscillator_cell, cubic_case2, cubic_case3])
    def test_minus_and_plus_agree(self, make):
        h, b, _, h2 = setup(make)
        c = compare_spectra(h2, b)
        assert c.agree and c.mismatch < 1e-5

    def test_mismatched_structures(self):
        a = JordanStructure([JordanCell(1, 2)])
        b = JordanStructure([JordanCell(1, 1), JordanCell(2, 1)])
        assert not spectra_agree(a, b)[1]


class TestMinimize:
    def test_pair_strips_to_scalar(self):
        h, b, q, _ = setup(strippable2)
        m = minimize(q, h, b)
        assert m.order == 0 and m.stripped == [(-1, 1)]
        assert m.scalar in (1.0, -1.0) and m.residual < 1e-6

    def test_pair_plus_cosh(self):
        h, b, q, _ = setup(strippable3)
        m = minimize(q, h, b)
        assert m.order == 1 and m.residual < 1e-5
        # M = N - 2 * sum of stripped sizes
        assert b.size - 2 * sum(k for _, k in m.stripped) == 1
        ex = -2 * np.tanh(2 * X[SL])
        assert np.max(np.abs(m.p.coefficient(0).values[SL] - ex)) < 1e-8

    def test_composition_recovers_operator(self):
        h, b, q, _ = setup(strippable3)
        m = minimize(q, h, b)
        lam_minus_h = LinearDiffOperator((-1.0 - h.potential, h.potential * 0.0, h.potential * 0.0 + 1.0))
        assert operator_distance(q, compose(m.p, lam_minus_h).scaled(m.scalar)) < 1e-5

    def test_non_minimizable_unchanged(self):
        h, b, q, _ = setup(exponential3)
        m = minimize(q, h, b)
        assert m.stripped == [] and operator_distance(m.p, q) < 1e-12

    def test_inconsistent_operator(self):
        h, b, q, _ = setup(strippable2)
        with pytest.raises(MinimizationError):
            minimize(q.scaled(3.0), h, b)


class TestClassify:
    def test_type_one(self):
        h, b, q, _ = setup(type_one_pair)
        assert np.max(np.abs(q.coefficient(1).values[SL] + 2)) < 1e-8
        assert np.max(np.abs(q.coefficient(0).values[SL] - 2)) < 1e-8
        assert classify2(q, h, b).verdict is Verdict.TYPE_I

    def test_type_two(self):
        h, b, q, _ = setup(hermite_12)
        c = classify2(q, h, b)
        assert c.verdict is Verdict.TYPE_II and c.sign_changes == [1, 2]

    def test_type_three(self):
        h, b, q, _ = setup(oscillator_cell)
        assert classify2(q, h, b).verdict is Verdict.TYPE_III

    def test_reducible(self):
        h, b, q, _ = setup(hermite_01)
        assert classify2(q, h, b).verdict is Verdict.REDUCIBLE

    def test_minimizable(self):
        h, b, q, _ = setup(strippable2)
        assert classify2(q, h, b).verdict is Verdict.MINIMIZABLE

    def test_needs_order_two(self):
        h, b, q, _ = setup(one_soliton)
        with pytest.raises(ValueError):
            classify2(q, h, b)

    @given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.booleans())
    @settings(max_examples=10, deadline=None)
    def test_rescaling_invariance(self, a, c, flip):
        for make in (hermite_12, hermite_01):
            h, b, _, _ = setup(make)
            scaled = b.rescaled([a, -c if flip else c])
            q = build_intertwiner(h, scaled)
            assert classify2(q, h, scaled).verdict is classify2(build_intertwiner(h, b), h, b).verdict
