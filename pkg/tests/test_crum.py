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
    exponential3,
    fn,
    hermite,
    one_soliton,
    oscillator_cell,
    soliton3,
    soliton3_nodeless_order,
    type_one_pair,
)
from susy_forge.crum import (
    BasisError,
    Chain,
    JordanBasis,
    SingularWronskianError,
    adjoint_kernel,
    build_intertwiner,
    cascade_residuals,
    chain_factorize,
    kernel_residuals,
    partial_wronskian_system_residual,
    partial_wronskians,
    partner_potential,
    telescoping_residual,
    wronskian_zeros,
)
from susy_forge.diffop import (
    Hamiltonian,
    LinearDiffOperator,
    gaussian_test_set,
    intertwining_residual,
    operator_distance,
)
from susy_forge.gridfn import Grid, GridFunction

SL = GRID.interior()


def const_op(*coeffs):
    return LinearDiffOperator.from_constants(GRID, coeffs)


class TestIntertwiner:
    def test_one_soliton_operator(self):
        h, b = one_soliton()
        q = build_intertwiner(h, b)
        assert q.order == 1
        assert np.max(np.abs(q.coefficient(0).values[SL] + np.tanh(X[SL]))) < 1e-12

    def test_exponential_chain_has_constant_coefficients(self):
        h, b = exponential3()
        # kernel e^x, e^2x, e^3x: (d-1)(d-2)(d-3)
        assert operator_distance(build_intertwiner(h, b), const_op(-6, 11, -6, 1)) < 1e-10

    def test_type_one_pair(self):
        h, b = type_one_pair()
        q = build_intertwiner(h, b)
        assert q.is_real()
        assert operator_distance(q, const_op(2, -2, 1)) < 1e-10

    def test_plus_is_transpose(self):
        h, b = exponential3()
        qp = build_intertwiner(h, b, "plus")
        assert operator_distance(qp, const_op(-6, -11, -6, -1)) < 1e-10

    def test_bad_sign(self):
        h, b = one_soliton()
        with pytest.raises(ValueError):
            build_intertwiner(h, b, "sideways")

    @pytest.mark.parametrize("name", sorted(INTERTWINING_SET))
    def test_kernel_is_annihilated(self, name):
        h, b = INTERTWINING_SET[name]()
        q = build_intertwiner(h, b)
        assert max(kernel_residuals(q, b.functions())) < 1e-6

    @pytest.mark.parametrize("name", sorted(INTERTWINING_SET))
    def test_intertwines(self, name):
        h, b = INTERTWINING_SET[name]()
        q = build_intertwiner(h, b)
        h2 = Hamiltonian(partner_potential(h.potential, b))
        assert intertwining_residual(q, h, h2, gaussian_test_set(GRID)) < 1e-5

    def test_singular_wronskian(self):
        b = JordanBasis.from_functions([(-1, cf("sinh", 1))])
        with pytest.raises(SingularWronskianError) as info:
            build_intertwiner(FREE, b)
        assert info.value.zeros and abs(info.value.zeros[0]) < 1e-6

    def test_grid_mismatch(self):
        other = Grid(12.0, 1025)
        b = JordanBasis.from_functions([(-1, GridFunction.from_callable(other, np.cosh))])
        with pytest.raises(ValueError):
            build_intertwiner(FREE, b)


class TestPartnerPotential:
    def test_one_soliton(self):
        h, b = one_soliton()
        v2 = partner_potential(h.potential, b)
        assert np.max(np.abs(v2.values[SL] + 2 / np.cosh(X[SL]) ** 2)) < 1e-10

    def test_three_soliton(self):
        h, b = soliton3()
        v2 = partner_potential(h.potential, b)
        assert np.max(np.abs(v2.values[SL] + 12 / np.cosh(X[SL]) ** 2)) < 1e-8

    def test_exponential_chain_keeps_free_potential(self):
        h, b = exponential3()
        assert np.max(np.abs(partner_potential(h.potential, b).values[SL])) < 1e-8

    def test_oscillator_ground_state_shift(self):
        # removing the ground state of x^2 gives x^2 + 2
        b = JordanBasis.from_functions([(1, hermite(0))])
        v2 = partner_potential(OSC.potential, b)
        assert np.max(np.abs(v2.values[SL] - (X[SL] ** 2 + 2))) < 1e-9

    def test_real_for_conjugate_pair(self):
        h, b = type_one_pair()
        assert partner_potential(h.potential, b).is_real()

    @given(st.floats(0.3, 2.5))
    @settings(max_examples=8, deadline=None)
    def test_cosh_family(self, k):
        # cosh(kx) at -k^2 maps V = 0 to -2 k^2 sech^2(kx)
        b = JordanBasis.from_functions([(-(k**2), cf("cosh", k))])
        v2 = partner_potential(FREE.potential, b)
        ex = -2 * k**2 / np.cosh(k * X[SL]) ** 2
        assert np.max(np.abs(v2.values[SL] - ex)) < 1e-8 * max(1.0, k**2)


class TestChainFactorize:
    @pytest.mark.parametrize("make", [exponential3, soliton3_nodeless_order, type_one_pair])
    def test_composition(self, make):
        h, b = make()
        c = chain_factorize(h, b)
        assert c.composition_residual is not None and c.composition_residual < 1e-6
        assert all(v < 1e-6 for v in c.end_residuals.values())
        assert telescoping_residual(c, b) < 1e-8

    def test_exponential_superpotentials(self):
        h, b = exponential3()
        c = chain_factorize(h, b)
        # crum order e^3x, e^2x, e^x gives r_j = d - j
        for j, chi in enumerate(c.superpotentials, start=1):
            assert np.max(np.abs(chi.values[SL] + j)) < 1e-8

    def test_intermediate_potentials_match(self):
        h, b = soliton3_nodeless_order()
        c = chain_factorize(h, b)
        assert not any(c.singular_flags)
        assert all(m is not None and m < 1e-6 for m in c.potential_mismatch)
        assert max(cascade_residuals(c, b)) < 1e-6

    def test_singular_intermediate_is_flagged(self):
        # crum order cosh3x, sinh2x, cosh x: W_2 = W(sinh 2x, cosh x) has a zero
        h, b = soliton3()
        c = chain_factorize(h, b)
        assert any(c.singular_flags)
        assert c.composition_residual is None and c.notes

    def test_complex_factors_for_conjugate_pair(self):
        h, b = type_one_pair()
        assert any(chain_factorize(h, b).complex_flags)


class TestPartialWronskianSystem:
    def test_exponential(self):
        h, b = exponential3()
        assert partial_wronskian_system_residual(b, h.potential) < 1e-6

    def test_three_soliton(self):
        h, b = soliton3_nodeless_order()
        assert partial_wronskian_system_residual(b, h.potential) < 1e-5

    def test_wrong_eigenvalues_fail(self):
        h, b = exponential3()
        assert partial_wronskian_system_residual(b, h.potential, [-9, -4, -2]) > 1e-2

    def test_vanishing_partial_wronskian(self):
        h, b = soliton3()
        with pytest.raises(SingularWronskianError):
            partial_wronskian_system_residual(b, h.potential)

    def test_partial_wronskian_values(self):
        h, b = exponential3()
        ws = partial_wronskians(b)
        assert len(ws) == 4 and np.all(ws[-1].values == 1)
        # W_1 = W(e^x, e^2x, e^3x) = 2 e^{6x}
        ex = 2 * np.exp(6 * X[SL])
        assert np.max(np.abs(np.abs(ws[0].values[SL]) - ex) / ex) < 1e-8


class TestAdjointKernel:
    @pytest.mark.parametrize("make", [exponential3, type_one_pair, soliton3_nodeless_order])
    def test_annihilated_by_transpose(self, make):
        h, b = make()
        qp = build_intertwiner(h, b, "plus")
        assert max(kernel_residuals(qp, adjoint_kernel(b))) < 1e-6

    def test_exponential_duals(self):
        h, b = exponential3()
        z = adjoint_kernel(b)
        # dual to e^x, e^2x, e^3x: e^{-x}/2, -e^{-2x}, e^{-3x}/2
        for f, (c, k) in zip(z, [(0.5, 1), (-1.0, 2), (0.5, 3)]):
            ex = c * np.exp(-k * X[SL])
            assert np.max(np.abs(f.values[SL] - ex) / np.abs(ex)) < 1e-8


class TestBasis:
    def test_empty(self):
        with pytest.raises(BasisError):
            JordanBasis(())
        with pytest.raises(BasisError):
            Chain(-1, ())

    def test_three_chains_one_eigenvalue(self):
        with pytest.raises(BasisError, match="at most two"):
            JordanBasis.from_functions([(-1, cf("exp", 1)), (-1, cf("exp", -1)), (-1, cf("cosh", 1))])

    def test_too_large(self):
        with pytest.raises(BasisError):
            JordanBasis.from_functions([(-(k**2), cf("exp", k)) for k in range(1, 8)])

    def test_validate_rejects_non_eigenfunction(self):
        with pytest.raises(BasisError, match="eigen"):
            JordanBasis.from_functions([(-2, cf("exp", 1))]).validate(FREE)

    def test_validate_chain(self):
        _, b = oscillator_cell()
        report = b.validate(OSC)
        assert max(report.values()) < 1e-4

    def test_declared_smatrix(self):
        _, b = oscillator_cell()
        assert np.array_equal(b.declared_smatrix(), np.array([[3, 0], [1, 3]]))

    def test_orders(self):
        _, b = oscillator_cell()
        c = b.chains[0]
        assert [f for _, f in b.crum_order()] == [c.functions[1], c.functions[0]]
        assert b.functions() == list(c.functions)

    def test_rescaled_keeps_kernel(self):
        h, b = type_one_pair()
        q = build_intertwiner(h, b)
        q2 = build_intertwiner(h, b.rescaled([2.0, -3j]))
        assert operator_distance(q, q2) < 1e-10


class TestWronskianZeros:
    def test_sinh(self):
        zs = wronskian_zeros(fn(np.sinh))
        assert len(zs) == 1 and abs(zs[0]) < 1e-9

    def test_nodeless_huge_values(self):
        assert wronskian_zeros(fn(lambda x: np.exp(3 * x) + np.exp(-3 * x))) == []

    def test_constant_phase(self):
        assert wronskian_zeros(fn(lambda x: (1 + 2j) * np.cosh(x))) == []

    def test_shifted_zero(self):
        zs = wronskian_zeros(fn(lambda x: np.tanh(x - 1.3)))
        assert len(zs) == 1 and zs[0] == pytest.approx(1.3, abs=1e-3)
