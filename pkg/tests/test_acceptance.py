"""Acceptance criteria at their stated tolerances, one PASS/FAIL line each."""

import numpy as np
import pytest

from _curated import (
    GRID,
    INTERTWINING_SET,
    X,
    cubic_case2,
    cubic_case3,
    exponential3,
    hermite_01,
    hermite_12,
    oscillator_cell,
    soliton3,
    soliton3_nodeless_order,
    strippable2,
    strippable3,
    type_one_pair,
)
from susy_forge.crum import build_intertwiner, partial_wronskian_system_residual, partner_potential
from susy_forge.cubic import (
    P3_prime,
    StrippableError,
    TheoremHypothesisError,
    basis_w1,
    check_lower_bound,
    factorize_theorem5,
    parametric_coefficients,
    profile_from_basis,
    verify_lemma2,
    w1_from_g,
    w2_from_g,
    w3_from_g,
)
from susy_forge.diffop import (
    Hamiltonian,
    LinearDiffOperator,
    compose,
    gaussian_test_set,
    intertwining_residual,
    operator_distance,
    transpose,
)
from susy_forge.gridfn import GridFunction, derivative
from susy_forge.schrod import class_k_check
from susy_forge.susy import (
    Verdict,
    classify2,
    closure_polynomial,
    closure_residual,
    compare_spectra,
    minimize,
)

SL = GRID.interior()
TESTS = gaussian_test_set(GRID)


def setup(make):
    h, b = make()
    q = build_intertwiner(h, b)
    return h, b, q, Hamiltonian(partner_potential(h.potential, b))


def const_op(*coeffs):
    return LinearDiffOperator.from_constants(GRID, coeffs)


def rel_const(f, c):
    return float(np.max(np.abs(f.values[SL] - c)) / abs(c))


def test_intertwining(criterion):
    worst = {}
    for name, make in INTERTWINING_SET.items():
        h, _, q, h2 = setup(make)
        worst[name] = intertwining_residual(q, h, h2, TESTS)
    top = max(worst, key=worst.get)
    criterion(1, "intertwining q h+ = h- q on the curated set", worst[top] < 1e-5, f"worst {worst[top]:.2e} on {top}")


def test_polynomial_closure(criterion):
    worst = 0.0
    for make in INTERTWINING_SET.values():
        h, b, q, h2 = setup(make)
        worst = max(worst, closure_residual(q, h, h2, b.declared_smatrix(), TESTS))
    _, b = exponential3()
    coeff_err = float(np.max(np.abs(closure_polynomial(b.declared_smatrix()).coeffs - [1, 14, 49, 36])))
    ok = worst < 1e-5 and coeff_err < 1e-6
    criterion(2, "polynomial closure", ok, f"closure {worst:.2e}, P3 coefficients {coeff_err:.1e}")


def test_spectra_of_both_sides(criterion):
    makes = [type_one_pair, hermite_12, hermite_01, exponential3, soliton3, oscillator_cell, cubic_case2, cubic_case3, strippable2, strippable3]
    worst, ok = 0.0, True
    for make in makes:
        _, b, _, h2 = setup(make)
        c = compare_spectra(h2, b)
        worst = max(worst, c.mismatch)
        ok &= c.agree
    criterion(3, "eigenvalues and cell sizes of S+ and S- agree", ok and worst < 1e-5, f"{len(makes)} bases, worst {worst:.2e}")


def test_minimization(criterion):
    h, b, q, _ = setup(strippable2)
    m0 = minimize(q, h, b)
    ok0 = m0.order == 0 and m0.scalar in (1.0, -1.0) and m0.residual < 1e-6
    h, b, q, _ = setup(strippable3)
    m1 = minimize(q, h, b)
    lam_minus_h = LinearDiffOperator((-1.0 - h.potential, h.potential * 0.0, h.potential * 0.0 + 1.0))
    comp = operator_distance(q, compose(m1.p, lam_minus_h).scaled(m1.scalar))
    reduced = b.size - 2 * sum(k for _, k in m1.stripped)
    ok1 = m1.order == 1 and comp < 1e-5 and reduced == 1
    criterion(
        4,
        "minimization strips shared eigenvalues",
        ok0 and ok1,
        f"pair: order {m0.order}, scalar {m0.scalar:+g}; with cosh 2x: order {m1.order}, M = {reduced}, composition {comp:.1e}",
    )


def test_classification(criterion):
    h, b, q, _ = setup(type_one_pair)
    coeff_err = max(
        float(np.max(np.abs(q.coefficient(1).values[SL] + 2))),
        float(np.max(np.abs(q.coefficient(0).values[SL] - 2))),
    )
    cases = {
        type_one_pair: Verdict.TYPE_I,
        hermite_12: Verdict.TYPE_II,
        oscillator_cell: Verdict.TYPE_III,
        hermite_01: Verdict.REDUCIBLE,
    }
    got = {}
    invariant = True
    for make, want in cases.items():
        h, b, q, _ = setup(make)
        got[make.__name__] = classify2(q, h, b).verdict
        for factors in ([2.0, 0.5], [-3.0, 7.0], [1e-3, 1e3]):
            scaled = b.rescaled(factors[: len(b.chains)])
            invariant &= classify2(build_intertwiner(h, scaled), h, scaled).verdict is want
    ok = coeff_err < 1e-8 and invariant and all(got[m.__name__] is v for m, v in cases.items())
    verdicts = ", ".join(f"{k}: {v.value}" for k, v in got.items())
    criterion(5, "second-order classification", ok, f"{verdicts}; q2 coefficients {coeff_err:.1e}; rescaling invariant {invariant}")


def test_partial_wronskian_system(criterion):
    h, b = exponential3()
    r_exp = partial_wronskian_system_residual(b, h.potential)
    # the nodeless ordering of the same three-soliton span
    h, b = soliton3_nodeless_order()
    r_sol = partial_wronskian_system_residual(b, h.potential)
    ok = r_exp < 1e-6 and r_sol < 1e-5
    criterion(6, "partial-Wronskian system", ok, f"exponential {r_exp:.2e}, three-soliton {r_sol:.2e}")


def test_cubic_closed_form_chain(criterion):
    h, b = exponential3()
    gp = profile_from_basis(h, b)
    w1 = basis_w1(b)
    errs = {
        "G": rel_const(gp.G, 11),
        "w1": rel_const(w1, 6),
        "w2": rel_const(w2_from_g(gp), 5),
        "w3": rel_const(w3_from_g(gp, w1), 3),
        "sqrt": rel_const(gp.sqrt_branch, 120),
        "w1 from G": rel_const(w1_from_g(gp).w1, 6),
    }
    p3p = P3_prime(gp.lambdas, 11)
    errs["P3'(11)"] = abs(p3p - 720) / 720
    ident = verify_lemma2(b, h)
    ok = max(errs.values()) < 1e-6 and max(ident.values()) < 1e-6
    criterion(7, "cubic closed-form chain", ok, f"constants {max(errs.values()):.1e}, identities {max(ident.values()):.1e}")


def test_strippable_detection(criterion):
    h, b = strippable3()
    gp = profile_from_basis(h, b)
    g_err = float(np.max(np.abs(gp.G.values[SL] + 1)))
    try:
        w1_from_g(gp)
        refused = ""
    except StrippableError as exc:
        refused = str(exc)
    criterion(8, "strippable basis detected", g_err < 1e-6 and "strippable" in refused, f"|G + 1| {g_err:.1e}; {refused}")


def test_lower_bound(criterion):
    gaps = {}
    for make in (exponential3, soliton3):
        h, b = make()
        gaps[make.__name__] = check_lower_bound(profile_from_basis(h, b))[1]
    h, b, q, _ = setup(soliton3_nodeless_order)
    try:
        factorize_theorem5(q, h, b)
        diag = ""
    except TheoremHypothesisError as exc:
        diag = str(exc)
    ok = min(gaps.values()) > 0 and "hypothesis violated" in diag
    detail = ", ".join(f"{k} min(G - lambda3) = {v:.3g}" for k, v in gaps.items())
    criterion(9, "lower bound and negative control", ok, f"{detail}; control: {diag}")


def test_real_factorization(criterion):
    h, b, q, _ = setup(exponential3)
    f = factorize_theorem5(q, h, b)
    coeff = max(
        operator_distance(f.p1, const_op(-3, 1)),
        operator_distance(f.k2, const_op(2, -3, 1)),
        operator_distance(f.k2 @ f.p1, const_op(-6, 11, -6, 1)),
    )
    h, b, q, h2 = setup(soliton3)
    g = factorize_theorem5(q, h, b, h2)
    comp = max(g.residuals["q=k2p1"], g.residuals["q=k1p2"])
    inter = max(v for k, v in g.residuals.items() if not k.startswith("q="))
    # the transposed factors split q+ the same way
    split = operator_distance(transpose(q), transpose(g.p1) @ transpose(g.k2))
    h1 = g.h1_potential
    real_bounded = h1.is_real() and bool(np.all(np.isfinite(h1.values))) and h1.max_abs() < 1e3
    worst_param = 0.0
    for make in (exponential3, soliton3):
        hh, bb, qq, _ = setup(make)
        pc = parametric_coefficients(profile_from_basis(hh, bb), qq.coefficient(2), qq, hh.potential)
        worst_param = max(worst_param, max(pc.checks.values()))
    ok = coeff < 1e-6 and comp < 1e-5 and inter < 1e-5 and split < 1e-5 and real_bounded and worst_param < 1e-5
    criterion(
        10,
        "real third-order factorization",
        ok,
        f"exponential factors {coeff:.1e}; three-soliton composition {comp:.1e}, intertwining {inter:.1e}, "
        f"transposed split {split:.1e}; parametric {worst_param:.1e}",
    )


def test_class_k(criterion):
    fn = lambda f: GridFunction.from_callable(GRID, f)
    good = class_k_check(fn(lambda x: x**2 + 1))
    free = class_k_check(GridFunction.constant(GRID, 0.0))
    well = class_k_check(fn(lambda x: -2 / np.cosh(x) ** 2))
    ok = (
        good.in_class_K
        and not free.in_class_K
        and not free.cond2_positive_tail
        and not well.in_class_K
        and not well.cond2_positive_tail
    )
    criterion(11, "class K membership", ok, "x^2 + 1 in; 0 and -2 sech^2 out on the positive-tail condition")


def test_numerical_calculus(criterion):
    f = GridFunction.from_callable(GRID, np.exp)  # sampled, no exact jet
    d = derivative(f, 1)
    rel = float(np.max(np.abs(d.values[SL] - f.values[SL]) / np.abs(f.values[SL])))
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(40):
        a = const_op(*rng.uniform(-3, 3, rng.integers(1, 4)), 1.0)
        b = const_op(*rng.uniform(-3, 3, rng.integers(1, 4)), -2.0)
        worst = max(
            worst,
            operator_distance(transpose(transpose(a)), a),
            operator_distance(transpose(compose(a, b)), compose(transpose(b), transpose(a))),
        )
    ok = rel < 1e-10 and worst < 1e-8
    criterion(12, "derivative accuracy and transpose identities", ok, f"e^x relative {rel:.1e}; transpose {worst:.1e}")
