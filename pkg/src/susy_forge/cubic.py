"""Third-order intertwiners: the G-function parametrization and the two-step factorization.

Numbering follows :meth:`JordanBasis.crum_order`: ``phi_1, phi_2, phi_3``
with ``W_1 = W(phi_3, phi_2, phi_1)``, ``W_2 = W(phi_3, phi_2)``,
``W_3 = phi_3`` and ``w_j = W_j'/W_j``. The pairwise Wronskians are
``W_jk = phi_j' phi_k - phi_j phi_k'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .crum import JordanBasis, kernel_coefficients, partner_potential, wronskian_zeros
from .diffop import (
    TAU_OP,
    Hamiltonian,
    LinearDiffOperator,
    compose,
    intertwining_residual,
    operator_distance,
    transpose,
)
from .gridfn import DEFAULT_MARGIN, TAU_REAL, GridFunction, derivative, local_residual, wronskian
from .susy import jordan_structure, smatrix_plus

IDENTITY_TOL = 1e-5
# fraction of the running scale below which the discriminant root counts as vanishing
ROOT_ZERO = 1e-4


class StrippableError(ValueError):
    pass


class TheoremHypothesisError(ValueError):
    def __init__(self, failures: Sequence[str]):
        super().__init__("Theorem 5 hypothesis violated: " + "; ".join(failures))
        self.failures = list(failures)


def P3(lams: Sequence[complex], e):
    l1, l2, l3 = lams
    return (e - l1) * (e - l2) * (e - l3)


def P3_prime(lams: Sequence[complex], e):
    l1, l2, l3 = lams
    return (e - l2) * (e - l3) + (e - l1) * (e - l3) + (e - l1) * (e - l2)


def tau_disc(G: GridFunction) -> float:
    return 1e-8 * (1.0 + G.max_abs() ** 4)


@dataclass
class GProfile:
    """``G = (w1' + w1^2 - V1 + lam1 + lam2 + lam3) / 2`` and its discriminant root."""

    G: GridFunction
    lambdas: tuple[complex, complex, complex]
    sqrt_branch: GridFunction
    w1: GridFunction
    V1: GridFunction
    case: int | None = None

    @property
    def discriminant(self) -> GridFunction:
        return derivative(self.G, 1) ** 2 + 4.0 * P3(self.lambdas, self.G)

    def branch_residual(self, margin: float = DEFAULT_MARGIN) -> float:
        """Size of ``sqrt_branch^2 - ((G')^2 + 4 P3(G))`` relative to its terms."""
        dg = derivative(self.G, 1)
        p = 4.0 * P3(self.lambdas, self.G)
        sq = self.sqrt_branch**2
        floor = GridFunction.constant(self.G.grid, (1.0 + max(abs(l) for l in self.lambdas) + self.G.max_abs(margin)) ** 3)
        return local_residual(sq - dg**2 - p, sq, dg**2, p, floor, margin=margin)


@dataclass
class CubicFactorization:
    p1: LinearDiffOperator
    k2: LinearDiffOperator
    p2: LinearDiffOperator
    k1: LinearDiffOperator
    h1_potential: GridFunction
    h2_potential: GridFunction
    lambda3: complex
    residuals: dict[str, float] = field(default_factory=dict)


# identity frame --------------------------------------------------------------------------


def jordan_case(basis: JordanBasis) -> int:
    """1, 2 or 3 for cell sizes (1,1,1), (2,1) or (3)."""
    if basis.size != 3:
        raise ValueError("third-order machinery needs a basis of three functions")
    sizes = sorted(len(c) for c in basis.chains)
    return {(1, 1, 1): 1, (1, 2): 2, (3,): 3}[tuple(sizes)]


def identity_frame(basis: JordanBasis) -> tuple[int, list[GridFunction], list[complex]]:
    """Case number, ``(phi_1, phi_2, phi_3)`` and eigenvalues in the numbering of the identities.

    Case 2 puts the single eigenfunction first and the cell's associated
    function before its eigenfunction; case 3 lists the cell from the top.
    """
    case = jordan_case(basis)
    if case == 1:
        pairs = basis.crum_order()
        return case, [f for _, f in pairs], [lam for lam, _ in pairs]
    if case == 2:
        single = next(c for c in basis.chains if len(c) == 1)
        cell = next(c for c in basis.chains if len(c) == 2)
        return case, [single.functions[0], cell.functions[1], cell.functions[0]], [single.lam, cell.lam, cell.lam]
    c = basis.chains[0]
    return case, [c.functions[2], c.functions[1], c.functions[0]], [c.lam] * 3


def pair_wronskian(a: GridFunction, b: GridFunction) -> GridFunction:
    """``a' b - a b'``."""
    return derivative(a, 1) * b - a * derivative(b, 1)


def _w1_of(phis: Sequence[GridFunction]) -> GridFunction:
    return wronskian([phis[2], phis[1], phis[0]])


def _branch_sides(case: int, phis: Sequence[GridFunction], lams: Sequence[complex]) -> tuple[GridFunction, GridFunction]:
    """Right-hand sides of ``G' + sqrt`` and ``G' - sqrt``."""
    p1, p2, p3 = phis
    l1, l2, l3 = lams
    W1 = _w1_of(phis)
    if case == 1:
        c = 2.0 * (l1 - l2) * (l2 - l3) * (l3 - l1)
        w12, w23, w31 = pair_wronskian(p1, p2), pair_wronskian(p2, p3), pair_wronskian(p3, p1)
        return c * p1 * p2 * p3 / W1, c * w12 * w23 * w31 / W1**2
    if case == 2:
        c = 2.0 * (l1 - l2) ** 2
        w13, w23 = pair_wronskian(p1, p3), pair_wronskian(p2, p3)
        return -c * p1 * p3**2 / W1, c * w13**2 * w23 / W1**2
    W2 = pair_wronskian(p2, p3)
    return -2.0 * p3**3 / W1, 2.0 * W2**3 / W1**2


def branch_sqrt(basis: JordanBasis, case: int | None = None) -> GridFunction:
    """The root ``sqrt((G')^2 + 4 P3(G))`` on the branch fixed by the basis.

    Taken as half the difference of the right-hand sides of the ``G' + sqrt``
    and ``G' - sqrt`` identities, so only basis data enter and sign changes
    follow the functions themselves.
    """
    detected, phis, lams = identity_frame(basis)
    if case is not None and case != detected:
        raise ValueError(f"case mismatch: basis has Jordan case {detected}, requested {case}")
    plus, minus = _branch_sides(detected, phis, lams)
    return (plus - minus) * 0.5


# G profile --------------------------------------------------------------------------------


def basis_w1(basis: JordanBasis) -> GridFunction:
    """``w_1 = W_1'/W_1``, i.e. minus the sub-leading coefficient of the monic intertwiner."""
    return -kernel_coefficients(basis.functions())[-1]


def g_function(
    w1: GridFunction,
    V1: GridFunction,
    lambdas: Sequence[complex],
    basis: JordanBasis | None = None,
    real: bool = True,
) -> GProfile:
    """G-profile from ``w1``, ``V1`` and the eigenvalues.

    The root branch comes from ``basis`` when given, otherwise the principal
    root is taken. With ``real`` the discriminant must stay above
    ``-tau_disc``.
    """
    lams = tuple(complex(l) for l in lambdas)
    G = (derivative(w1, 1) + w1 * w1 - V1 + sum(lams)) * 0.5
    disc = derivative(G, 1) ** 2 + 4.0 * P3(lams, G)
    if real:
        sl = G.grid.interior()
        if np.min(disc.real[sl]) < -tau_disc(G):
            raise ValueError("discriminant negative: non-real data or broken basis")
    if basis is not None:
        root = branch_sqrt(basis)
        case = jordan_case(basis)
    else:
        root = GridFunction(G.grid, np.sqrt(disc.values))
        case = None
    return GProfile(G, lams, root, w1, V1, case)


def profile_from_basis(h: Hamiltonian, basis: JordanBasis) -> GProfile:
    lams = [lam for lam, _ in basis.crum_order()]
    real = all(abs(complex(l).imag) == 0 for l in lams) or _conjugation_closed(lams)
    return g_function(basis_w1(basis), h.potential, lams, basis, real=real)


def _conjugation_closed(lams: Sequence[complex]) -> bool:
    rest = list(lams)
    for l in lams:
        j = int(np.argmin([abs(complex(l).conjugate() - m) for m in rest]))
        if abs(complex(l).conjugate() - rest[j]) > 1e-9 * max(1.0, abs(l)):
            return False
        rest.pop(j)
    return True


# w from G ---------------------------------------------------------------------------------


def _require_apart(diff: GridFunction, what: str) -> None:
    sl = diff.grid.interior()
    v = np.abs(diff.values[sl])
    if np.min(v) <= 1e-8 * max(1.0, np.max(v)) or wronskian_zeros(diff):
        raise StrippableError(f"G touches eigenvalue: strippable or invalid ({what})")


def w3_from_g(Gp: GProfile, w1: GridFunction) -> GridFunction:
    """``w_3 = w_1 + (G' - sqrt) / (2 (G - lam_3))``."""
    gap = Gp.G - Gp.lambdas[2]
    _require_apart(gap, "G - lambda_3")
    return w1 + (derivative(Gp.G, 1) - Gp.sqrt_branch) / (gap * 2.0)


def w2_from_g(Gp: GProfile) -> GridFunction:
    """``w_2 = (G' + sqrt) / (2 (G - lam_1))``."""
    gap = Gp.G - Gp.lambdas[0]
    _require_apart(gap, "G - lambda_1")
    return (derivative(Gp.G, 1) + Gp.sqrt_branch) / (gap * 2.0)


def w_from_g(Gp: GProfile, w1: GridFunction) -> tuple[GridFunction, GridFunction]:
    return w2_from_g(Gp), w3_from_g(Gp, w1)


def w2_cross_residual(Gp: GProfile, W2: GridFunction, margin: float = DEFAULT_MARGIN) -> float:
    """The ``w_2`` formula multiplied out, ``2 (G - lam_1) W_2' = (G' + sqrt) W_2``; usable when ``W_2`` has zeros."""
    lhs = (Gp.G - Gp.lambdas[0]) * derivative(W2, 1) * 2.0
    rhs = (derivative(Gp.G, 1) + Gp.sqrt_branch) * W2
    e = 1.0 + max(abs(l) for l in Gp.lambdas) + Gp.G.max_abs(margin)
    return local_residual(lhs - rhs, lhs, rhs, W2 * e**1.5, margin=margin)


def pr5_residual(Gp: GProfile, w1: GridFunction, w2: GridFunction, w3: GridFunction, margin: float = DEFAULT_MARGIN) -> float:
    """``w_2 (w_1 - w_3) = G - lam_2``."""
    lhs = w2 * (w1 - w3)
    rhs = Gp.G - Gp.lambdas[1]
    return local_residual(lhs - rhs, lhs, rhs, Gp.G, margin=margin)


@dataclass
class W1Result:
    w1: GridFunction
    repaired: list[float]
    identical_potentials: bool = False


def w1_from_g(Gp: GProfile, margin: float = DEFAULT_MARGIN) -> W1Result:
    """``w_1 = (G'' + 2 P3'(G)) / (2 sqrt)``.

    Where the root has isolated simple zeros the numerator must vanish too;
    those few samples are filled by spline interpolation from their
    neighbours and reported in ``repaired``. A root vanishing identically
    with ``G`` nonconstant gives ``w_1 = 0`` and flags identical potentials;
    with ``G`` constant the input is strippable and is refused.
    """
    G = Gp.G
    grid = G.grid
    sl = grid.interior(margin)
    dG = derivative(G, 1)
    root = Gp.sqrt_branch
    num = derivative(G, 2) + 2.0 * P3_prime(Gp.lambdas, G)
    gscale = max(1.0, G.max_abs(margin))
    root_scale = np.abs(dG.values) + np.sqrt(np.abs(4.0 * P3(Gp.lambdas, G).values)) + gscale
    small = np.abs(root.values) <= ROOT_ZERO * root_scale
    if np.all(small[sl]):
        if dG.max_abs(margin) <= 1e-8 * gscale:
            raise StrippableError("w1 undetermined: G is constant at an eigenvalue and the discriminant vanishes (strippable operator)")
        return W1Result(GridFunction.constant(grid, 0.0), [], identical_potentials=True)
    num_scale = np.abs(derivative(G, 2).values) + np.abs(2.0 * P3_prime(Gp.lambdas, G).values) + gscale
    bad = small & (np.abs(num.values) > 1e-3 * num_scale)
    if np.any(bad[sl]):
        xs = grid.x[sl][bad[sl]]
        raise ValueError(f"w1 singular: discriminant root vanishes where the numerator does not (near x = {xs[0]:.3f})")
    safe = np.where(small, 1.0, root.values)
    values = num.values / (2.0 * safe)
    repaired = []
    if np.any(small):
        good = ~small
        spline = CubicSpline(grid.x[good], values[good])
        values = np.where(small, spline(grid.x), values)
        idx = np.nonzero(small[sl])[0] + sl.start
        repaired = [float(grid.x[i]) for i in idx]
    return W1Result(GridFunction(grid, values), repaired)


# partial-Wronskian identities ------------------------------------------------------------------------------------


def _res(lhs: GridFunction, rhs: GridFunction, *extra: GridFunction, margin: float = DEFAULT_MARGIN) -> float:
    return local_residual(lhs - rhs, lhs, rhs, *extra, margin=margin)


def _levi_civita(j: int, k: int, l: int) -> int:
    return int(np.sign((k - j) * (l - j) * (l - k)))


def verify_lemma2(basis: JordanBasis, h: Hamiltonian, margin: float = DEFAULT_MARGIN) -> dict[str, float]:
    """Pointwise residual of every partial-Wronskian identity of the basis's Jordan case.

    Keys name the identity by its left-hand side; indices are 1-based in the
    identity numbering of :func:`identity_frame`. ``branch`` compares the basis
    root with ``(G' + sqrt)`` recomputed from ``G'``, and ``branch_square``
    its square against the discriminant.
    """
    case, phis, lams = identity_frame(basis)
    W1 = _w1_of(phis)
    Gp = profile_from_basis(h, basis)
    G, dG, root = Gp.G, derivative(Gp.G, 1), Gp.sqrt_branch
    out: dict[str, float] = {}
    # G and the eigenvalues scale like 1/L^2; these floors keep identities
    # whose two sides vanish identically from reporting noise over noise
    e2 = GridFunction.constant(G.grid, 1.0 + max(abs(complex(l)) for l in lams) + G.max_abs(margin))
    e1 = GridFunction(G.grid, np.sqrt(e2.values))
    e3 = e2 * e1

    def wjk(j, k):
        return pair_wronskian(phis[j - 1], phis[k - 1])

    def lam(j):
        return lams[j - 1]

    def phi(j):
        return phis[j - 1]

    if case == 1:
        for k, l in ((1, 2), (2, 3), (1, 3)):
            out[f"W{k}{l}'"] = _res(derivative(wjk(k, l), 1), (lam(l) - lam(k)) * phi(k) * phi(l))
        for j, k, l in permutations((1, 2, 3)):
            if k > l:
                continue
            eps = _levi_civita(j, k, l)
            out[f"(phi{j}/W1)'"] = _res(derivative(phi(j) / W1, 1), eps * (lam(k) - lam(l)) * wjk(j, k) * wjk(j, l) / W1**2, e1 * phi(j) / W1)
            out[f"G-lambda{j}"] = _res(G - lam(j), eps * (lam(j) - lam(k)) * (lam(j) - lam(l)) * phi(j) * wjk(k, l) / W1, e2)
    elif case == 2:
        out["W13'"] = _res(derivative(wjk(1, 3), 1), (lam(2) - lam(1)) * phi(1) * phi(3))
        out["W23'"] = _res(derivative(wjk(2, 3), 1), -phi(3) ** 2)
        out["(phi1/W1)'"] = _res(derivative(phi(1) / W1, 1), wjk(1, 3) ** 2 / W1**2, e1 * phi(1) / W1)
        out["(phi3/W1)'"] = _res(derivative(phi(3) / W1, 1), (lam(1) - lam(2)) * wjk(1, 3) * wjk(2, 3) / W1**2, e1 * phi(3) / W1)
        out["G-lambda1"] = _res(G - lam(1), (lam(1) - lam(2)) ** 2 * phi(1) * wjk(2, 3) / W1, e2)
        out["G-lambda2"] = _res(G - lam(2), (lam(1) - lam(2)) * phi(3) * wjk(1, 3) / W1, e2)
    else:
        W2 = wjk(2, 3)
        out["W2'"] = _res(derivative(W2, 1), -phi(3) ** 2)
        out["(phi3/W1)'"] = _res(derivative(phi(3) / W1, 1), W2**2 / W1**2, e1 * phi(3) / W1)
        out["G-lambda1"] = _res(G - lam(1), phi(3) * W2 / W1, e2)
    plus, minus = _branch_sides(case, phis, lams)
    out["G'+sqrt"] = _res(dG + root, plus, dG, root, e3)
    out["G'-sqrt"] = _res(dG - root, minus, dG, root, e3)
    out["branch"] = _res(root, plus - dG, dG, e3)
    out["branch_square"] = Gp.branch_residual(margin)
    return out


# coefficient identities ------------------------------------------------------------------------------------


def lemma1_coefficient_residuals(q3: LinearDiffOperator, V1: GridFunction, V2: GridFunction, margin: float = DEFAULT_MARGIN) -> dict[str, float]:
    """Checks of the coefficient system of a monic third-order intertwiner.

    With ``q3 = d^3 + alpha d^2 + beta d + gamma`` the four intertwining
    equations are evaluated pointwise, and ``transpose(q3)`` is compared
    with ``-d^3 + g2 d^2 + (g2' + 2 g1) d + (g0 + g1')``.
    """
    if q3.order != 3:
        raise ValueError("coefficient system applies to third-order operators")
    lead = q3.coefficient(3)
    if np.max(np.abs(lead.values - 1.0)) > 1e-12:
        raise ValueError("operator must be monic")
    a, b, c = q3.coefficient(2), q3.coefficient(1), q3.coefficient(0)
    d = derivative
    dv = V2 - V1
    v1p, v1pp = d(V1, 1), d(V1, 2)
    v1ppp = d(V1, 3)

    def floor(power):
        # alpha, beta, gamma scale like 1/L, 1/L^2, 1/L^3
        return GridFunction(q3.grid, np.abs(a.values) ** power + np.abs(b.values) ** (power / 2) + np.abs(c.values) ** (power / 3))

    out = {
        "V2-V1=2alpha'": _res(dv, 2.0 * d(a, 1), V1, V2, floor(2), margin=margin),
        "alpha eq": _res(a * dv - 3.0 * v1p, d(a, 2) + 2.0 * d(b, 1), floor(3), margin=margin),
        "beta eq": _res(b * dv - 2.0 * a * v1p - 3.0 * v1pp, d(b, 2) + 2.0 * d(c, 1), floor(4), margin=margin),
        "gamma eq": _res(c * dv - b * v1p - a * v1pp - v1ppp, d(c, 2), floor(5), margin=margin),
    }
    g2, g1, g0 = lemma1_g(q3)
    plus = LinearDiffOperator((g0 + d(g1, 1), d(g2, 1) + 2.0 * g1, g2, GridFunction.constant(q3.grid, -1.0)))
    out["transpose"] = operator_distance(transpose(q3), plus, margin)
    return out


def lemma1_g(q3: LinearDiffOperator) -> tuple[GridFunction, GridFunction, GridFunction]:
    """``g2 = alpha``, ``g1 = (alpha' - beta)/2``, ``g0 = gamma + (alpha'' - beta')/2``."""
    a, b, c = q3.coefficient(2), q3.coefficient(1), q3.coefficient(0)
    return a, (derivative(a, 1) - b) * 0.5, c + (derivative(a, 2) - derivative(b, 1)) * 0.5


# parametric coefficients ------------------------------------------------------------------


@dataclass
class ParametricCoefficients:
    V1: GridFunction
    V2: GridFunction
    g1: GridFunction
    g0: GridFunction
    checks: dict[str, float] = field(default_factory=dict)


def parametric_coefficients(
    Gp: GProfile,
    g2: GridFunction,
    q3: LinearDiffOperator | None = None,
    V1: GridFunction | None = None,
    margin: float = DEFAULT_MARGIN,
) -> ParametricCoefficients:
    """Potentials and lower coefficients of ``q3^+`` from ``G``, ``g2`` and the root.

    Given ``q3`` (and ``V1``) the results are cross-checked against the
    coefficient extraction and the Hamiltonian's potential.
    """
    s = sum(Gp.lambdas)
    G = Gp.G
    g2p = derivative(g2, 1)
    base = g2 * g2 - G * 2.0 + s
    v1 = base - g2p
    v2 = base + g2p
    bracket = g2 * g2 - G * 3.0 + s
    g1 = bracket * 0.5
    g0 = derivative(g2, 2) - g2 * bracket + Gp.sqrt_branch * 0.5
    checks = {}
    if V1 is not None:
        checks["V1"] = _res(v1, V1, g2 * g2, g2p, G, margin=margin)
    if q3 is not None:
        e2, e1, e0 = lemma1_g(q3)
        checks["g2"] = _res(g2, e2, margin=margin)
        checks["g1"] = _res(g1, e1, g2 * g2, G, margin=margin)
        checks["g0"] = _res(g0, e0, derivative(g2, 2), g2 * bracket, Gp.sqrt_branch, margin=margin)
    return ParametricCoefficients(GridFunction(v1.grid, v1.real) if v1.is_real() else v1, v2, g1, g0, checks)


# lower bound --------------------------------------------------------------------------------------


def check_lower_bound(Gp: GProfile, margin: float = DEFAULT_MARGIN) -> tuple[bool, float]:
    """``min (G - lam_3)`` over the interior and whether it is positive."""
    lam3 = Gp.lambdas[2]
    if abs(complex(lam3).imag) > 0:
        raise ValueError("lower bound needs a real lambda_3")
    if sum(abs(l - lam3) <= 1e-9 * max(1.0, abs(lam3)) for l in Gp.lambdas) > 1 and Gp.case == 1:
        raise StrippableError("lower bound applies to non-strippable operators (lambda_3 is doubled)")
    gap = float(np.min(Gp.G.real[Gp.G.grid.interior(margin)] - complex(lam3).real))
    return gap > 0, gap


# real factorization ------------------------------------------------------------------------------------


def _first_order_factor(chi: GridFunction) -> LinearDiffOperator:
    """``d + chi``."""
    return LinearDiffOperator((chi, GridFunction.constant(chi.grid, 1.0)))


def _half_step(V: GridFunction, w1: GridFunction, lams: Sequence[complex], lam3: complex, psi3: GridFunction):
    """``p1 = d - w3``, ``k2`` and the intermediate potential for the eigenfunction ``psi3``."""
    w3 = derivative(psi3, 1) / psi3
    G = (derivative(w1, 1) + w1 * w1 - V + sum(lams)) * 0.5
    p1 = _first_order_factor(-w3)
    k2 = LinearDiffOperator((G + V - w3 * w3 - w1 * w3 - 2.0 * lam3, w3 - w1, GridFunction.constant(V.grid, 1.0)))
    h1 = V - 2.0 * derivative(w3, 1)
    return p1, k2, h1, w3


def _real_or_none(f: GridFunction) -> GridFunction | None:
    if not np.all(np.isfinite(f.values)) or not f.is_real(TAU_REAL):
        return None
    return GridFunction(f.grid, f.real, tuple(d.real for d in f.jet))


def _real_op(op: LinearDiffOperator) -> LinearDiffOperator:
    return LinearDiffOperator(tuple(GridFunction(c.grid, c.real, tuple(d.real for d in c.jet)) for c in op.coeffs))


def factorize_theorem5(q3: LinearDiffOperator, h_plus: Hamiltonian, basis: JordanBasis, h_minus: Hamiltonian | None = None) -> CubicFactorization:
    """``q3 = k2 ∘ p1 = k1 ∘ p2`` through real intermediate Hamiltonians.

    ``lam_3`` is the eigenvalue of the last chain of ``basis``; it must be
    the minimal real eigenvalue. ``p1 = d - w3`` with ``w3 = phi_3'/phi_3``.
    The mirror pair comes from the same construction applied to the
    normalized transpose ``-q3^+`` on the ``h^-`` side, using the eigenvector
    of ``S^+`` at ``lam_3`` in the cofactor basis of its kernel.
    """
    failures = []
    if q3.order != 3 or basis.size != 3:
        raise TheoremHypothesisError(["operator is not of third order"])
    if not q3.is_real():
        failures.append("coefficients are not real")
    structure = jordan_structure(basis.declared_smatrix())
    if structure.paired():
        failures.append("operator can be stripped off (two Jordan cells share an eigenvalue)")
    pairs = basis.crum_order()
    lams = [lam for lam, _ in pairs]
    lam3 = complex(basis.chains[-1].lam)
    psi3 = basis.chains[-1].functions[0]
    reals = [complex(l).real for l in lams if abs(complex(l).imag) <= 1e-9 * max(1.0, abs(l))]
    if abs(lam3.imag) > 1e-9 * max(1.0, abs(lam3)):
        failures.append(f"lambda_3 = {lam3} is not real")
    elif reals and lam3.real > min(reals) + 1e-9 * max(1.0, abs(lam3)):
        failures.append(f"lambda_3 = {lam3.real:g} is not the minimal real eigenvalue ({min(reals):g})")
    zs = wronskian_zeros(psi3)
    if zs:
        failures.append(f"phi_3 has zeros (near x = {zs[0]:.3f}); the intermediate potential is singular")
    if not failures:
        Gp = profile_from_basis(h_plus, basis)
        try:
            ok, gap = check_lower_bound(Gp)
        except StrippableError as e:
            ok, gap = False, float("nan")
            failures.append(str(e))
        else:
            if not ok:
                failures.append(f"G - lambda_3 is not positive (min {gap:.3e})")
    if failures:
        raise TheoremHypothesisError(failures)

    V1 = h_plus.potential
    if h_minus is None:
        h_minus = Hamiltonian(partner_potential(V1, basis))
    V2 = h_minus.potential
    w1 = basis_w1(basis)
    p1, k2, h1v, w3 = _half_step(V1, w1, lams, lam3, psi3)
    h1v = _real_or_none(h1v)
    if h1v is None:
        raise TheoremHypothesisError(["intermediate potential h1 is complex or not finite"])

    # mirror: kernel of q3^+ is spanned by cofactor functions; pick the lam_3 eigenvector of S^+
    s_plus, z = smatrix_plus(h_minus, basis)
    shifted = s_plus.entries - lam3 * np.eye(3)
    if q3.is_real():
        shifted = shifted.real
    coef = np.linalg.svd(shifted.T)[2][-1].conj()  # c with c S^+ = lam3 c
    psi3_t = sum((zj * complex(cj) for zj, cj in zip(z[1:], coef[1:])), z[0] * complex(coef[0]))
    k = int(np.argmax(np.abs(psi3_t.values)))
    psi3_t = psi3_t * (abs(psi3_t.values[k]) / psi3_t.values[k])
    zs = wronskian_zeros(psi3_t)
    if zs:
        raise TheoremHypothesisError([f"mirror eigenfunction has zeros (near x = {zs[0]:.3f})"])
    q_t = transpose(q3).scaled(-1.0)
    w1_t = -q_t.coefficient(2)
    p1_t, k2_t, h2v, _ = _half_step(V2, w1_t, lams, lam3, psi3_t)
    h2v = _real_or_none(h2v)
    if h2v is None:
        raise TheoremHypothesisError(["intermediate potential h2 is complex or not finite"])
    # q3 = -(q_t)^t = -(p1_t)^t (k2_t)^t and -(p1_t)^t = d + w3_t
    k1 = _first_order_factor(-p1_t.coefficient(0))
    p2 = transpose(k2_t)
    if q3.is_real():
        p1, k2, k1, p2 = (_real_op(o) for o in (p1, k2, k1, p2))

    h1 = Hamiltonian(h1v)
    h2 = Hamiltonian(h2v)
    res = {
        "q=k2p1": operator_distance(q3, compose(k2, p1)),
        "q=k1p2": operator_distance(q3, compose(k1, p2)),
        "p1 h+ = h1 p1": intertwining_residual(p1, h_plus, h1),
        "k2 h1 = h- k2": intertwining_residual(k2, h1, h_minus),
        "p2 h+ = h2 p2": intertwining_residual(p2, h_plus, h2),
        "k1 h2 = h- k1": intertwining_residual(k1, h2, h_minus),
        "h+ p1+ = p1+ h1": intertwining_residual(transpose(p1), h1, h_plus),
        "h1 k2+ = k2+ h-": intertwining_residual(transpose(k2), h_minus, h1),
        "h+ p2+ = p2+ h2": intertwining_residual(transpose(p2), h2, h_plus),
        "h2 k1+ = k1+ h-": intertwining_residual(transpose(k1), h_minus, h2),
    }
    return CubicFactorization(p1, k2, p2, k1, h1v, h2v, lam3, res)


def theorem5_consistent(f: CubicFactorization, tol_op: float = TAU_OP, tol: float = IDENTITY_TOL) -> bool:
    r = f.residuals
    return r["q=k2p1"] <= tol_op and r["q=k1p2"] <= tol_op and all(v <= tol for k, v in r.items() if not k.startswith("q="))
