"""Matrix S, its Jordan structure, polynomial closure, minimization and order-2 classification."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .crum import Chain, JordanBasis, adjoint_kernel, build_intertwiner, phase_normalized
from .diffop import (
    TAU_OP,
    Hamiltonian,
    LinearDiffOperator,
    compose_all,
    operator_distance,
    product_residual,
    transpose,
)
from .gridfn import DEFAULT_MARGIN, GridFunction, count_sign_changes, envelope, sup_ratio

JORDAN_TOL = 1e-6
# a size-k cell perturbed by d splits its roots by about d^(1/k), so the
# collocated S^+ is clustered more loosely and compared by cluster means
PLUS_CLUSTER_TOL = 1e-3
COLLOCATION_COND_LIMIT = 1e12
DECLARED_MISMATCH = 1e-3
SCALAR_TOL = 1e-6


class IllConditionedBasisError(ValueError):
    pass


class EigenvalueResolutionError(ValueError):
    pass


class MinimizationError(ValueError):
    pass


@dataclass
class SMatrix:
    """``h phi_n = sum_m S[n, m] phi_m`` on a kernel basis."""

    entries: np.ndarray
    action_residual: float
    source: str
    collocation_mismatch: float | None = None

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class JordanCell:
    lam: complex
    size: int


@dataclass
class JordanStructure:
    cells: list[JordanCell]

    def __post_init__(self):
        for lam in self.eigenvalues():
            if len(self.sizes(lam)) > 2:
                raise ValueError(f"more than two Jordan cells at eigenvalue {lam}")

    def eigenvalues(self) -> list[complex]:
        out: list[complex] = []
        for c in self.cells:
            if c.lam not in out:
                out.append(c.lam)
        return out

    def sizes(self, lam: complex) -> list[int]:
        return sorted((c.size for c in self.cells if c.lam == lam), reverse=True)

    @property
    def total(self) -> int:
        return sum(c.size for c in self.cells)

    def paired(self) -> list[tuple[complex, int, int]]:
        """``(lam, larger, smaller)`` for every eigenvalue carrying two cells."""
        return [(lam, *self.sizes(lam)) for lam in self.eigenvalues() if len(self.sizes(lam)) == 2]

    def multiset(self) -> list[complex]:
        return [c.lam for c in self.cells for _ in range(c.size)]


@dataclass
class ClosurePolynomial:
    """Monic ``P(E) = det(E I - S)``; coefficients in descending powers."""

    coeffs: np.ndarray
    roots: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, e):
        return np.polyval(self.coeffs, e)

    def derivative(self) -> np.ndarray:
        return np.polyder(self.coeffs)


# S matrix ------------------------------------------------------------------------------


def _action_residual(h: Hamiltonian, functions: Sequence[GridFunction], s: np.ndarray, margin: float = DEFAULT_MARGIN) -> float:
    """``max_n max|h phi_n - sum_m S_nm phi_m| / max(|h phi_n| + |phi_n|)`` over the interior."""
    worst = 0.0
    for n, f in enumerate(functions):
        hf = h(f)
        rhs = sum((g.values * s[n, m] for m, g in enumerate(functions)), np.zeros(h.grid.n_points, dtype=complex))
        worst = max(worst, sup_ratio(hf.values - rhs, np.abs(hf.values) + np.abs(f.values), margin))
    return worst


def collocate_smatrix(h: Hamiltonian, functions: Sequence[GridFunction], margin: float = DEFAULT_MARGIN) -> SMatrix:
    """Least-squares ``S`` from samples at ``4N`` interior points.

    The conditioning test uses collocation rows scaled to unit size with
    equilibrated columns. Row ``n`` of ``S`` is then fitted with the points
    weighted by the local size of ``phi_n`` and ``h phi_n``, so that it stays
    accurate where ``phi_n`` is exponentially smaller than other members.
    """
    n = len(functions)
    grid = h.grid
    sl = grid.interior(margin)
    idx = np.unique(np.linspace(sl.start, sl.stop - 1, 4 * n).round().astype(int))
    hfs = [h(f) for f in functions]
    a = np.stack([f.values[idx] for f in functions], axis=1)  # [p, m]
    rs = np.max(np.abs(a), axis=1)
    rs = np.where(rs == 0, 1.0, rs)
    cs = np.max(np.abs(a / rs[:, None]), axis=0)
    cs = np.where(cs == 0, 1.0, cs)
    cond = np.linalg.cond(a / rs[:, None] / cs[None, :])
    if not np.isfinite(cond) or cond > COLLOCATION_COND_LIMIT:
        raise IllConditionedBasisError(f"ill-conditioned basis (collocation condition number {cond:.2e})")
    s = np.zeros((n, n), dtype=complex)
    for row, (f, hf) in enumerate(zip(functions, hfs)):
        w = envelope(np.abs(f.values) + np.abs(hf.values))[idx]
        w = np.where(w == 0, 1.0, w)
        aw = a / w[:, None]
        c = np.max(np.abs(aw), axis=0)
        c = np.where(c == 0, 1.0, c)
        sol, *_ = np.linalg.lstsq(aw / c[None, :], hf.values[idx] / w, rcond=None)
        s[row] = sol / c
    return SMatrix(s, _action_residual(h, functions, s, margin), "collocation")


def compute_smatrix(h: Hamiltonian, basis: JordanBasis) -> SMatrix:
    """``S`` for ``basis`` in its ascending order.

    The declared Jordan form is returned after it is confirmed by an
    independent collocation fit.
    """
    functions = basis.functions()
    fitted = collocate_smatrix(h, functions)
    declared = basis.declared_smatrix()
    scale = max(1.0, np.max(np.abs(declared)))
    mismatch = float(np.max(np.abs(fitted.entries - declared)) / scale)
    if mismatch > DECLARED_MISMATCH:
        raise ValueError(f"declared chain structure disagrees with the fitted S (mismatch {mismatch:.2e})")
    return SMatrix(declared, _action_residual(h, functions, declared), "declared", mismatch)


def smatrix_plus(h_minus: Hamiltonian, basis: JordanBasis) -> tuple[SMatrix, list[GridFunction]]:
    """``S^+`` of ``h^-`` on the cofactor basis of ``ker q^+``."""
    z = adjoint_kernel(basis)
    return collocate_smatrix(h_minus, z), z


# Jordan structure ------------------------------------------------------------------------------


def _clusters(values: np.ndarray, thr: float) -> list[list[int]]:
    n = len(values)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(values[i] - values[j]) <= thr:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: (np.mean(values[g]).real, np.mean(values[g]).imag))


def _rank(m: np.ndarray, thr: float) -> int:
    return int(np.sum(np.linalg.svd(m, compute_uv=False) > thr))


def jordan_structure(S: SMatrix | np.ndarray, tol: float = JORDAN_TOL, cluster_tol: float | None = None) -> JordanStructure:
    """Cells of ``S`` from eigenvalue clusters and ranks of ``(S - lam I)^k``.

    Clustering uses single linkage at ``cluster_tol * |S|`` (default
    ``tol``); a cluster's eigenvalue is its mean, which stays accurate even
    when a perturbed Jordan cell splits its roots. Ranks use singular values
    above ``tol * |S|^k``.
    """
    s = np.asarray(S.entries if isinstance(S, SMatrix) else S, dtype=complex)
    n = s.shape[0]
    norm = max(1.0, np.linalg.norm(s, 2))
    ctol = tol if cluster_tol is None else cluster_tol
    thr = ctol * norm
    eig = np.linalg.eigvals(s)
    groups = _clusters(eig, thr)
    means = [complex(np.mean(eig[g])) for g in groups]
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            if abs(means[i] - means[j]) < 3 * thr:
                raise EigenvalueResolutionError("eigenvalue resolution below tolerance")
    cells = []
    eye = np.eye(n)
    for g, lam in zip(groups, means):
        mult = len(g)
        a = s - lam * eye
        ranks = [n]
        p = eye.astype(complex)
        for k in range(1, mult + 1):
            p = p @ a
            ranks.append(_rank(p, max(tol, ctol**k) * norm**k))
        # number of cells of size >= k is ranks[k-1] - ranks[k]
        at_least = [ranks[k - 1] - ranks[k] for k in range(1, mult + 1)] + [0]
        sizes = []
        for k in range(1, mult + 1):
            sizes += [k] * (at_least[k - 1] - at_least[k])
        if sum(sizes) != mult:
            raise EigenvalueResolutionError(f"cell sizes {sizes} inconsistent with multiplicity {mult} at {lam}")
        cells += [JordanCell(lam, k) for k in sorted(sizes, reverse=True)]
    return JordanStructure(cells)


def spectra_agree(a: JordanStructure, b: JordanStructure, tol: float = 1e-5) -> tuple[float, bool]:
    """Largest relative eigenvalue mismatch after matching, and whether the spectra and cell sizes agree."""
    ea, eb = list(a.eigenvalues()), list(b.eigenvalues())
    if len(ea) != len(eb):
        return float("inf"), False
    worst, same_cells = 0.0, True
    remaining = list(eb)
    for lam in ea:
        j = int(np.argmin([abs(lam - mu) for mu in remaining]))
        mu = remaining.pop(j)
        worst = max(worst, abs(lam - mu) / max(1.0, abs(lam)))
        same_cells &= a.sizes(lam) == b.sizes(mu)
    return worst, same_cells and worst <= tol


@dataclass
class SpectraComparison:
    minus: JordanStructure
    plus: JordanStructure
    s_plus: SMatrix
    mismatch: float
    agree: bool


def compare_spectra(h_minus: Hamiltonian, basis: JordanBasis, s_minus: SMatrix | np.ndarray | None = None, tol: float = 1e-5) -> SpectraComparison:
    """Jordan structures of ``S^-`` (declared) and ``S^+`` (collocated) side by side."""
    s_minus = basis.declared_smatrix() if s_minus is None else s_minus
    js_minus = jordan_structure(s_minus)
    s_plus, _ = smatrix_plus(h_minus, basis)
    js_plus = jordan_structure(s_plus, cluster_tol=PLUS_CLUSTER_TOL)
    mismatch, agree = spectra_agree(js_minus, js_plus, tol)
    return SpectraComparison(js_minus, js_plus, s_plus, mismatch, agree)


# closure ------------------------------------------------------------------------------


def closure_polynomial(S: SMatrix | np.ndarray, tol: float = JORDAN_TOL) -> ClosurePolynomial:
    s = np.asarray(S.entries if isinstance(S, SMatrix) else S, dtype=complex)
    coeffs = np.poly(s)
    roots = np.linalg.eigvals(s)
    scale = max(1.0, np.max(np.abs(roots)))
    symmetric = all(np.min(np.abs(roots - r.conjugate())) <= tol * scale for r in roots)
    if symmetric:
        coeffs = coeffs.real.astype(complex)
    return ClosurePolynomial(coeffs, roots)


def closure_residual(
    q_minus: LinearDiffOperator,
    h_plus: Hamiltonian,
    h_minus: Hamiltonian,
    S: SMatrix | np.ndarray,
    test_set: Sequence[GridFunction] | None = None,
    margin: float = DEFAULT_MARGIN,
) -> float:
    """Worst relative residual of ``q+ q- = P(h+)`` and ``q- q+ = P(h-)``.

    ``P(h)`` is applied as the product of the shifted factors ``h - lam_i``
    rather than as an expanded operator of order ``2N``.
    """
    s = np.asarray(S.entries if isinstance(S, SMatrix) else S, dtype=complex)
    try:
        roots = jordan_structure(s).multiset()
    except EigenvalueResolutionError:
        roots = list(closure_polynomial(s).roots)
    q_plus = transpose(q_minus)
    out = 0.0
    for h, pair in ((h_plus, [q_plus, q_minus]), (h_minus, [q_minus, q_plus])):
        factors = [h.shifted_operator(lam) for lam in roots]
        out = max(out, product_residual(pair, factors, test_set, margin))
    return out


# minimization ------------------------------------------------------------------------------


@dataclass
class Minimization:
    p: LinearDiffOperator
    stripped: list[tuple[complex, int]]
    reduced_basis: JordanBasis | None
    scalar: complex
    residual: float

    @property
    def order(self) -> int:
        return self.p.order


def _strip_operator(h: Hamiltonian, stripped: Sequence[tuple[complex, int]]) -> LinearDiffOperator:
    g = h.grid
    factors = []
    for lam, power in stripped:
        lam_minus_h = LinearDiffOperator(
            (lam - h.potential, GridFunction.constant(g, 0.0), GridFunction.constant(g, 1.0))
        )
        factors += [lam_minus_h] * power
    return compose_all(factors) if factors else LinearDiffOperator.identity(g)


def reduce_basis(basis: JordanBasis, structure: JordanStructure) -> tuple[JordanBasis | None, list[tuple[complex, int]]]:
    """Drop the smaller of each paired cell and truncate the larger one accordingly."""
    chains = list(basis.chains)
    stripped = []
    for lam, _, small in structure.paired():
        ids = [i for i, c in enumerate(chains) if c is not None and abs(c.lam - lam) <= 1e-6 * max(1.0, abs(lam))]
        if len(ids) != 2:
            raise MinimizationError(f"could not locate the two chains at eigenvalue {lam}")
        i_small, i_big = sorted(ids, key=lambda i: (len(chains[i]), -i))
        big = chains[i_big]
        keep = len(big) - small
        chains[i_big] = Chain(big.lam, big.functions[:keep]) if keep else None
        chains[i_small] = None
        stripped.append((big.lam, small))
    kept = tuple(c for c in chains if c is not None)
    return (JordanBasis(kept) if kept else None), stripped


def minimize(q: LinearDiffOperator, h: Hamiltonian, basis: JordanBasis, tol: float = TAU_OP) -> Minimization:
    """Write ``q = s * p ∘ prod (lam_l - h)^{dk_l}`` with ``p`` non-minimizable and ``s = ±1``."""
    structure = jordan_structure(basis.declared_smatrix())
    reduced, stripped = reduce_basis(basis, structure)
    if reduced is None:
        p = LinearDiffOperator.identity(h.grid)
    else:
        p = build_intertwiner(h, reduced)
    candidate = p @ _strip_operator(h, stripped) if stripped else p
    sl = h.grid.interior()
    cv = np.concatenate([c.values[sl] for c in candidate.coeffs])
    qv = np.concatenate([q.coefficient(k).values[sl] for k in range(candidate.order + 1)])
    s = complex(np.vdot(cv, qv) / np.vdot(cv, cv))
    residual = operator_distance(q, candidate.scaled(s))
    if q.order != candidate.order or residual > tol or min(abs(s - 1), abs(s + 1)) > SCALAR_TOL:
        raise MinimizationError(f"minimization inconsistent (residual {residual:.2e}, scalar {s:.6g})")
    sign = 1.0 if abs(s - 1) <= abs(s + 1) else -1.0
    return Minimization(p, stripped, reduced, sign, residual)


# second-order classification ---------------------------------------------------------------


class Verdict(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"
    TYPE_III = "TypeIII"
    REDUCIBLE = "Reducible"
    MINIMIZABLE = "Minimizable"


@dataclass
class Classification:
    verdict: Verdict
    eigenvalues: list[complex]
    sign_changes: list[int]
    notes: list[str] = field(default_factory=list)


def _real_sign_changes(f: GridFunction) -> int:
    rot, _ = phase_normalized(f)
    return count_sign_changes(rot)


def classify2(q2: LinearDiffOperator, h: Hamiltonian, basis: JordanBasis) -> Classification:
    """Type I/II/III, reducible or minimizable for a second-order intertwiner."""
    if q2.order != 2 or basis.size != 2:
        raise ValueError("classification needs a second-order operator with a two-element basis")
    if not q2.is_real():
        raise ValueError("classification applies to operators with real coefficients")
    basis.validate(h)
    structure = jordan_structure(basis.declared_smatrix())
    lams = structure.multiset()
    notes = []
    if structure.paired():
        return Classification(Verdict.MINIMIZABLE, lams, [], notes)
    if len(structure.cells) == 1:
        f10 = basis.chains[0].functions[0]
        k = _real_sign_changes(f10)
        return Classification(Verdict.TYPE_III if k else Verdict.REDUCIBLE, lams, [k], notes)
    a, b = lams
    scale = max(1.0, abs(a), abs(b))
    if abs(a.imag) > JORDAN_TOL * scale and abs(a - b.conjugate()) <= JORDAN_TOL * scale:
        if np.allclose(h.potential.real, h.potential.real[0]):
            notes.append("constant potential: the complex first-order factorization has constant intermediate potential")
        return Classification(Verdict.TYPE_I, lams, [], notes)
    if abs(a.imag) > JORDAN_TOL * scale or abs(b.imag) > JORDAN_TOL * scale:
        raise ValueError("complex eigenvalues that are not a conjugate pair cannot give real coefficients")
    ks = [_real_sign_changes(c.functions[0]) for c in basis.chains]
    verdict = Verdict.TYPE_II if all(ks) else Verdict.REDUCIBLE
    return Classification(verdict, lams, ks, notes)
