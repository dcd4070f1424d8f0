"""Crum-type intertwiners, partner potentials and first-order factor chains."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

from math import comb

import numpy as np

from .diffop import (
    Hamiltonian,
    LinearDiffOperator,
    apply,
    compose_all,
    equation_residual,
    operator_distance,
    transpose,
)
from .gridfn import (
    TAU_REAL,
    TAU_ZERO,
    GridFunction,
    derivative,
    envelope,
    local_residual,
    same_grid,
    equilibrated_det,
    stack_derivatives,
    wronskian,
)

MAX_ORDER = 6
EIGEN_TOL = 1e-6
CHAIN_TOL = 1e-4
PARTNER_TOL = 1e-5
DEGENERATE_FRACTION = 0.2
EIGENVALUE_MERGE = 1e-9


class SingularWronskianError(ValueError):
    def __init__(self, message: str, zeros: Sequence[float] = ()):
        super().__init__(message if not zeros else f"{message} (zeros near x = {', '.join(f'{z:.4g}' for z in zeros)})")
        self.zeros = list(zeros)


class BasisError(ValueError):
    pass


# basis -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Chain:
    """One Jordan chain: ``functions[0]`` is the eigenfunction, ``functions[i]`` the i-th associated one."""

    lam: complex
    functions: tuple[GridFunction, ...]

    def __post_init__(self):
        fs = tuple(self.functions)
        if not fs:
            raise BasisError("empty chain")
        same_grid(*fs)
        object.__setattr__(self, "functions", fs)
        object.__setattr__(self, "lam", complex(self.lam))

    def __len__(self):
        return len(self.functions)


def _same_eigenvalue(a: complex, b: complex) -> bool:
    return abs(a - b) <= EIGENVALUE_MERGE * max(1.0, abs(a), abs(b))


@dataclass(frozen=True, eq=False)
class JordanBasis:
    """Ordered Jordan chains spanning the kernel of an intertwiner.

    Two flat orderings are used. :meth:`crum_order` lists chains in the given
    order with each chain reversed (top associated function first, the
    eigenfunction last); partial Wronskians ``W_j`` take its trailing
    members ``phi_N, ..., phi_j`` as rows. :meth:`ascending` keeps each chain
    eigenfunction-first, which puts the declared matrix ``S`` in lower Jordan
    form.
    """

    chains: tuple[Chain, ...]

    def __post_init__(self):
        chains = tuple(self.chains)
        if not chains:
            raise BasisError("basis needs at least one chain")
        same_grid(*(f for c in chains for f in c.functions))
        if sum(len(c) for c in chains) > MAX_ORDER:
            raise BasisError(f"total basis size exceeds {MAX_ORDER}")
        for c in chains:
            k = sum(_same_eigenvalue(c.lam, d.lam) for d in chains)
            if k > 2:
                raise BasisError(f"eigenvalue {c.lam} carries {k} chains; at most two are possible")
        object.__setattr__(self, "chains", chains)

    @classmethod
    def from_functions(cls, pairs: Sequence[tuple[complex, GridFunction]]) -> JordanBasis:
        """Basis made of eigenfunctions only, one chain per ``(lam, f)`` pair."""
        return cls(tuple(Chain(lam, (f,)) for lam, f in pairs))

    @property
    def size(self) -> int:
        return sum(len(c) for c in self.chains)

    @property
    def grid(self):
        return self.chains[0].functions[0].grid

    def crum_order(self) -> list[tuple[complex, GridFunction]]:
        return [(c.lam, f) for c in self.chains for f in reversed(c.functions)]

    def ascending(self) -> list[tuple[complex, GridFunction]]:
        return [(c.lam, f) for c in self.chains for f in c.functions]

    def functions(self) -> list[GridFunction]:
        return [f for _, f in self.ascending()]

    def declared_smatrix(self) -> np.ndarray:
        """``S`` in the ascending order: ``h phi_{n,i} = lam phi_{n,i} + phi_{n,i-1}``."""
        n = self.size
        s = np.zeros((n, n), dtype=complex)
        k = 0
        for c in self.chains:
            for i in range(len(c)):
                s[k + i, k + i] = c.lam
                if i:
                    s[k + i, k + i - 1] = 1.0
            k += len(c)
        return s

    def rescaled(self, factors: Sequence[complex]) -> JordanBasis:
        """Multiply each whole chain by a nonzero constant (keeps it a Jordan chain)."""
        if len(factors) != len(self.chains):
            raise ValueError("one factor per chain expected")
        return JordanBasis(tuple(Chain(c.lam, tuple(f * s for f in c.functions)) for c, s in zip(self.chains, factors)))

    def reordered(self, order: Sequence[int]) -> JordanBasis:
        return JordanBasis(tuple(self.chains[i] for i in order))

    def validate(self, h: Hamiltonian, eigen_tol: float = EIGEN_TOL, chain_tol: float = CHAIN_TOL) -> dict[str, float]:
        """Check the Jordan-chain relations; raise :class:`BasisError` on failure."""
        out = {}
        for ci, c in enumerate(self.chains):
            op = h.shifted_operator(c.lam)
            for i, f in enumerate(c.functions):
                lower = c.functions[i - 1] if i else None
                r = equation_residual(op, f, lower)
                out[f"chain{ci}[{i}]"] = r
                tol = chain_tol if i else eigen_tol
                if r > tol:
                    kind = "associated" if i else "eigen"
                    raise BasisError(f"chain {ci} member {i} fails the {kind} relation (residual {r:.2e})")
        return out


# Wronskians --------------------------------------------------------------------


def partial_wronskians(basis: JordanBasis) -> list[GridFunction]:
    """``[W_1, ..., W_N, W_{N+1} = 1]`` with ``W_j`` built from ``phi_N, ..., phi_j``."""
    phis = [f for _, f in basis.crum_order()]
    n = len(phis)
    ws = [wronskian(phis[j:][::-1]) for j in range(n)]
    ws.append(GridFunction.constant(basis.grid, 1.0))
    return ws


def phase_normalized(f: GridFunction) -> tuple[GridFunction, complex]:
    """Rotate ``f`` by a constant phase so that it is as real as possible."""
    v = f.values
    z = np.sum(v * v)
    phase = np.exp(-0.5j * np.angle(z)) if abs(z) > 0 else 1.0
    return f * complex(phase), complex(phase)


def wronskian_zeros(w: GridFunction, tol: float = TAU_REAL) -> list[float]:
    """Locations where ``w`` (after phase normalization) changes sign or vanishes."""
    rot, _ = phase_normalized(w)
    exact = [float(x) for x in w.x[w.values == 0]]
    if rot.is_real(tol):
        # a crossing counts when both neighbours stand out from the local scale;
        # a global threshold would hide zeros of exponentially large Wronskians
        v = rot.real
        env = envelope(v)
        big = np.abs(v) > TAU_ZERO * env
        flips = (np.sign(v[1:]) * np.sign(v[:-1]) < 0) & big[1:] & big[:-1]
        idx = np.nonzero(flips)[0]
        xs = rot.x
        found = [float(xs[i] - v[i] * (xs[i + 1] - xs[i]) / (v[i + 1] - v[i])) for i in idx]
        return sorted(set(found) | set(exact))
    # varying phase: a zero needs Re and Im to change sign at the same place
    re_flip = np.sign(w.real[1:]) * np.sign(w.real[:-1]) < 0
    im_flip = np.sign(w.imag[1:]) * np.sign(w.imag[:-1]) < 0
    near = im_flip | np.r_[False, im_flip[:-1]] | np.r_[im_flip[1:], False]
    idx = np.nonzero(re_flip & near)[0]
    return sorted(set(float(x) for x in w.x[idx]) | set(exact))


def require_nodeless(w: GridFunction, what: str = "singular Wronskian: partner potential singular") -> None:
    zs = wronskian_zeros(w)
    if zs:
        raise SingularWronskianError(what, zs)


def _safe_log_derivative(w: GridFunction) -> GridFunction:
    d = derivative(w, 1).values
    v = w.values
    out = np.divide(d, v, out=np.zeros_like(d), where=v != 0)
    out[~np.isfinite(out)] = 0.0
    return GridFunction(w.grid, out)


# intertwiner -------------------------------------------------------------------


def kernel_coefficients(functions: Sequence[GridFunction]) -> list[GridFunction]:
    """Coefficients ``c_0..c_{N-1}`` of the monic operator annihilating ``functions``.

    Solves ``sum_k c_k phi_n^(k) = -phi_n^(N)`` at every grid point with row
    and column equilibration. When every function carries exact derivatives
    beyond order ``N``, the coefficients get exact derivatives too, from
    differentiating the system: ``sum_j C(m,j) M^(j) c^(m-j) = r^(m)``.
    """
    n = len(functions)
    extra = max(0, min(len(f.jet) for f in functions) - n)
    d = stack_derivatives(functions, n + extra)
    m = d[:, :, :n]
    scale = np.maximum(np.max(np.abs(m), axis=2), np.abs(d[:, :, n]))
    scale = np.where(scale == 0, 1.0, scale)
    a = m / scale[:, :, None]
    # column equilibration for exponentially separated derivative orders
    cscale = np.max(np.abs(a), axis=1)
    cscale = np.where(cscale == 0, 1.0, cscale)
    a = a / cscale[:, None, :]
    cs = []  # cs[mm][:, k] is the mm-th derivative of c_k
    for mm in range(extra + 1):
        rhs = -d[:, :, n + mm]
        for j in range(1, mm + 1):
            rhs = rhs - comb(mm, j) * np.einsum("pik,pk->pi", d[:, :, j : j + n], cs[mm - j])
        cs.append(np.linalg.solve(a, (rhs / scale)[:, :, None])[:, :, 0] / cscale)
    grid = functions[0].grid
    return [GridFunction(grid, cs[0][:, k], tuple(c[:, k] for c in cs[1:])) for k in range(n)]


def build_intertwiner(h: Hamiltonian, basis: JordanBasis, sign: Literal["minus", "plus"] = "minus") -> LinearDiffOperator:
    """Order-``N`` intertwiner with ``basis`` as kernel.

    ``sign='minus'`` returns ``q^-`` with leading coefficient 1; ``'plus'``
    returns its transpose ``q^+`` with leading coefficient ``(-1)^N``.
    """
    if basis.grid != h.grid:
        raise ValueError("basis and Hamiltonian live on different grids")
    ws = partial_wronskians(basis)
    require_nodeless(ws[0])
    coeffs = kernel_coefficients(basis.functions())
    coeffs.append(GridFunction.constant(h.grid, 1.0))
    q = LinearDiffOperator(tuple(coeffs))
    if q.is_real():
        q = LinearDiffOperator(tuple(_real_part(c) for c in q.coeffs))
    if sign == "minus":
        return q
    if sign == "plus":
        return transpose(q)
    raise ValueError("sign must be 'minus' or 'plus'")


def _real_part(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, f.real, tuple(d.real for d in f.jet))


def kernel_residuals(q: LinearDiffOperator, functions: Sequence[GridFunction]) -> list[float]:
    """Pointwise relative size of ``q f`` for each ``f`` (see :func:`equation_residual`)."""
    return [equation_residual(q, f) for f in functions]


def partner_potential(V1: GridFunction, basis: JordanBasis, check: bool = True) -> GridFunction:
    """``V2 = V1 - 2 (ln W_1)''``.

    Two routes are available: ``V1 - 2(W''/W - (W'/W)^2)`` from the
    Wronskian, and ``V1 + 2 alpha'`` with ``alpha = -W'/W`` the sub-leading
    coefficient of the monic intertwiner. The second is used when ``alpha``
    carries exact derivatives; the other route serves as the ``check``.
    """
    w = partial_wronskians(basis)[0]
    require_nodeless(w)
    w, _ = phase_normalized(w)
    d1 = derivative(w, 1)
    d2 = derivative(w, 2)
    curv, slope2 = d2 / w, (d1 / w) ** 2
    via_w = V1 - 2.0 * (curv - slope2)
    alpha = kernel_coefficients(basis.functions())[-1]
    via_alpha = V1 + 2.0 * derivative(alpha, 1)
    v2 = via_alpha if alpha.jet else via_w
    scale = np.max(np.abs(V1.values)) + 2.0 * np.max(np.abs(curv.values)) + 2.0 * np.max(np.abs(slope2.values))
    if np.max(np.abs(v2.imag)) > TAU_REAL * scale:
        raise ValueError(f"partner potential is complex (max |Im V2| = {np.max(np.abs(v2.imag)):.3e})")
    v2 = GridFunction(v2.grid, v2.real)
    if check:
        # unit floor: both routes vanish identically for strippable bases
        unit = GridFunction.constant(V1.grid, 1.0)
        r = local_residual(via_w - via_alpha, v2, V1, via_alpha, 2.0 * curv, 2.0 * slope2, unit)
        if r > PARTNER_TOL:
            raise ValueError(f"partner potential disagrees with the intertwiner coefficient route (residual {r:.2e})")
    return v2


# first-order chain -------------------------------------------------------------------


@dataclass
class FactorizationChain:
    """``q^- = r_1 ∘ ... ∘ r_N`` with ``r_j = d + chi_j``; ``r_N`` acts first."""

    factors: list[LinearDiffOperator]
    superpotentials: list[GridFunction]
    lambdas: list[complex]
    intermediate_potentials: list[GridFunction]
    singular_flags: list[bool]
    complex_flags: list[bool]
    potential_mismatch: list[float | None]
    end_residuals: dict[str, float]
    composition_residual: float | None
    notes: list[str] = field(default_factory=list)


def chain_factorize(h: Hamiltonian, basis: JordanBasis, q: LinearDiffOperator | None = None) -> FactorizationChain:
    """Split the intertwiner into first-order Darboux factors.

    Intermediate potential ``v_j`` (``j = 1..N-1``) is evaluated from both
    neighbouring factors and their mismatch recorded; it is flagged singular
    when ``W_{j+1}`` has zeros.
    """
    ws = partial_wronskians(basis)
    require_nodeless(ws[0])
    n = basis.size
    npts = h.grid.n_points
    nodes = []
    for j, w in enumerate(ws[:-1], start=1):
        if np.count_nonzero(np.abs(w.values) < 1e-300) > DEGENERATE_FRACTION * npts:
            raise ValueError(f"degenerate partial Wronskian W_{j}")
        nodes.append(bool(wronskian_zeros(w)))
    lambdas = [lam for lam, _ in basis.crum_order()]
    logd = [_safe_log_derivative(w) for w in ws]
    chis = [logd[j + 1] - logd[j] for j in range(n)]
    one = GridFunction.constant(h.grid, 1.0)
    factors = [LinearDiffOperator((chi, one)) for chi in chis]
    complex_flags = [not chi.is_real() for chi in chis]

    def riccati(j, sign):
        """Terms of ``chi_j^2 + sign*chi_j' + lam_j`` (1-based ``j``)."""
        c = chis[j - 1]
        return [c * c, sign * derivative(c, 1), GridFunction.constant(h.grid, lambdas[j - 1])]

    def total(terms):
        return terms[0] + terms[1] + terms[2]

    inter, mismatch, singular = [], [], []
    for j in range(1, n):
        a, b = riccati(j, -1.0), riccati(j + 1, 1.0)
        sing = nodes[j]  # W_{j+1}
        singular.append(sing)
        inter.append(total(a))
        mismatch.append(None if sing or nodes[j - 1] else local_residual(total(a) - total(b), *a, *b))
    end = {}
    if not nodes[-1]:
        a = riccati(n, -1.0)
        end["V1"] = local_residual(total(a) - h.potential, *a, h.potential)
    if n == 1 or not nodes[1]:
        a = riccati(1, 1.0)
        partner = partner_potential(h.potential, basis, check=False)
        end["V2"] = local_residual(total(a) - partner, *a, partner)
    comp = None
    notes = []
    if not any(nodes[1:]):
        if q is None:
            q = build_intertwiner(h, basis)
        comp = operator_distance(compose_all(factors), q)
    else:
        notes.append("composition residual skipped: singular intermediate factors")
    return FactorizationChain(factors, chis, lambdas, inter, singular, complex_flags, mismatch, end, comp, notes)


def telescoping_residual(chain: FactorizationChain, basis: JordanBasis) -> float:
    """``sum_j chi_j + W_1'/W_1`` relative to the local size of the terms."""
    w1 = partial_wronskians(basis)[0]
    target = _safe_log_derivative(w1)
    total = chain.superpotentials[0]
    for c in chain.superpotentials[1:]:
        total = total + c
    return local_residual(total + target, target, *chain.superpotentials)


def cascade_residuals(chain: FactorizationChain, basis: JordanBasis) -> list[float]:
    """For ``j = 2..N``: ``r_j ... r_N phi_{j-1}`` against ``W_{j-1}/W_j``."""
    phis = [f for _, f in basis.crum_order()]
    ws = partial_wronskians(basis)
    n = len(phis)
    out = []
    for j in range(2, n + 1):
        g = phis[j - 2]
        for r in reversed(chain.factors[j - 1 :]):
            g = apply(r, g)
        num, den = ws[j - 2].values, ws[j - 1].values
        ok = den != 0
        target = GridFunction(g.grid, np.divide(num, den, out=g.values.copy(), where=ok))
        out.append(local_residual(g - target, g, target))
    return out


def partial_wronskian_system_residual(basis: JordanBasis, V1: GridFunction, lambdas_flat: Sequence[complex] | None = None, margin: float = 0.1) -> float:
    """Worst pointwise residual of the Riccati-type system for ``w_j = W_j'/W_j``.

    Covers ``w_j' - w_{j+2}' + w_j^2 - w_{j+2}^2 - 2 w_{j+1}(w_j - w_{j+2}) +
    lam_j - lam_{j+1} = 0`` for ``j = 1..N-1`` (with ``w_{N+1} = 0``) and
    ``w_N' + w_N^2 + lam_N - V_1 = 0``; each is scaled by the local size of
    its terms.
    """
    ws = partial_wronskians(basis)
    n = basis.size
    lams = list(lambdas_flat) if lambdas_flat is not None else [lam for lam, _ in basis.crum_order()]
    bad = [j for j, w in enumerate(ws[:-1], start=1) if wronskian_zeros(w)]
    if bad:
        raise SingularWronskianError(f"partial Wronskians W_j vanish for j = {bad}")
    w = [derivative(W, 1) / W for W in ws[:-1]]
    zero = GridFunction.constant(V1.grid, 0.0)
    w += [zero, zero]
    dw = [derivative(f, 1) for f in w]
    worst = 0.0
    for j in range(n - 1):
        terms = [
            dw[j],
            -dw[j + 2],
            w[j] * w[j],
            -(w[j + 2] * w[j + 2]),
            -2.0 * w[j + 1] * (w[j] - w[j + 2]),
            GridFunction.constant(V1.grid, lams[j] - lams[j + 1]),
        ]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        worst = max(worst, local_residual(total, *terms, margin=margin))
    last = [dw[n - 1], w[n - 1] * w[n - 1], GridFunction.constant(V1.grid, lams[n - 1]), -V1]
    total = last[0] + last[1] + last[2] + last[3]
    return max(worst, local_residual(total, *last, margin=margin))


def adjoint_kernel(basis: JordanBasis) -> list[GridFunction]:
    """Basis of ``ker q^+`` dual to the ascending-order basis of ``ker q^-``.

    ``z_n`` solves ``sum_n z_n phi_n^(k) = delta_{k, N-1}`` for
    ``k = 0..N-1``. Values come from the cofactor form
    ``z_n = (-1)^(N-1+n) W(phi without phi_n) / W``, which keeps each ``z_n``
    accurate relative to its own size. Exact derivatives of the ``phi_n``
    beyond order ``N - 1`` give exact derivatives of the ``z_n`` by
    differentiating the system.
    """
    fs = basis.functions()
    n = len(fs)
    grid = basis.grid
    w = equilibrated_det(stack_derivatives(fs, n - 1))
    z0 = np.empty((grid.n_points, n), dtype=complex)
    for i in range(n):
        rest = fs[:i] + fs[i + 1 :]
        minor = equilibrated_det(stack_derivatives(rest, n - 2)) if rest else 1.0
        z0[:, i] = (-1) ** (n - 1 + i) * minor / w
    extra = max(0, min(len(f.jet) for f in fs) - (n - 1))
    if not extra:
        return [GridFunction(grid, z0[:, i]) for i in range(n)]
    d = stack_derivatives(fs, n - 1 + extra)  # [x, n, k]
    mt = np.transpose(d[:, :, :n], (0, 2, 1))  # [x, k, n]
    cscale = np.max(np.abs(mt), axis=1)
    cscale = np.where(cscale == 0, 1.0, cscale)
    rscale = np.max(np.abs(mt / cscale[:, None, :]), axis=2)
    rscale = np.where(rscale == 0, 1.0, rscale)
    a = mt / cscale[:, None, :] / rscale[:, :, None]
    zs = [z0]  # zs[m][:, i] is the m-th derivative of z_i
    for m in range(1, extra + 1):
        rhs = np.zeros((mt.shape[0], n), dtype=complex)
        for j in range(1, m + 1):
            shifted = np.transpose(d[:, :, j : j + n], (0, 2, 1))
            rhs = rhs - comb(m, j) * np.einsum("pkn,pn->pk", shifted, zs[m - j])
        zs.append(np.linalg.solve(a, (rhs / rscale)[:, :, None])[:, :, 0] / cscale)
    return [GridFunction(grid, zs[0][:, i], tuple(z[:, i] for z in zs[1:])) for i in range(n)]
