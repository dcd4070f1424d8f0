"""Linear ordinary differential operators with grid-function coefficients."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import make_interp_spline

from .gridfn import (
    DEFAULT_MARGIN,
    TAU_REAL,
    Grid,
    GridFunction,
    GridMismatchError,
    coarsen,
    derivatives,
    local_residual,
    same_grid,
    sup_ratio,
)

TAU_OP = 1e-6


@dataclass(frozen=True, eq=False)
class LinearDiffOperator:
    """``sum_k coeffs[k] * d^k/dx^k``."""

    coeffs: tuple[GridFunction, ...]

    def __post_init__(self):
        coeffs = tuple(self.coeffs)
        if not coeffs:
            raise ValueError("operator needs at least one coefficient")
        same_grid(*coeffs)
        if np.min(np.abs(coeffs[-1].values)) == 0.0:
            raise ValueError("leading coefficient vanishes on the grid")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_constants(cls, grid: Grid, constants: Sequence[complex]) -> LinearDiffOperator:
        return cls(tuple(GridFunction.constant(grid, c) for c in constants))

    @classmethod
    def identity(cls, grid: Grid) -> LinearDiffOperator:
        return cls.from_constants(grid, [1.0])

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def grid(self) -> Grid:
        return self.coeffs[0].grid

    def coefficient(self, k: int) -> GridFunction:
        if k > self.order:
            return GridFunction.constant(self.grid, 0.0)
        return self.coeffs[k]

    def is_real(self, tol: float = TAU_REAL) -> bool:
        scale = max(c.max_abs() for c in self.coeffs)
        return all(np.max(np.abs(c.imag)) <= tol * scale for c in self.coeffs)

    def scaled(self, s: complex) -> LinearDiffOperator:
        return LinearDiffOperator(tuple(c * s for c in self.coeffs))

    def __call__(self, f: GridFunction) -> GridFunction:
        return apply(self, f)

    def __matmul__(self, other: LinearDiffOperator) -> LinearDiffOperator:
        return compose(self, other)

    def __add__(self, other: LinearDiffOperator) -> LinearDiffOperator:
        n = max(self.order, other.order) + 1
        return LinearDiffOperator(
            tuple(self.coefficient(k) + other.coefficient(k) for k in range(n))
        )

    def __sub__(self, other: LinearDiffOperator) -> LinearDiffOperator:
        return self + other.scaled(-1.0)

    def __repr__(self):
        return f"LinearDiffOperator(order={self.order}, L={self.grid.half_width}, n={self.grid.n_points})"


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """``-d^2/dx^2 + V(x)`` with a real potential."""

    potential: GridFunction

    def __post_init__(self):
        if not self.potential.is_real():
            raise ValueError("Hamiltonian potential must be real-valued")
        object.__setattr__(self, "potential", GridFunction(self.potential.grid, self.potential.real))

    @property
    def grid(self) -> Grid:
        return self.potential.grid

    @cached_property
    def operator(self) -> LinearDiffOperator:
        g = self.grid
        zero = GridFunction.constant(g, 0.0)
        return LinearDiffOperator((self.potential, zero, GridFunction.constant(g, -1.0)))

    @cached_property
    def spline(self):
        """Septic interpolant of ``V`` for off-grid evaluation by the ODE solvers."""
        return make_interp_spline(self.grid.x, self.potential.real, k=7)

    def shifted_operator(self, lam: complex) -> LinearDiffOperator:
        """``h - lam`` as an operator."""
        g = self.grid
        return LinearDiffOperator(
            (self.potential - lam, GridFunction.constant(g, 0.0), GridFunction.constant(g, -1.0))
        )

    def __call__(self, f: GridFunction) -> GridFunction:
        return apply(self.operator, f)


def apply(op: LinearDiffOperator, f: GridFunction) -> GridFunction:
    if f.grid != op.grid:
        raise GridMismatchError("operator and function live on different grids")
    ds = derivatives(f, op.order)
    out = np.zeros(f.grid.n_points, dtype=complex)
    for c, d in zip(op.coeffs, ds):
        out += c.values * d.values
    return GridFunction(f.grid, out)


def apply_terms(op: LinearDiffOperator, f: GridFunction) -> list[GridFunction]:
    """The individual terms ``c_k f^(k)`` whose sum is ``apply(op, f)``."""
    if f.grid != op.grid:
        raise GridMismatchError("operator and function live on different grids")
    return [c * d for c, d in zip(op.coeffs, derivatives(f, op.order))]


def equation_residual(op: LinearDiffOperator, f: GridFunction, rhs: GridFunction | None = None, margin: float = DEFAULT_MARGIN) -> float:
    """Pointwise size of ``op f - rhs`` relative to the local magnitude of its terms.

    The scale is the running envelope of ``|f| + sum_k |c_k f^(k)| + |rhs|``,
    so the measure reflects the cancellation actually achieved wherever
    ``f`` lives on the exponential scale.
    """
    terms = apply_terms(op, f)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    diff = total if rhs is None else total - rhs
    extra = () if rhs is None else (rhs,)
    return local_residual(diff, f, *terms, *extra, margin=margin)


def compose(a: LinearDiffOperator, b: LinearDiffOperator) -> LinearDiffOperator:
    """Coefficients of ``a ∘ b`` by the Leibniz rule."""
    if a.grid != b.grid:
        raise GridMismatchError("operators live on different grids")
    n = a.order + b.order
    zero = GridFunction.constant(a.grid, 0.0)
    out = [zero] * (n + 1)
    bder = [derivatives(bj, a.order) for bj in b.coeffs]
    for i, ai in enumerate(a.coeffs):
        for j, dj in enumerate(bder):
            for l in range(i + 1):
                out[i - l + j] = out[i - l + j] + ai * dj[l] * comb(i, l)
    return LinearDiffOperator(tuple(out))


def compose_all(ops: Sequence[LinearDiffOperator]) -> LinearDiffOperator:
    """Product ``ops[0] ∘ ops[1] ∘ ...`` composed pairwise as a balanced tree."""
    ops = list(ops)
    if not ops:
        raise ValueError("nothing to compose")
    while len(ops) > 1:
        nxt = [compose(ops[i], ops[i + 1]) for i in range(0, len(ops) - 1, 2)]
        if len(ops) % 2:
            nxt.append(ops[-1])
        ops = nxt
    return ops[0]


def transpose(op: LinearDiffOperator) -> LinearDiffOperator:
    """Formal transpose ``sum_k (-d)^k ∘ c_k``."""
    n = op.order
    cder = [derivatives(c, k) for k, c in enumerate(op.coeffs)]
    out = []
    for l in range(n + 1):
        acc = GridFunction.constant(op.grid, 0.0)
        for k in range(l, n + 1):
            acc = acc + cder[k][k - l] * ((-1) ** k * comb(k, l))
        out.append(acc)
    return LinearDiffOperator(tuple(out))


def restrict(op: LinearDiffOperator, stride: int) -> LinearDiffOperator:
    """The operator with coefficients sampled on the grid coarsened by ``stride``."""
    return LinearDiffOperator(tuple(coarsen(c, stride) for c in op.coeffs))


def auto_stride(grid: Grid, total_order: int) -> int:
    """Grid coarsening used when a residual stacks ``total_order`` derivatives.

    Round-off in an order-k stencil grows like ``dx^-k``; above fourth order
    the check runs on every other sample, which keeps about 25 samples per
    width of the default test bumps.
    """
    stride = 1 if total_order <= 4 else 2
    while stride > 1 and ((grid.n_points - 1) % stride or (grid.n_points - 1) // stride < 64):
        stride //= 2
    return stride


def operator_distance(a: LinearDiffOperator, b: LinearDiffOperator, margin: float = DEFAULT_MARGIN) -> float:
    """Coefficientwise interior max difference relative to the largest coefficient."""
    if a.grid != b.grid:
        raise GridMismatchError("operators live on different grids")
    sl = a.grid.interior(margin)
    n = max(a.order, b.order) + 1
    diff = max(np.max(np.abs((a.coefficient(k) - b.coefficient(k)).values[sl])) for k in range(n))
    scale = max(
        max(np.max(np.abs(a.coefficient(k).values[sl])), np.max(np.abs(b.coefficient(k).values[sl])))
        for k in range(n)
    )
    return float(diff / scale) if scale > 0 else float(diff)


def operators_equal(a: LinearDiffOperator, b: LinearDiffOperator, tol: float = TAU_OP, margin: float = DEFAULT_MARGIN) -> bool:
    return operator_distance(a, b, margin) < tol


def polynomial_of(h: Hamiltonian | LinearDiffOperator, coeffs: Sequence[complex]) -> LinearDiffOperator:
    """``sum_k coeffs[k] h^k`` with coefficients in descending powers (numpy order)."""
    hop = h.operator if isinstance(h, Hamiltonian) else h
    g = hop.grid
    result = LinearDiffOperator.from_constants(g, [coeffs[0]])
    for c in coeffs[1:]:
        result = compose(hop, result) + LinearDiffOperator.from_constants(g, [c])
    return result


def gaussian_test_set(grid: Grid, count: int = 5, width: float | None = None) -> list[GridFunction]:
    """Gaussian bumps centred in the middle half of the window.

    Widths default to ``L/20`` so the bumps are negligible in the boundary
    margin used by the residual measures.
    """
    L = grid.half_width
    w = width if width is not None else L / 20.0
    centers = np.linspace(-L / 2, L / 2, count)
    a = 1.0 / (2 * w * w)
    return [GridFunction.from_exp_poly(grid, [([1.0], [-a * c * c, 2 * a * c, -a])]) for c in centers]


def apply_chain(ops: Sequence[LinearDiffOperator], f: GridFunction) -> GridFunction:
    """``ops[0](ops[1](...ops[-1](f)))``."""
    for op in reversed(ops):
        f = apply(op, f)
    return f


def product_residual(
    lhs: Sequence[LinearDiffOperator],
    rhs: Sequence[LinearDiffOperator],
    test_set: Sequence[GridFunction] | None = None,
    margin: float = DEFAULT_MARGIN,
    stride: int | None = None,
) -> float:
    """Worst ``max|(L - R) f| / max|L f|`` for operator products ``L``, ``R``.

    Products are applied factor by factor; with ``stride=None`` the grid is
    coarsened per :func:`auto_stride` when the products are of high order.
    """
    grid = lhs[0].grid
    if test_set is None:
        test_set = gaussian_test_set(grid)
    if not test_set:
        raise ValueError("empty test set")
    if stride is None:
        stride = auto_stride(grid, max(sum(o.order for o in lhs), sum(o.order for o in rhs)))
    if stride > 1:
        lhs = [restrict(o, stride) for o in lhs]
        rhs = [restrict(o, stride) for o in rhs]
        test_set = [coarsen(f, stride) for f in test_set]
    worst = 0.0
    for f in test_set:
        a = apply_chain(lhs, f)
        b = apply_chain(rhs, f)
        worst = max(worst, sup_ratio(a - b, a, margin))
    return worst


def intertwining_residual(
    q: LinearDiffOperator,
    hplus: Hamiltonian | LinearDiffOperator,
    hminus: Hamiltonian | LinearDiffOperator,
    test_set: Sequence[GridFunction] | None = None,
    margin: float = DEFAULT_MARGIN,
    stride: int | None = None,
) -> float:
    """Worst relative size of ``(q h+ - h- q) f`` over the test functions."""
    hp = hplus.operator if isinstance(hplus, Hamiltonian) else hplus
    hm = hminus.operator if isinstance(hminus, Hamiltonian) else hminus
    if test_set is not None and not test_set:
        raise ValueError("empty test set")
    return product_residual([q, hp], [hm, q], test_set, margin, stride)


# CSV ------------------------------------------------------------------------


def write_operator_csv(op: LinearDiffOperator, path) -> Path:
    path = Path(path)
    header = ["x"]
    for k in range(op.order + 1):
        header += [f"c{k}_re", f"c{k}_im"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, xi in enumerate(op.grid.x):
            row = [repr(float(xi))]
            for c in op.coeffs:
                row += [repr(float(c.values[i].real)), repr(float(c.values[i].imag))]
            w.writerow(row)
    return path


def read_operator_csv(path) -> LinearDiffOperator:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = Grid(float(data[-1, 0]), data.shape[0])
    ncoef = (data.shape[1] - 1) // 2
    return LinearDiffOperator(
        tuple(GridFunction(grid, data[:, 1 + 2 * k] + 1j * data[:, 2 + 2 * k]) for k in range(ncoef))
    )
