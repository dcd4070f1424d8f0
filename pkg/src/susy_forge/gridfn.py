"""Uniform-grid functions and high-order finite-difference calculus.

Every function of ``x`` handled by the package is a :class:`GridFunction`:
complex samples on a symmetric uniform grid ``[-L, L]`` with an odd number
of points (so ``x = 0`` is a node).  Derivatives use central stencils of
accuracy order ``p`` (default 8) in the interior and one-sided stencils of
the same order near the ends.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from math import comb, factorial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.ndimage import maximum_filter1d

DEFAULT_ACCURACY = 8
DEFAULT_MARGIN = 0.1
# exact derivatives kept by closed-form functions
JET_ORDER = 12
TAU_REAL = 1e-9
TAU_ZERO = 1e-12
# half-width (in samples) of the running max used as a local magnitude scale
ENVELOPE_HALF_WIDTH = 10


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    half_width: float
    n_points: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.n_points < 64 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 64")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = np.linspace(-self.half_width, self.half_width, self.n_points)
        x[self.n_points // 2] = 0.0
        x.flags.writeable = False
        return x

    @property
    def center_index(self) -> int:
        return self.n_points // 2

    def interior(self, margin: float = DEFAULT_MARGIN) -> slice:
        """Index slice excluding ``margin`` (fraction of samples) at each end."""
        k = int(round(margin * self.n_points))
        return slice(k, self.n_points - k)

    def index_of(self, x0: float) -> int:
        return int(np.argmin(np.abs(self.x - x0)))


def default_grid() -> Grid:
    return Grid(12.0, 2049)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples of a function on a :class:`Grid`.

    ``jet`` optionally carries exact samples of ``f', f'', ...``. When
    present, :func:`derivative` returns them instead of finite differences.
    Sums, scalar multiples and products of functions with jets keep the jet
    (truncated to the shorter one); other operations drop it.
    """

    grid: Grid
    values: np.ndarray = field(repr=False)
    jet: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} samples, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("GridFunction values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        jet = []
        for d in self.jet:
            d = np.array(d, dtype=complex)
            if d.shape != v.shape:
                raise ValueError("jet entries must match the sample shape")
            if not np.all(np.isfinite(d)):
                break
            d.flags.writeable = False
            jet.append(d)
        object.__setattr__(self, "jet", tuple(jet))

    @classmethod
    def from_callable(cls, grid: Grid, func: Callable[[np.ndarray], np.ndarray]) -> GridFunction:
        return cls(grid, np.broadcast_to(func(grid.x), grid.x.shape))

    @classmethod
    def from_exp_poly(cls, grid: Grid, terms: Sequence[tuple[Sequence[complex], Sequence[complex]]], order: int = JET_ORDER) -> GridFunction:
        """``sum p(x) exp(e(x))`` with exact derivatives up to ``order``.

        Each term is a pair of ascending coefficient lists ``(p, e)``.
        """
        x = grid.x
        values = np.zeros(grid.n_points, dtype=complex)
        jet = [np.zeros(grid.n_points, dtype=complex) for _ in range(order)]
        with np.errstate(over="ignore", invalid="ignore"):
            for pc, ec in terms:
                p = P.Polynomial(np.asarray(pc, dtype=complex))
                e = P.Polynomial(np.asarray(ec, dtype=complex))
                ee = np.exp(e(x))
                de = e.deriv()
                values += p(x) * ee
                for m in range(order):
                    p = p.deriv() + p * de
                    jet[m] += p(x) * ee
        return cls(grid, values, tuple(jet))

    @classmethod
    def constant(cls, grid: Grid, value: complex) -> GridFunction:
        return cls(grid, np.full(grid.n_points, value, dtype=complex))

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag

    def max_abs(self, margin: float = 0.0) -> float:
        return float(np.max(np.abs(self.values[self.grid.interior(margin)])))

    def is_real(self, tol: float = TAU_REAL) -> bool:
        scale = np.max(np.abs(self.values))
        return bool(np.max(np.abs(self.values.imag)) <= tol * scale)

    def to_real(self, tol: float = TAU_REAL) -> GridFunction:
        """Drop the imaginary part after checking it is negligible."""
        if not self.is_real(tol):
            raise ValueError(
                f"not real-valued (max |Im| = {np.max(np.abs(self.imag)):.3e})"
            )
        return GridFunction(self.grid, self.values.real, tuple(d.real for d in self.jet))

    def conj(self) -> GridFunction:
        return GridFunction(self.grid, self.values.conj(), tuple(d.conj() for d in self.jet))

    def __call__(self, x0: float) -> complex:
        return complex(self.values[self.grid.index_of(x0)])

    # arithmetic -----------------------------------------------------------
    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridMismatchError("GridFunctions live on different grids")
            return other.values
        return other

    def _linear_jet(self, other, sign):
        if not isinstance(other, GridFunction):
            return self.jet
        return tuple(a + sign * b for a, b in zip(self.jet, other.jet))

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other), self._linear_jet(other, 1))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other), self._linear_jet(other, -1))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values, tuple(-d for d in self.jet))

    def __mul__(self, other):
        values = self.values * self._other(other)
        if not isinstance(other, GridFunction):
            if np.ndim(other):
                return GridFunction(self.grid, values)
            return GridFunction(self.grid, values, tuple(d * other for d in self.jet))
        k = min(len(self.jet), len(other.jet))
        a = (self.values,) + self.jet[:k]
        b = (other.values,) + other.jet[:k]
        jet = tuple(sum(comb(m, j) * a[j] * b[m - j] for j in range(m + 1)) for m in range(1, k + 1))
        return GridFunction(self.grid, values, jet)

    __rmul__ = __mul__

    def __truediv__(self, other):
        values = self.values / self._other(other)
        if isinstance(other, GridFunction) or np.ndim(other):
            return GridFunction(self.grid, values)
        return GridFunction(self.grid, values, tuple(d / other for d in self.jet))

    def __rtruediv__(self, other):
        return GridFunction(self.grid, self._other(other) / self.values)

    def __neg__(self):
        return GridFunction(self.grid, -self.values, tuple(-d for d in self.jet))

    def __pow__(self, k):
        return GridFunction(self.grid, self.values**k)

    def __repr__(self):
        return f"GridFunction(L={self.grid.half_width}, n={self.grid.n_points})"


def same_grid(*fs: GridFunction) -> Grid:
    grid = fs[0].grid
    for f in fs[1:]:
        if f.grid != grid:
            raise GridMismatchError("GridFunctions live on different grids")
    return grid


# finite-difference stencils -------------------------------------------------


def _fd_weights(order: int, offsets: Sequence[int]) -> list[Fraction]:
    """Exact weights of the ``order``-th derivative at 0 on integer ``offsets``.

    Solves the moment conditions ``sum_j w_j o_j^k = k! [k == order]`` in
    rational arithmetic.
    """
    n = len(offsets)
    a = [[Fraction(o) ** k for o in offsets] for k in range(n)]
    b = [Fraction(factorial(order)) if k == order else Fraction(0) for k in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col] / a[col][col]
                a[r] = [ar - f * ac for ar, ac in zip(a[r], a[col])]
                b[r] -= f * b[col]
    return [b[i] / a[i][i] for i in range(n)]


def _stencil_radius(order: int, accuracy: int) -> int:
    return (order + 1) // 2 - 1 + accuracy // 2


def _stencil_width(order: int, accuracy: int) -> int:
    return max(order + accuracy, 2 * _stencil_radius(order, accuracy) + 1)


@lru_cache(maxsize=None)
def _stencil_plan(order: int, accuracy: int):
    """Central weights plus one-sided weights for each near-boundary offset."""
    r = _stencil_radius(order, accuracy)
    central = np.array([float(w) for w in _fd_weights(order, list(range(-r, r + 1)))])
    width = _stencil_width(order, accuracy)
    left = []
    for i in range(r):
        offs = [j - i for j in range(width)]
        left.append(np.array([float(w) for w in _fd_weights(order, offs)]))
    return r, central, width, left


def derivative(f: GridFunction, order: int = 1, accuracy: int = DEFAULT_ACCURACY) -> GridFunction:
    """``order``-th derivative (1..4) of ``f`` by finite differences.

    Exact jet samples are returned instead when ``f`` carries them.
    """
    if not 1 <= order <= 4:
        raise ValueError("derivative order must be between 1 and 4 per call")
    if order <= len(f.jet):
        return GridFunction(f.grid, f.jet[order - 1], f.jet[order:])
    if accuracy < 2 or accuracy % 2:
        raise ValueError("accuracy order must be a positive even integer")
    n = f.grid.n_points
    if n < _stencil_width(order, accuracy):
        raise ValueError("grid too coarse for the requested stencil")
    r, central, width, left = _stencil_plan(order, accuracy)
    v = f.values
    if np.all(v == v[0]):
        # constants differentiate to exactly zero rather than to stencil round-off
        return GridFunction(f.grid, np.zeros(n, dtype=complex))
    out = np.zeros(n, dtype=complex)
    for k, wk in enumerate(central):
        out[r : n - r] += wk * v[k : n - 2 * r + k]
    head = v[:width]
    tail = v[n - width :]
    sign = (-1) ** order
    for i, w in enumerate(left):
        out[i] = w @ head
        # mirror image of the left stencil for the right end
        out[n - 1 - i] = sign * (w @ tail[::-1])
    return GridFunction(f.grid, out / f.grid.spacing**order)


def derivatives(f: GridFunction, upto: int, accuracy: int = DEFAULT_ACCURACY) -> list[GridFunction]:
    """``[f, f', ..., f^(upto)]``; orders above 4 are chained from the 4th."""
    out = [f]
    for k in range(1, upto + 1):
        if k <= len(f.jet):
            out.append(GridFunction(f.grid, f.jet[k - 1], f.jet[k:]))
        elif k <= 4:
            out.append(derivative(f, k, accuracy))
        else:
            out.append(derivative(out[4], k - 4, accuracy))
    return out


def stack_derivatives(fs: Sequence[GridFunction], upto: int) -> np.ndarray:
    """Array of shape ``(n_points, len(fs), upto + 1)`` holding ``fs[i]^(k)``."""
    same_grid(*fs)
    return np.stack(
        [np.stack([d.values for d in derivatives(f, upto)], axis=-1) for f in fs],
        axis=1,
    )


def equilibrated_det(m: np.ndarray) -> np.ndarray:
    """Batched determinant with per-row scaling against overflow and pivot bias."""
    scale = np.max(np.abs(m), axis=-1, keepdims=True)
    scale = np.where(scale == 0, 1.0, scale)
    return np.linalg.det(m / scale) * np.prod(scale[..., 0], axis=-1)


def wronskian(fs: Sequence[GridFunction]) -> GridFunction:
    """Pointwise Wronskian; row ``i`` holds ``fs[i]`` and its derivatives."""
    if not fs:
        raise ValueError("wronskian needs at least one function")
    if len(fs) == 1:
        return fs[0]
    k = len(fs)
    m = stack_derivatives(fs, k - 1)
    return GridFunction(fs[0].grid, equilibrated_det(m))


def coarsen(f: GridFunction, stride: int) -> GridFunction:
    """Every ``stride``-th sample of ``f`` on the correspondingly coarser grid."""
    n = f.grid.n_points
    if stride < 1 or (n - 1) % stride:
        raise ValueError(f"stride {stride} does not divide the grid")
    return GridFunction(Grid(f.grid.half_width, (n - 1) // stride + 1), f.values[::stride], tuple(d[::stride] for d in f.jet))


def log_derivative(f: GridFunction) -> GridFunction:
    return derivative(f, 1) / f


def count_sign_changes(f: GridFunction, tau_real: float = TAU_REAL, tau_zero: float = TAU_ZERO) -> int:
    """Strict sign changes of ``Re f`` after dropping near-zero samples."""
    if not f.is_real(tau_real):
        raise ValueError("not real-valued")
    v = f.real
    keep = np.abs(v) >= tau_zero * np.max(np.abs(v))
    s = np.sign(v[keep])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def zero_locations(f: GridFunction) -> list[float]:
    """Approximate zero crossings of ``Re f`` by linear interpolation."""
    v = f.real
    x = f.x
    idx = np.nonzero(np.sign(v[1:]) * np.sign(v[:-1]) < 0)[0]
    return [float(x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i])) for i in idx]


# residual measures ----------------------------------------------------------


def envelope(values: np.ndarray, half_width: int = ENVELOPE_HALF_WIDTH) -> np.ndarray:
    """Running maximum of ``|values|``; a local magnitude scale that ignores nodes."""
    return maximum_filter1d(np.abs(values), size=2 * half_width + 1, mode="nearest")


def sup_ratio(diff, reference, margin: float = DEFAULT_MARGIN) -> float:
    """``max|diff| / max|reference|`` over the interior."""
    diff = getattr(diff, "values", diff)
    reference = getattr(reference, "values", reference)
    n = len(diff)
    k = int(round(margin * n))
    sl = slice(k, n - k)
    den = float(np.max(np.abs(reference[sl])))
    num = float(np.max(np.abs(diff[sl])))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def local_residual(diff, *terms, margin: float = DEFAULT_MARGIN) -> float:
    """Interior max of ``|diff|`` divided by the local envelope of ``Σ|terms|``.

    This is the relative measure used for pointwise identities between
    functions whose magnitude varies over many decades across the window.
    """
    diff = np.asarray(getattr(diff, "values", diff))
    scale = np.zeros(diff.shape)
    for t in terms:
        t = getattr(t, "values", t)
        scale = scale + np.abs(np.broadcast_to(t, diff.shape))
    env = envelope(scale)
    n = len(diff)
    k = int(round(margin * n))
    sl = slice(k, n - k)
    num = np.abs(diff[sl])
    den = env[sl]
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    ratio[(den == 0) & (num > 0)] = np.inf
    return float(np.max(ratio))


# CSV ------------------------------------------------------------------------


def write_csv(f: GridFunction, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "re", "im"])
        for xi, vi in zip(f.x, f.values):
            w.writerow([repr(float(xi)), repr(float(vi.real)), repr(float(vi.imag))])
    return path


def read_csv(path) -> GridFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    x = data[:, 0]
    grid = Grid(float(x[-1]), len(x))
    if not np.allclose(grid.x, x, rtol=0, atol=1e-9 * grid.half_width):
        raise ValueError(f"{path}: samples are not a symmetric uniform grid")
    return GridFunction(grid, data[:, 1] + 1j * data[:, 2])
