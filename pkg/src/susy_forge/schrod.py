"""Formal eigenfunctions, associated functions, bound states and potential-class tests."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.polynomial import hermite as _herm
from scipy.interpolate import make_interp_spline

from .diffop import Hamiltonian, apply_terms
from .gridfn import TAU_ZERO, Grid, GridFunction, coarsen, count_sign_changes, derivative, local_residual

OVERFLOW_LIMIT = 1e300
SUBSTEPS = 4
WRONSKIAN_TOL = 1e-6
DEGENERATE_WRONSKIAN = 1e-12
NORMALIZABLE_TAIL = 0.15
NORMALIZABLE_SLOPE = 1e-3


class SolutionOverflowError(ArithmeticError):
    pass


class PartialSpectrumWarning(UserWarning):
    pass


# transformation-function specs -------------------------------------------------


@dataclass(frozen=True)
class ClosedForm:
    name: str
    params: tuple[complex, ...] = ()


@dataclass(frozen=True)
class InitialData:
    psi0: complex
    dpsi0: complex


@dataclass(frozen=True, eq=False)
class ParticularSolution:
    """Particular solution over ``lower`` plus the homogeneous piece with data ``init``."""

    lower: GridFunction
    init: tuple[complex, complex] = (0.0, 0.0)


Source = Union[ClosedForm, InitialData, ParticularSolution]


# each closed form maps its parameters to terms (p, e) meaning p(x) exp(e(x)),
# both as ascending coefficient lists


def _exp(k):
    return [([1.0], [0.0, k])]


def _cosh(k=1.0):
    return [([0.5], [0.0, k]), ([0.5], [0.0, -k])]


def _sinh(k=1.0):
    return [([0.5], [0.0, k]), ([-0.5], [0.0, -k])]


def _hermite(n):
    n = int(round(np.real(n)))
    c = np.zeros(n + 1)
    c[n] = 1.0
    return [(_herm.herm2poly(c), [0.0, 0.0, -0.5])]


def _poly(*coeffs):
    return [(list(coeffs) or [0.0], [0.0])]


def _exp_poly(k, *coeffs):
    return [(list(coeffs) or [0.0], [0.0, k])]


CLOSED_FORMS: dict[str, Callable[..., list]] = {
    "exp": _exp,
    "cosh": _cosh,
    "sinh": _sinh,
    "hermite": _hermite,
    "poly": _poly,
    "exp_poly": _exp_poly,
}
"""Closed-form transformation functions.

``exp(k)`` is ``e^{kx}``; ``cosh(k)``/``sinh(k)`` are ``cosh kx``/``sinh kx``;
``hermite(n)`` is ``H_n(x) e^{-x^2/2}`` with physicists' ``H_n``;
``poly(c0, c1, ...)`` is ``sum c_j x^j``; ``exp_poly(k, c0, ...)`` is
``e^{kx} poly(c0, ...)``.
"""


@dataclass(frozen=True, eq=False)
class TransformationFunctionSpec:
    lam: complex
    chain_index: int
    source: Source

    def __post_init__(self):
        if self.chain_index < 0:
            raise ValueError("chain_index must be nonnegative")
        if self.chain_index == 0 and isinstance(self.source, ParticularSolution):
            raise ValueError("an eigenfunction cannot be a particular solution")
        # zero data is allowed for associated functions: the particular solution alone
        if self.chain_index == 0 and isinstance(self.source, InitialData) and self.source.psi0 == 0 and self.source.dpsi0 == 0:
            raise ValueError("initial data must not both vanish")


def realize(spec: TransformationFunctionSpec, h: Hamiltonian, lower: GridFunction | None = None) -> GridFunction:
    """Sample the function described by ``spec`` on the grid of ``h``.

    ``lower`` is the previous chain member; it is required for associated
    functions given by initial data.
    """
    src = spec.source
    grid = h.grid
    if isinstance(src, ClosedForm):
        try:
            fn = CLOSED_FORMS[src.name]
        except KeyError:
            raise ValueError(f"unknown closed form {src.name!r}; known: {sorted(CLOSED_FORMS)}") from None
        return GridFunction.from_exp_poly(grid, fn(*src.params))
    if isinstance(src, ParticularSolution):
        u = solve_associated(h, spec.lam, src.lower)
        if any(src.init):
            u = u + solve_formal(h, spec.lam, src.init)
        return u
    if spec.chain_index == 0:
        return solve_formal(h, spec.lam, (src.psi0, src.dpsi0))
    if lower is None:
        raise ValueError("associated function needs the lower chain member")
    u = solve_associated(h, spec.lam, lower)
    return u + solve_formal(h, spec.lam, (src.psi0, src.dpsi0)) if (src.psi0 or src.dpsi0) else u


# ODE integration ----------------------------------------------------------------


def _fine_samples(grid: Grid, spline, substeps: int):
    """Values of ``spline`` at every half sub-step from 0 outward, both directions."""
    m = (grid.n_points - 1) // 2
    t = np.arange(2 * substeps * m + 1) * (grid.spacing / (2 * substeps))
    return spline(t), spline(-t)


def _integrate_outward(grid, coef_pos, coef_neg, y0, forcing_pos=None, forcing_neg=None, substeps=SUBSTEPS):
    """RK4 for ``u'' = a(x) u - f(x)`` from ``x = 0`` to both ends of the grid.

    ``coef_*`` and ``forcing_*`` hold samples at spacing ``h/(2*substeps)``
    along ``|x|``. Returns ``(u, u')`` on the grid.
    """
    n = grid.n_points
    m = (n - 1) // 2
    u = np.empty(n, dtype=complex)
    p = np.empty(n, dtype=complex)
    u[m], p[m] = y0
    for direction, a, f in ((1, coef_pos, forcing_pos), (-1, coef_neg, forcing_neg)):
        s = direction * grid.spacing / substeps
        half = s / 2
        a = a.tolist()
        f = f.tolist() if f is not None else None
        uu, pp = complex(y0[0]), complex(y0[1])
        j = 0
        for i in range(1, m + 1):
            for _ in range(substeps):
                a0, a1, a2 = a[j], a[j + 1], a[j + 2]
                if f is None:
                    f0 = f1 = f2 = 0.0
                else:
                    f0, f1, f2 = f[j], f[j + 1], f[j + 2]
                k1u, k1p = pp, a0 * uu - f0
                k2u, k2p = pp + half * k1p, a1 * (uu + half * k1u) - f1
                k3u, k3p = pp + half * k2p, a1 * (uu + half * k2u) - f1
                k4u, k4p = pp + s * k3p, a2 * (uu + s * k3u) - f2
                uu += s / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
                pp += s / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
                j += 2
            if abs(uu) > OVERFLOW_LIMIT or abs(pp) > OVERFLOW_LIMIT:
                raise SolutionOverflowError("solution overflow; reduce L or rescale")
            u[m + direction * i] = uu
            p[m + direction * i] = pp
    return u, p


def _shifted_coefficient(h: Hamiltonian, lam: complex, substeps: int):
    vp, vn = _fine_samples(h.grid, h.spline, substeps)
    return vp - lam, vn - lam


def _formal_pair(h: Hamiltonian, lam: complex, init, substeps=SUBSTEPS):
    ap, an = _shifted_coefficient(h, lam, substeps)
    return _integrate_outward(h.grid, ap, an, init, substeps=substeps)


def solve_formal(h: Hamiltonian, lam: complex, init: tuple[complex, complex]) -> GridFunction:
    """Formal solution of ``-psi'' + V psi = lam psi`` with ``psi(0), psi'(0) = init``.

    Integrates outward from ``x = 0`` with RK4 at a quarter of the grid
    spacing; the potential is evaluated off-grid through a septic spline.
    """
    if init[0] == 0 and init[1] == 0:
        raise ValueError("initial data must not both vanish")
    u, _ = _formal_pair(h, lam, init)
    return GridFunction(h.grid, u)


def homogeneous_wronskian_drift(h: Hamiltonian, lam: complex, margin: float = 0.1) -> float:
    """Relative drift of ``W(y1, y2)`` for the pair with unit initial data."""
    u1, p1 = _formal_pair(h, lam, (1.0, 0.0))
    u2, p2 = _formal_pair(h, lam, (0.0, 1.0))
    w = u1 * p2 - p1 * u2
    scale = np.abs(u1 * p2) + np.abs(p1 * u2)
    sl = h.grid.interior(margin)
    w0 = w[h.grid.center_index]
    if abs(w0) < DEGENERATE_WRONSKIAN:
        raise ValueError("degenerate homogeneous pair")
    return float(np.max(np.abs(w[sl] - w0) / scale[sl]))


def solve_associated(h: Hamiltonian, lam: complex, lower: GridFunction) -> GridFunction:
    """Particular solution ``u`` of ``(h - lam) u = lower`` with ``u(0) = u'(0) = 0``.

    This is the variation-of-parameters solution built on the homogeneous
    pair with unit initial data at the origin, evaluated by integrating the
    forced system outward so that no exponentially large terms cancel.
    """
    if lower.grid != h.grid:
        raise ValueError("lower function lives on a different grid")
    drift = homogeneous_wronskian_drift(h, lam)
    if drift > WRONSKIAN_TOL:
        raise ValueError(f"homogeneous Wronskian not constant (relative drift {drift:.2e})")
    grid = h.grid
    ap, an = _shifted_coefficient(h, lam, SUBSTEPS)
    spl = make_interp_spline(grid.x, lower.values, k=7)
    fp, fn = _fine_samples(grid, spl, SUBSTEPS)
    u, _ = _integrate_outward(grid, ap, an, (0.0, 0.0), fp, fn)
    return GridFunction(grid, u)


# bound states ----------------------------------------------------------------------


class BoundStateList(list):
    """List of ``(E, psi)`` pairs; ``complete`` is False when fewer were found than asked."""

    complete: bool = True


def _numerov(k2: np.ndarray, h: float, reverse: bool = False) -> np.ndarray:
    """Numerov solution of ``psi'' = -k2 psi`` with a Dirichlet zero at the start."""
    if reverse:
        return _numerov(k2[::-1], h)[::-1]
    n = len(k2)
    c = 1.0 + h * h * k2 / 12.0
    psi = np.zeros(n)
    psi[1] = 1e-30
    for i in range(1, n - 1):
        psi[i + 1] = ((12.0 - 10.0 * c[i]) * psi[i] - c[i - 1] * psi[i - 1]) / c[i + 1]
        if abs(psi[i + 1]) > 1e100:
            psi[: i + 2] *= 1e-100
    return psi


def _node_count(v: np.ndarray, energy: float, h: float) -> int:
    psi = _numerov(energy - v, h)
    s = np.sign(psi[1:])
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def bound_states(h: Hamiltonian, count: int, tol: float = 1e-12) -> BoundStateList:
    """Lowest ``count`` Dirichlet eigenpairs on ``[-L, L]`` by node-counting bisection.

    Only levels below ``min(V(-L), V(L))`` are accepted as bound states of the
    window; if fewer exist the returned list is partial and a
    :class:`PartialSpectrumWarning` is issued.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    v = h.potential.real
    dx = h.grid.spacing
    e_lo = float(np.min(v))
    e_top = float(min(v[0], v[-1]))
    available = _node_count(v, e_top, dx)
    found = min(count, available)
    out = BoundStateList()
    for j in range(found):
        lo, hi = e_lo, e_top
        while hi - lo > tol * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            if _node_count(v, mid, dx) >= j + 1:
                hi = mid
            else:
                lo = mid
        energy = 0.5 * (lo + hi)
        out.append((energy, _eigenfunction(h, v, energy)))
        e_lo = energy
    if found < count:
        out.complete = False
        warnings.warn(
            f"only {found} of {count} bound states lie below the window edge potential",
            PartialSpectrumWarning,
            stacklevel=2,
        )
    return out


def _eigenfunction(h: Hamiltonian, v: np.ndarray, energy: float) -> GridFunction:
    dx = h.grid.spacing
    n = len(v)
    k2 = energy - v
    left = _numerov(k2, dx)
    right = _numerov(k2, dx, reverse=True)
    allowed = np.nonzero(k2 >= 0)[0]
    m = int(allowed[-1]) if allowed.size else int(np.argmin(v))
    m = min(max(m, n // 8), n - n // 8)
    # step off an accidental node of either piece
    while abs(right[m]) < 1e-12 * np.max(np.abs(right[m:])) or abs(left[m]) < 1e-12 * np.max(np.abs(left[: m + 1])):
        m -= 1
    psi = np.concatenate([left[: m + 1], right[m + 1 :] * (left[m] / right[m])])
    psi /= np.max(np.abs(psi))
    first = np.nonzero(np.abs(psi) > 1e-3)[0][0]
    if psi[first] < 0:
        psi = -psi
    return GridFunction(h.grid, psi)


# normalizability and class K -------------------------------------------------------


def normalizable_at_infinity(f: GridFunction, tail: float = NORMALIZABLE_TAIL) -> tuple[bool, bool]:
    """``(at_plus, at_minus)`` from the outward slope of ``log|f|`` on each tail."""
    x = f.x
    a = np.abs(f.values)
    k = max(4, int(round(tail * len(x))))
    verdict = []
    for sl, outward in ((slice(len(x) - k, None), 1.0), (slice(0, k), -1.0)):
        xs, ys = x[sl], a[sl]
        ok = ys > 1e-300
        if np.count_nonzero(ok) < 4:
            warnings.warn("function underflows on a tail; treating it as normalizable there", stacklevel=2)
            verdict.append(True)
            continue
        slope = np.polyfit(xs[ok], np.log(ys[ok]), 1)[0] * outward
        verdict.append(bool(slope < -NORMALIZABLE_SLOPE))
    return verdict[0], verdict[1]


@dataclass
class ClassKReport:
    cond1_real_smooth: bool
    cond2_positive_tail: bool
    r0: float | None
    epsilon: float
    cond3_bounded: bool
    cond3_status: str
    cond3_supremum: float
    cond3_quartile_sups: tuple[float, float] = (float("nan"), float("nan"))
    notes: list[str] = field(default_factory=list)

    @property
    def in_class_K(self) -> bool:
        return self.cond1_real_smooth and self.cond2_positive_tail and self.cond3_bounded


def class_k_check(V: GridFunction, tail_fraction: float = 0.25, growth_tol: float = 0.1) -> ClassKReport:
    """Window test of the positive-tail potential class.

    The boundedness verdict compares the supremum of the weighted derivative
    expression on the outermost quarter of each tail with the quarter inside
    it; growth above ``growth_tol`` counts as unbounded.
    """
    if not 0 < tail_fraction < 0.5:
        raise ValueError("tail_fraction must lie in (0, 0.5)")
    notes: list[str] = []
    x = V.x
    n = len(x)
    k = int(round(tail_fraction * n))
    cond1 = V.is_real()
    if not cond1:
        notes.append("potential is not real-valued")
    v = V.real
    tails = np.r_[0:k, n - k : n]
    eps = 0.5 * float(np.min(v[tails]))
    r0 = None
    cond2 = eps > 0
    if cond2:
        bad = np.nonzero(v < eps)[0]
        if bad.size == 0:
            r0 = float(x[n // 2 + 1])
        else:
            r0 = float(np.max(np.abs(x[bad]))) + V.grid.spacing
        if r0 > x[-1] - V.grid.spacing:
            cond2 = False
    if not cond2:
        notes.append("condition 2 fails: no positive lower bound on the tails")

    start = r0 if cond2 else float(x[n - k])
    absv = np.abs(v)
    if np.any(absv[tails] <= TAU_ZERO * np.max(absv)):
        notes.append("potential vanishes on the tail; condition 3 indeterminate")
        return ClassKReport(cond1, cond2, r0, eps, False, "indeterminate", float("nan"), notes=notes)

    d1 = derivative(V, 1).real
    d2 = derivative(V, 2).real
    weight = d1**2 / absv**3 + np.abs(d2) / absv**2
    root = np.sqrt(absv)
    # cumulative trapezoid outward from +/- start
    i0 = int(np.searchsorted(x, start))
    j0 = int(np.searchsorted(x, -start, side="right")) - 1
    expr = np.full(n, np.nan)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (root[i0 + 1 :] + root[i0:-1]) * np.diff(x[i0:]))])
    expr[i0:] = cum**2 * weight[i0:]
    rev = np.concatenate([[0.0], np.cumsum(0.5 * (root[:j0][::-1] + root[1 : j0 + 1][::-1]) * np.diff(x[: j0 + 1])[::-1])])
    expr[: j0 + 1] = (rev**2 * weight[: j0 + 1][::-1])[::-1]

    edge = 4  # one-sided stencil samples
    q = max(1, k // 4)
    outer = np.r_[edge:q, n - q : n - edge]
    inner = np.r_[q : 2 * q, n - 2 * q : n - q]
    sup_outer = float(np.nanmax(expr[outer]))
    sup_inner = float(np.nanmax(expr[inner]))
    bounded = bool(np.isfinite(sup_outer) and sup_outer <= (1 + growth_tol) * sup_inner)
    supremum = float(np.nanmax(expr[np.r_[edge : n - edge]]))
    if not bounded:
        notes.append("weighted derivative expression grows toward the window edge")
    return ClassKReport(
        cond1,
        cond2,
        r0,
        eps,
        bounded,
        "bounded" if bounded else "unbounded",
        supremum,
        (sup_inner, sup_outer),
        notes,
    )


def chain_residuals(h: Hamiltonian, lam: complex, chain: list[GridFunction], margin: float = 0.1) -> list[tuple[float, float]]:
    """Per member ``i``: pointwise sizes of ``(h-lam)^{i+1} psi_i`` and ``(h-lam)^i psi_i``.

    Powers are applied one factor at a time. Each application multiplies
    round-off by roughly ``1/dx^2``, so member ``i`` is checked on the grid
    coarsened by ``2^i`` (kept at 65 samples or more). Both images are
    divided by the local envelope of ``|psi_i| + |psi_i''| + |(V - lam) psi_i|``;
    the first entry should be small and the second should not.
    """
    out = []
    for i, psi in enumerate(chain):
        stride = 2**i
        while stride > 1 and ((h.grid.n_points - 1) % stride or (h.grid.n_points - 1) // stride < 64):
            stride //= 2
        hc = Hamiltonian(coarsen(h.potential, stride))
        psi = coarsen(psi, stride)
        shifted = hc.shifted_operator(lam)
        images = [psi]
        for _ in range(i + 1):
            images.append(shifted(images[-1]))
        scale = [psi, *apply_terms(shifted, psi)]
        out.append(
            (
                local_residual(images[i + 1], *scale, margin=margin),
                local_residual(images[i], *scale, margin=margin),
            )
        )
    return out


def node_count(f: GridFunction) -> int:
    return count_sign_changes(f)
