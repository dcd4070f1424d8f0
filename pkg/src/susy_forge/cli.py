"""Batch frontend: ``susy-forge run|plot|scan``.

Exit codes: 0 when every check passes, 2 when a residual exceeds its
threshold or a verdict fails, 1 on errors (malformed config, missing files,
singular input).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import config as cfg
from .crum import PARTNER_TOL, JordanBasis, SingularWronskianError, build_intertwiner, chain_factorize, partial_wronskian_system_residual, partial_wronskians, partner_potential, wronskian_zeros
from .cubic import (
    IDENTITY_TOL,
    StrippableError,
    TheoremHypothesisError,
    basis_w1,
    check_lower_bound,
    factorize_theorem5,
    lemma1_coefficient_residuals,
    profile_from_basis,
    tau_disc,
    verify_lemma2,
    w1_from_g,
)
from .diffop import TAU_OP, Hamiltonian, LinearDiffOperator, gaussian_test_set, intertwining_residual, transpose, write_operator_csv
from .gridfn import Grid, GridFunction, read_csv, write_csv
from .schrod import PartialSpectrumWarning, bound_states, class_k_check
from .susy import closure_polynomial, closure_residual, compare_spectra, compute_smatrix, classify2, minimize

OUT_ENV = "SUSY_FORGE_OUT"
DEFAULT_OUT = "susy_forge_out"
REPORT_NAME = "report.txt"

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

THRESHOLDS = {
    "intertwining": 1e-5,
    "composition": TAU_OP,
    "partner_potential": PARTNER_TOL,
    "partial_wronskian_system": 1e-5,
    "closure": 1e-5,
    "spectra": 1e-5,
    "minimize": TAU_OP,
    "lemma2": 1e-6,
    "lemma1": IDENTITY_TOL,
    "w1_from_g": IDENTITY_TOL,
    "theorem5_composition": TAU_OP,
    "theorem5_intertwining": 1e-5,
}


# report -------------------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool | None = None
    detail: str = ""

    def __post_init__(self):
        if self.passed is None:
            self.passed = bool(np.isfinite(self.value) and self.value <= self.threshold)

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        text = f"{self.value:.3e} <= {self.threshold:.1e} {verdict}"
        return f"{text} ({self.detail})" if self.detail else text


@dataclass
class Section:
    name: str
    fields: dict[str, str] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    def check(self, name: str, value: float, threshold: float, **kw) -> Check:
        c = Check(name, float(value), threshold, **kw)
        self.checks.append(c)
        return c


@dataclass
class Report:
    scenario: str
    out_dir: Path
    sections: list[Section] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    error: str | None = None

    def section(self, name: str) -> Section:
        s = Section(name)
        self.sections.append(s)
        return s

    def get(self, name: str) -> Section | None:
        return next((s for s in self.sections if s.name == name), None)

    @property
    def checks(self) -> list[Check]:
        return [c for s in self.sections for c in s.checks]

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_OK if self.passed else EXIT_FAIL

    @property
    def status(self) -> str:
        return {EXIT_OK: "pass", EXIT_FAIL: "fail", EXIT_ERROR: "error"}[self.exit_code]

    def to_text(self) -> str:
        lines = ["[report]", f"scenario = {self.scenario}", f"status = {self.status}"]
        if self.error:
            lines.append(f"error = {self.error}")
        for s in self.sections:
            lines += ["", f"[{s.name}]"]
            lines += [f"{k} = {v}" for k, v in s.fields.items()]
            lines += [f"check.{c.name} = {c.line()}" for c in s.checks]
        if self.files:
            lines += ["", "[files]"] + [f"file = {f}" for f in self.files]
        return "\n".join(lines) + "\n"

    def write_function(self, f: GridFunction, name: str) -> None:
        write_csv(f, self.out_dir / name)
        self.files.append(name)

    def write_operator(self, op: LinearDiffOperator, name: str) -> None:
        write_operator_csv(op, self.out_dir / name)
        self.files.append(name)


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# formatting ------------------------------------------------------------------------------------


def _num(z: complex) -> str:
    z = complex(z)
    if abs(z.imag) <= 1e-12 * max(1.0, abs(z.real)):
        return f"{z.real:.10g}"
    return f"({z.real:.10g}{z.imag:+.10g}j)"


def describe_operator(op: LinearDiffOperator, tol: float = TAU_OP) -> str:
    """``d^2 - 3 d + 2`` for constant coefficients, otherwise a note with values at ``x = 0``."""
    i0 = op.grid.center_index
    sl = op.grid.interior()
    consts = []
    for c in op.coeffs:
        v = c.values[sl]
        c0 = c.values[i0]
        if np.max(np.abs(v - c0)) > tol * max(1.0, np.max(np.abs(v))):
            vals = ", ".join(f"c{k}(0)={_num(cc.values[i0])}" for k, cc in enumerate(op.coeffs))
            return f"variable coefficients; {vals}"
        consts.append(complex(c0))
    terms = []
    for k in range(len(consts) - 1, -1, -1):
        c = consts[k]
        if abs(c) <= tol:
            continue
        d = "" if k == 0 else ("d" if k == 1 else f"d^{k}")
        if d and abs(c - 1) <= tol:
            body, sign = d, "+"
        elif d and abs(c + 1) <= tol:
            body, sign = d, "-"
        else:
            real = abs(c.imag) <= tol
            sign = "-" if real and c.real < 0 else "+"
            mag = _num(-c if sign == "-" else c)
            body = f"{mag} {d}".strip()
        terms.append((sign, body))
    if not terms:
        return "0"
    first_sign, first = terms[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in terms[1:]:
        text += f" {sign} {body}"
    return text


def _lams(values) -> str:
    return ", ".join(_num(v) for v in values)


# actions -----------------------------------------------------------------------------------------


@dataclass
class Context:
    scenario: cfg.Scenario
    grid: Grid
    margin: float
    tol_scale: float
    report: Report
    h_plus: Hamiltonian | None = None
    basis: JordanBasis | None = None
    q: LinearDiffOperator | None = None
    h_minus: Hamiltonian | None = None
    smatrix: object = None

    def thr(self, key: str) -> float:
        return THRESHOLDS[key] * self.tol_scale


def _build(ctx: Context) -> None:
    sec = ctx.report.section("build")
    basis = ctx.basis
    validation = basis.validate(ctx.h_plus)
    q = build_intertwiner(ctx.h_plus, basis)
    v2 = partner_potential(ctx.h_plus.potential, basis)
    ctx.q, ctx.h_minus = q, Hamiltonian(v2)
    sec.fields["order"] = str(basis.size)
    sec.fields["eigenvalues"] = _lams(lam for lam, _ in basis.crum_order())
    sec.fields["chain_sizes"] = ", ".join(str(len(c)) for c in basis.chains)
    sec.fields["basis_relation_max"] = f"{max(validation.values()):.3e}"
    sec.fields["q_minus"] = describe_operator(q)
    ctx.report.write_function(ctx.h_plus.potential, "V1.csv")
    ctx.report.write_function(v2, "V2.csv")
    ctx.report.write_operator(q, "q_minus.csv")
    ctx.report.write_operator(transpose(q), "q_plus.csv")
    for j, f in enumerate(basis.functions(), start=1):
        ctx.report.write_function(f, f"phi_{j}.csv")
    chain = chain_factorize(ctx.h_plus, basis, q)
    for j, chi in enumerate(chain.superpotentials, start=1):
        ctx.report.write_function(chi, f"superpotential_{j}.csv")
    for j, v in enumerate(chain.intermediate_potentials, start=1):
        ctx.report.write_function(v, f"intermediate_{j}.csv")
    sec.fields["singular_intermediates"] = ", ".join(str(j + 1) for j, s in enumerate(chain.singular_flags) if s) or "none"
    sec.fields["complex_factors"] = ", ".join(str(j + 1) for j, s in enumerate(chain.complex_flags) if s) or "none"
    for note in chain.notes:
        sec.fields.setdefault("notes", "")
        sec.fields["notes"] = "; ".join(filter(None, [sec.fields["notes"], note]))
    if chain.composition_residual is not None:
        sec.check("factor_composition", chain.composition_residual, ctx.thr("composition"))


def _verify(ctx: Context) -> None:
    sec = ctx.report.section("verify")
    tests = gaussian_test_set(ctx.grid)
    r_minus = intertwining_residual(ctx.q, ctx.h_plus, ctx.h_minus, tests, margin=ctx.margin)
    r_plus = intertwining_residual(transpose(ctx.q), ctx.h_minus, ctx.h_plus, tests, margin=ctx.margin)
    sec.check("intertwining_minus", r_minus, ctx.thr("intertwining"))
    sec.check("intertwining_plus", r_plus, ctx.thr("intertwining"))
    try:
        r = partial_wronskian_system_residual(ctx.basis, ctx.h_plus.potential, margin=ctx.margin)
        sec.check("partial_wronskian_system", r, ctx.thr("partial_wronskian_system"))
    except SingularWronskianError as exc:
        sec.fields["partial_wronskian_system"] = f"skipped: {exc}"
    S = compute_smatrix(ctx.h_plus, ctx.basis)
    ctx.smatrix = S
    poly = closure_polynomial(S)
    sec.fields["closure_polynomial"] = _lams(poly.coeffs)
    sec.check("closure", closure_residual(ctx.q, ctx.h_plus, ctx.h_minus, S, tests, ctx.margin), ctx.thr("closure"))
    if ctx.basis.size >= 2:
        cmp = compare_spectra(ctx.h_minus, ctx.basis, S.entries, tol=ctx.thr("spectra"))
        sec.fields["s_minus_cells"] = "; ".join(f"{_num(c.lam)}:{c.size}" for c in cmp.minus.cells)
        sec.fields["s_plus_cells"] = "; ".join(f"{_num(c.lam)}:{c.size}" for c in cmp.plus.cells)
        sec.check("spectra_agreement", cmp.mismatch, ctx.thr("spectra"), passed=cmp.agree and cmp.mismatch <= ctx.thr("spectra"))


def _spectrum(ctx: Context) -> None:
    sec = ctx.report.section("spectrum")
    count = ctx.scenario.spectrum_count
    columns: dict[str, list[float]] = {}
    for label, h in (("E_plus", ctx.h_plus), ("E_minus", ctx.h_minus)):
        if h is None:
            continue
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PartialSpectrumWarning)
            states = bound_states(h, count)
        if caught:
            sec.fields[f"{label}_note"] = f"partial spectrum: {len(states)} of {count} levels below the window edge"
        columns[label] = [e for e, _ in states]
        sec.fields[label] = ", ".join(f"{e:.10g}" for e in columns[label]) or "none"
    path = ctx.report.out_dir / "spectrum.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", *columns])
        for n in range(max((len(v) for v in columns.values()), default=0)):
            w.writerow([n, *(repr(v[n]) if n < len(v) else "" for v in columns.values())])
    ctx.report.files.append(path.name)


def _classk(ctx: Context) -> None:
    sec = ctx.report.section("classk")
    for label, h in (("V1", ctx.h_plus), ("V2", ctx.h_minus)):
        if h is None:
            continue
        r = class_k_check(h.potential)
        sec.fields[f"{label}.in_class_K"] = str(r.in_class_K).lower()
        sec.fields[f"{label}.cond1_real_smooth"] = str(r.cond1_real_smooth).lower()
        sec.fields[f"{label}.cond2_positive_tail"] = str(r.cond2_positive_tail).lower()
        sec.fields[f"{label}.r0"] = "none" if r.r0 is None else f"{r.r0:.6g}"
        sec.fields[f"{label}.cond3"] = f"{r.cond3_status} (sup {r.cond3_supremum:.3e})"
        if r.notes:
            sec.fields[f"{label}.notes"] = "; ".join(r.notes)


def _classify(ctx: Context) -> None:
    sec = ctx.report.section("classify")
    c = classify2(ctx.q, ctx.h_plus, ctx.basis)
    sec.fields["verdict"] = c.verdict.value
    sec.fields["eigenvalues"] = _lams(c.eigenvalues)
    sec.fields["sign_changes"] = ", ".join(map(str, c.sign_changes)) or "n/a"
    if c.notes:
        sec.fields["notes"] = "; ".join(c.notes)


def _minimize(ctx: Context) -> None:
    sec = ctx.report.section("minimize")
    m = minimize(ctx.q, ctx.h_plus, ctx.basis)
    sec.fields["stripped"] = "; ".join(f"{_num(lam)}^{k}" for lam, k in m.stripped) or "none"
    sec.fields["p_order"] = str(m.order)
    sec.fields["scalar"] = _num(m.scalar)
    sec.fields["p"] = describe_operator(m.p)
    ctx.report.write_operator(m.p, "p_minimal.csv")
    sec.check("minimize_identity", m.residual, ctx.thr("minimize"))


def _factorize3(ctx: Context) -> None:
    sec = ctx.report.section("factorize3")
    h, basis = ctx.h_plus, ctx.basis
    gp = profile_from_basis(h, basis)
    sl = ctx.grid.interior(ctx.margin)
    disc = gp.discriminant
    sec.fields["jordan_case"] = str(gp.case)
    sec.fields["G_range"] = f"{np.min(gp.G.real[sl]):.10g}, {np.max(gp.G.real[sl]):.10g}"
    sec.check("discriminant_negativity", max(0.0, -float(np.min(disc.real[sl]))), tau_disc(gp.G))
    ctx.report.write_function(gp.G, "G.csv")
    ctx.report.write_function(disc, "discriminant.csv")
    ctx.report.write_function(gp.sqrt_branch, "sqrt_branch.csv")
    for k, v in verify_lemma2(basis, h, ctx.margin).items():
        sec.check(f"lemma2[{k}]", v, ctx.thr("lemma2"))
    for k, v in lemma1_coefficient_residuals(ctx.q, h.potential, ctx.h_minus.potential, ctx.margin).items():
        sec.check(f"lemma1[{k}]", v, ctx.thr("lemma1"))
    try:
        ok, gap = check_lower_bound(gp, ctx.margin)
        sec.fields["lower_bound_gap"] = f"{gap:.10g}"
        w1 = w1_from_g(gp, ctx.margin)
        ref = basis_w1(basis)
        err = float(np.max(np.abs(w1.w1.values[sl] - ref.values[sl])) / max(1.0, np.max(np.abs(ref.values[sl]))))
        sec.fields["w1_repaired_points"] = str(len(w1.repaired))
        sec.check("w1_from_g", err, ctx.thr("w1_from_g"))
        f = factorize_theorem5(ctx.q, h, basis, ctx.h_minus)
    except (TheoremHypothesisError, StrippableError) as exc:
        sec.check("theorem5_hypotheses", np.nan, 0.0, passed=False, detail=str(exc))
        return
    sec.fields["lambda3"] = _num(f.lambda3)
    for name in ("p1", "k2", "p2", "k1"):
        op = getattr(f, name)
        sec.fields[name] = describe_operator(op)
        ctx.report.write_operator(op, f"{name}.csv")
    ctx.report.write_function(f.h1_potential, "h1_potential.csv")
    ctx.report.write_function(f.h2_potential, "h2_potential.csv")
    for k, v in f.residuals.items():
        key = "theorem5_composition" if k.startswith("q=") else "theorem5_intertwining"
        sec.check(f"theorem5[{k}]", v, ctx.thr(key))


ACTION_STEPS: dict[str, Callable[[Context], None]] = {
    "build": _build,
    "verify": _verify,
    "spectrum": _spectrum,
    "classk": _classk,
    "classify": _classify,
    "minimize": _minimize,
    "factorize3": _factorize3,
}
NEEDS_BUILD = {"verify", "classify", "minimize", "factorize3"}


def _apply_overrides(sc: cfg.Scenario, grid_n: int | None, grid_l: float | None, margin: float | None) -> None:
    if grid_n is not None:
        sc.grid_n = grid_n
    if grid_l is not None:
        sc.grid_l = grid_l
    if margin is not None:
        if not 0 <= margin < 0.5:
            raise cfg.ConfigError("margin must lie in [0, 0.5)", key="--margin")
        sc.margin = margin


def _prepare(sc: cfg.Scenario) -> tuple[Grid, Hamiltonian]:
    try:
        grid = sc.grid()
    except ValueError as exc:
        raise cfg.ConfigError(str(exc), sc.path, None, "grid") from None
    return grid, Hamiltonian(cfg.build_potential(sc, grid))


def run(
    config_path,
    grid_n: int | None = None,
    grid_l: float | None = None,
    margin: float | None = None,
    tol_scale: float = 1.0,
    out_root: Path | None = None,
) -> Report:
    """Run the scenario's actions in dependency order and write the report and CSVs."""
    sc = cfg.load(config_path)
    _apply_overrides(sc, grid_n, grid_l, margin)
    if sc.parameters():
        raise cfg.ConfigError(f"scan parameters {sc.parameters()} are only allowed with 'scan'", sc.path, None, "chain")
    out = (out_root or output_root()) / sc.name
    out.mkdir(parents=True, exist_ok=True)
    report = Report(sc.name, out)
    grid, h = _prepare(sc)
    ctx = Context(sc, grid, sc.margin, tol_scale, report, h_plus=h)
    header = report.section("scenario")
    header.fields.update(
        config=str(config_path),
        grid_l=f"{grid.half_width:g}",
        grid_n=str(grid.n_points),
        margin=f"{sc.margin:g}",
        tol_scale=f"{tol_scale:g}",
        potential=sc.potential,
        actions=", ".join(sc.actions),
    )
    actions = list(sc.actions)
    if NEEDS_BUILD & set(actions) or sc.chains:
        actions = ["build"] + [a for a in actions if a != "build"]
    order = [a for a in ACTION_STEPS if a in actions]
    try:
        if sc.chains:
            ctx.basis = cfg.build_basis(sc, h)
        for a in order:
            ACTION_STEPS[a](ctx)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    (out / REPORT_NAME).write_text(report.to_text())
    return report


# plot tables -------------------------------------------------------------------------------------


@dataclass
class PlotResult:
    written: list[str]
    missing: list[str]


def _numbered(directory: Path, prefix: str) -> list[Path]:
    found = []
    j = 1
    while (directory / f"{prefix}_{j}.csv").exists():
        found.append(directory / f"{prefix}_{j}.csv")
        j += 1
    return found


def _write_table(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def plot_emit(report_dir) -> PlotResult:
    """Collect the run's CSVs into ``potentials.csv``, ``superpotentials.csv``, ``gfunction.csv`` and ``plot.gp``."""
    d = Path(report_dir)
    if not (d / REPORT_NAME).exists():
        raise FileNotFoundError(f"{d}: no {REPORT_NAME}; run a scenario first")
    written, missing = [], []

    def load(name):
        p = d / name
        if p.exists():
            return read_csv(p)
        missing.append(name)
        return None

    pots = [("V1", load("V1.csv")), ("V2", load("V2.csv"))]
    pots += [(f"v{j}", read_csv(p)) for j, p in enumerate(_numbered(d, "intermediate"), start=1)]
    for name in ("h1_potential", "h2_potential"):
        if (d / f"{name}.csv").exists():
            pots.append((name.split("_")[0], read_csv(d / f"{name}.csv")))
    pots = [(k, f) for k, f in pots if f is not None]
    if pots:
        x = pots[0][1].x
        _write_table(d / "potentials.csv", ["x"] + [k for k, _ in pots], [x] + [f.real for _, f in pots])
        written.append("potentials.csv")

    chis = _numbered(d, "superpotential")
    if chis:
        fs = [read_csv(p) for p in chis]
        header = ["x"]
        cols = [fs[0].x]
        for j, f in enumerate(fs, start=1):
            header += [f"chi{j}_re", f"chi{j}_im"]
            cols += [f.real, f.values.imag]
        _write_table(d / "superpotentials.csv", header, cols)
        written.append("superpotentials.csv")
    else:
        missing.append("superpotential_*.csv")

    g, disc, root = (load(n) for n in ("G.csv", "discriminant.csv", "sqrt_branch.csv"))
    if g is not None and disc is not None and root is not None:
        _write_table(d / "gfunction.csv", ["x", "G", "discriminant", "sqrt_branch"], [g.x, g.real, disc.real, root.real])
        written.append("gfunction.csv")

    (d / "plot.gp").write_text(_gnuplot_script(d, written))
    written.append("plot.gp")
    return PlotResult(written, missing)


def _gnuplot_script(d: Path, written: Sequence[str]) -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 'x'"]
    for name in written:
        ncols = len((d / name).open().readline().strip().split(","))
        stem = name[:-4]
        lines += [
            "set terminal pngcairo size 900,600",
            f"set output '{stem}.png'",
            f"set title '{stem}'",
            "plot " + ", ".join(f"'{name}' using 1:{k} with lines" for k in range(2, ncols + 1)),
        ]
    return "\n".join(lines) + "\n"


# nodeless scan ---------------------------------------------------------------------------------


@dataclass
class ScanResult:
    names: list[str]
    points: list[dict[str, float]]
    zeros: list[list[int]]  # per point, zero counts of W_1 (then W_2, ... with ``partial``)
    errors: list[str | None]
    ranges: list[str]
    diagnostics: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> list[bool]:
        return [e is None and not any(z) for z, e in zip(self.zeros, self.errors)]


def _intervals(values: np.ndarray, mask: Sequence[bool]) -> list[tuple[float, float]]:
    out, start = [], None
    for v, ok in zip(values, mask):
        if ok and start is None:
            start = v
        if ok:
            last = v
        if not ok and start is not None:
            out.append((start, last))
            start = None
    if start is not None:
        out.append((start, last))
    return out


def _fmt_intervals(iv) -> str:
    return ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in iv) or "empty"


def scan_nodeless(sc: cfg.Scenario) -> ScanResult:
    """Grid-scan the ``$`` parameters and find where ``W_1`` (and with ``partial`` every ``W_j``) is nodeless."""
    if not sc.chains:
        raise cfg.ConfigError("scan needs at least one [chain]", sc.path, None, "chain")
    grid, h = _prepare(sc)
    names = sc.parameters()
    points = cfg.scan_points(sc)
    zeros, errors = [], []
    for p in points:
        try:
            basis = cfg.build_basis(sc, h, p)
            ws = partial_wronskians(basis)[: basis.size if sc.scan_partial else 1]
            zeros.append([len(wronskian_zeros(w)) for w in ws])
            errors.append(None)
        except (ValueError, ArithmeticError) as exc:
            zeros.append([])
            errors.append(f"{type(exc).__name__}: {exc}")
    res = ScanResult(names, points, zeros, errors, [])
    mask = res.feasible
    if not names:
        res.ranges = ["full range" if mask[0] else "empty"]
    elif len(names) == 1:
        res.ranges = [f"{names[0]} in {_fmt_intervals(_intervals(cfg.axis_values(sc)[0], mask))}"]
    else:
        a, b = cfg.axis_values(sc)
        m = np.array(mask).reshape(len(a), len(b))
        for i, av in enumerate(a):
            iv = _intervals(b, m[i])
            if iv:
                res.ranges.append(f"{names[0]} = {av:.6g}: {names[1]} in {_fmt_intervals(iv)}")
        if not res.ranges:
            res.ranges = ["empty"]
    if not any(mask):
        failed = sum(e is not None for e in errors)
        res.diagnostics.append(f"no nodeless point among {len(points)} samples")
        if failed:
            res.diagnostics.append(f"{failed} samples could not be built; first: {next(e for e in errors if e)}")
    return res


def _write_scan(sc: cfg.Scenario, res: ScanResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    nw = max((len(z) for z in res.zeros), default=1)
    with (out / "scan.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*res.names, *(f"zeros_W{j}" for j in range(1, nw + 1)), "nodeless"])
        for p, z, ok in zip(res.points, res.zeros, res.feasible):
            zz = [str(v) for v in z] + [""] * (nw - len(z))
            w.writerow([*(repr(p[n]) for n in res.names), *zz, int(ok)])
    lines = [
        "[scan]",
        f"scenario = {sc.name}",
        f"status = {'pass' if any(res.feasible) else 'fail'}",
        f"parameters = {', '.join(res.names) or 'none'}",
        f"samples = {len(res.points)}",
        f"feasible = {sum(res.feasible)}",
    ]
    lines += [f"range = {r}" for r in res.ranges]
    lines += [f"diagnostic = {d}" for d in res.diagnostics]
    (out / "scan_report.txt").write_text("\n".join(lines) + "\n")


# entry point -------------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="susy-forge", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-n", type=int, help="number of grid points (odd)")
    common.add_argument("--grid-l", type=float, help="half-width L of the window [-L, L]")
    common.add_argument("--margin", type=float, help="fraction of samples excluded at each end from residuals")
    common.add_argument("--tol-scale", type=float, default=1.0, help="multiply every report threshold")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run a scenario and write the report")
    p.add_argument("config")
    p = sub.add_parser("plot", parents=[common], help="emit plot tables from a report directory")
    p.add_argument("report_dir")
    p = sub.add_parser("scan", parents=[common], help="scan free coefficients for nodeless Wronskians")
    p.add_argument("config")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.tol_scale <= 0:
        print("error: --tol-scale must be positive", file=sys.stderr)
        return EXIT_ERROR
    try:
        if args.command == "run":
            report = run(args.config, args.grid_n, args.grid_l, args.margin, args.tol_scale)
            for c in report.checks:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.line()}")
            if report.error:
                print(f"error: {report.error}", file=sys.stderr)
            print(f"{report.status}: {report.out_dir / REPORT_NAME}")
            return report.exit_code
        if args.command == "plot":
            res = plot_emit(args.report_dir)
            for name in res.missing:
                print(f"skipped (missing): {name}", file=sys.stderr)
            for name in res.written:
                print(f"wrote {Path(args.report_dir) / name}")
            return EXIT_OK
        sc = cfg.load(args.config)
        _apply_overrides(sc, args.grid_n, args.grid_l, args.margin)
        res = scan_nodeless(sc)
        out = output_root() / sc.name
        _write_scan(sc, res, out)
        for r in res.ranges:
            print(r)
        for d in res.diagnostics:
            print(f"diagnostic: {d}", file=sys.stderr)
        return EXIT_OK if any(res.feasible) else EXIT_FAIL
    except (cfg.ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
