"""Scenario files: flat ``key = value`` text with repeated ``[chain]`` sections.

Example::

    [scenario]
    name = exp3
    potential = zero
    actions = build, verify, factorize3

    [chain]
    lambda = -1
    eigen = closed_form:exp(1)

    [chain]
    lambda_re = 3
    eigen = closed_form:hermite(1)
    associated = init:$d, 0

    [scan]
    d = -3, 3, 61

Each ``[chain]`` holds one eigenvalue, one ``eigen`` source and any number of
``associated`` sources in order. Sources are ``closed_form:<name>(params)`` or
``init:<psi0>, <psi0'>``; for an associated function ``init`` adds the
homogeneous solution with that data to the particular solution over the
previous member. Tokens ``$name`` are scan parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .crum import MAX_ORDER, Chain, JordanBasis
from .diffop import Hamiltonian
from .gridfn import DEFAULT_MARGIN, Grid, GridFunction, read_csv
from .schrod import CLOSED_FORMS, ClosedForm, InitialData, ParticularSolution, TransformationFunctionSpec, realize

ACTIONS = ("build", "verify", "spectrum", "classk", "classify", "minimize", "factorize3")
SECTIONS = ("scenario", "chain", "scan")
SCENARIO_KEYS = {"name", "grid_l", "grid_n", "margin", "potential", "actions", "spectrum_count"}
CHAIN_KEYS = {"lambda", "lambda_re", "lambda_im", "eigen", "associated"}

_PARAM = re.compile(r"\$([A-Za-z_]\w*)")
_CALL = re.compile(r"^([A-Za-z_]\w*)\s*(?:\((.*)\))?$")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None, key: str | None = None):
        where = ":".join(str(p) for p in (path, line) if p is not None)
        detail = f"field '{key}': {message}" if key else message
        super().__init__(f"{where}: {detail}" if where else detail)
        self.line = line
        self.key = key


@dataclass
class Entry:
    value: str
    line: int


@dataclass
class SourceSpec:
    kind: str  # "eigen" | "associated"
    text: str
    line: int


@dataclass
class ChainSpec:
    lam: str
    sources: list[SourceSpec]
    line: int


@dataclass
class ScanAxis:
    name: str
    values: np.ndarray


@dataclass
class Scenario:
    name: str
    grid_l: float
    grid_n: int
    margin: float
    potential: str
    actions: list[str]
    chains: list[ChainSpec]
    scan: list[ScanAxis] = field(default_factory=list)
    scan_partial: bool = False
    spectrum_count: int = 4
    path: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def order(self) -> int:
        return sum(len(c.sources) for c in self.chains)

    def grid(self) -> Grid:
        return Grid(self.grid_l, self.grid_n)

    def parameters(self) -> list[str]:
        names: list[str] = []
        for c in self.chains:
            for t in [c.lam] + [s.text for s in c.sources]:
                names += [n for n in _PARAM.findall(t) if n not in names]
        return names


def _number(text: str, path, line, key, params: Mapping[str, complex] | None = None) -> complex:
    text = text.strip()
    m = _PARAM.fullmatch(text)
    if m:
        if params is None or m.group(1) not in params:
            raise ConfigError(f"scan parameter ${m.group(1)} has no value", path, line, key)
        return complex(params[m.group(1)])
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as a number", path, line, key) from None


def _real(text: str, path, line, key) -> float:
    v = _number(text, path, line, key)
    if v.imag:
        raise ConfigError(f"{text!r} must be real", path, line, key)
    return v.real


def _split_args(text: str | None) -> list[str]:
    return [a for a in (text or "").split(",") if a.strip()]


def parse_text(text: str, path: str | None = None, base_dir: Path | None = None) -> Scenario:
    scenario: dict[str, Entry] = {}
    chains: list[tuple[int, list[tuple[str, Entry]]]] = []
    scan: list[tuple[str, Entry]] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", path, lineno)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {list(SECTIONS)}", path, lineno)
            if section == "chain":
                chains.append((lineno, []))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if section is None:
            raise ConfigError("entry before any section header", path, lineno, key)
        entry = Entry(value, lineno)
        if section == "scenario":
            if key not in SCENARIO_KEYS:
                raise ConfigError(f"unknown key; expected one of {sorted(SCENARIO_KEYS)}", path, lineno, key)
            if key in scenario:
                raise ConfigError("duplicate key", path, lineno, key)
            scenario[key] = entry
        elif section == "chain":
            if key not in CHAIN_KEYS:
                raise ConfigError(f"unknown key; expected one of {sorted(CHAIN_KEYS)}", path, lineno, key)
            chains[-1][1].append((key, entry))
        else:
            scan.append((key, entry))

    def get(key, default):
        return scenario[key] if key in scenario else Entry(default, 0)

    name = get("name", Path(path).stem if path else "scenario").value
    if not re.fullmatch(r"[\w.-]+", name):
        raise ConfigError("name may only contain letters, digits, '_', '.', '-'", path, get("name", "").line, "name")
    e = get("grid_l", "12")
    grid_l = _real(e.value, path, e.line, "grid_l")
    e = get("grid_n", "2049")
    try:
        grid_n = int(e.value)
    except ValueError:
        raise ConfigError(f"cannot read {e.value!r} as an integer", path, e.line, "grid_n") from None
    e = get("margin", str(DEFAULT_MARGIN))
    margin = _real(e.value, path, e.line, "margin")
    if not 0 <= margin < 0.5:
        raise ConfigError("margin must lie in [0, 0.5)", path, e.line, "margin")
    e = get("spectrum_count", "4")
    try:
        spectrum_count = int(e.value)
    except ValueError:
        raise ConfigError(f"cannot read {e.value!r} as an integer", path, e.line, "spectrum_count") from None
    e = get("actions", "build, verify")
    actions = [a.strip().lower() for a in e.value.split(",") if a.strip()]
    for a in actions:
        if a not in ACTIONS:
            raise ConfigError(f"unknown action {a!r}; expected a subset of {list(ACTIONS)}", path, e.line, "actions")
    if "potential" not in scenario:
        raise ConfigError("missing required key", path, None, "potential")

    specs = []
    for header, entries in chains:
        lam = [en for k, en in entries if k == "lambda"]
        re_ = [en for k, en in entries if k == "lambda_re"]
        im_ = [en for k, en in entries if k == "lambda_im"]
        if lam and (re_ or im_):
            raise ConfigError("give either 'lambda' or 'lambda_re'/'lambda_im'", path, lam[0].line, "lambda")
        if len(lam) > 1 or len(re_) > 1 or len(im_) > 1:
            raise ConfigError("eigenvalue given twice", path, header, "lambda")
        if lam:
            lam_text = lam[0].value
            if not _PARAM.fullmatch(lam_text.strip()):
                _number(lam_text, path, lam[0].line, "lambda")
        elif re_:
            lam_re = _real(re_[0].value, path, re_[0].line, "lambda_re")
            lam_im = _real(im_[0].value, path, im_[0].line, "lambda_im") if im_ else 0.0
            lam_text = repr(complex(lam_re, lam_im)) if lam_im else repr(lam_re)
        else:
            raise ConfigError("chain without an eigenvalue", path, header, "lambda")
        sources = [SourceSpec(k, en.value, en.line) for k, en in entries if k in ("eigen", "associated")]
        if not sources or sources[0].kind != "eigen":
            raise ConfigError("a chain starts with one 'eigen' source", path, header, "eigen")
        if any(s.kind == "eigen" for s in sources[1:]):
            bad = next(s for s in sources[1:] if s.kind == "eigen")
            raise ConfigError("only one 'eigen' source per chain; start a new [chain]", path, bad.line, "eigen")
        for s in sources:
            _check_source(s, path)
        specs.append(ChainSpec(lam_text, sources, header))

    axes = []
    partial = False
    for key, en in scan:
        if key == "partial":
            partial = en.value.strip().lower() in ("1", "true", "yes")
            continue
        parts = _split_args(en.value)
        if len(parts) != 3:
            raise ConfigError("scan axis is 'start, stop, count'", path, en.line, key)
        lo, hi = (_real(p, path, en.line, key) for p in parts[:2])
        try:
            count = int(parts[2])
        except ValueError:
            raise ConfigError(f"cannot read {parts[2]!r} as an integer", path, en.line, key) from None
        if count < 1 or hi < lo:
            raise ConfigError("scan axis needs start <= stop and count >= 1", path, en.line, key)
        axes.append(ScanAxis(key, np.linspace(lo, hi, count)))

    sc = Scenario(
        name=name,
        grid_l=grid_l,
        grid_n=grid_n,
        margin=margin,
        potential=scenario["potential"].value,
        actions=actions,
        chains=specs,
        scan=axes,
        scan_partial=partial,
        spectrum_count=spectrum_count,
        path=path,
        base_dir=base_dir or (Path(path).parent if path else Path.cwd()),
    )
    _check_potential(sc, scenario["potential"].line)
    validate_scenario(sc)
    return sc


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_text(text, str(path), path.parent)


def validate_scenario(sc: Scenario) -> None:
    if sc.order > MAX_ORDER:
        raise ConfigError(f"chain sizes total {sc.order}, at most {MAX_ORDER} allowed", sc.path, None, "chain")
    if "factorize3" in sc.actions and sc.order != 3:
        raise ConfigError("factorize3 requires order 3", sc.path, None, "actions")
    if "classify" in sc.actions and sc.order != 2:
        raise ConfigError("classify requires order 2", sc.path, None, "actions")
    needs_basis = set(sc.actions) - {"spectrum", "classk"}
    if needs_basis and not sc.chains:
        raise ConfigError(f"actions {sorted(needs_basis)} need at least one [chain]", sc.path, None, "actions")


def _check_source(s: SourceSpec, path) -> None:
    kind, _, body = s.text.partition(":")
    kind = kind.strip().lower()
    if kind == "closed_form":
        m = _CALL.match(body.strip())
        if not m:
            raise ConfigError(f"malformed closed form {body!r}; expected name(p1, p2, ...)", path, s.line, s.kind)
        if m.group(1) not in CLOSED_FORMS:
            raise ConfigError(f"unknown closed form {m.group(1)!r}; known: {sorted(CLOSED_FORMS)}", path, s.line, s.kind)
        for a in _split_args(m.group(2)):
            if not _PARAM.fullmatch(a.strip()):
                _number(a, path, s.line, s.kind)
    elif kind == "init":
        args = _split_args(body)
        if len(args) != 2:
            raise ConfigError("init needs two values 'psi0, dpsi0'", path, s.line, s.kind)
        for a in args:
            if not _PARAM.fullmatch(a.strip()):
                _number(a, path, s.line, s.kind)
    else:
        raise ConfigError(f"source must be 'closed_form:...' or 'init:...', got {s.text!r}", path, s.line, s.kind)


# realization ---------------------------------------------------------------------------------

BUILTIN_POTENTIALS = {
    "zero": lambda x: 0.0 * x,
    "oscillator": lambda x: x**2,
}


def _check_potential(sc: Scenario, line: int) -> None:
    text = sc.potential.strip()
    if text.startswith("csv:"):
        p = sc.base_dir / text[4:].strip()
        if not p.exists():
            raise ConfigError(f"potential file {str(p)!r} does not exist", sc.path, line, "potential")
        return
    m = _CALL.match(text)
    if not m or m.group(1) not in (*BUILTIN_POTENTIALS, "sech2", "poly"):
        raise ConfigError(
            f"unknown potential {text!r}; expected zero, oscillator, sech2(m), poly(c0, c1, ...) or csv:<path>",
            sc.path,
            line,
            "potential",
        )
    for a in _split_args(m.group(2)):
        _real(a, sc.path, line, "potential")


def build_potential(sc: Scenario, grid: Grid) -> GridFunction:
    """``zero``, ``oscillator`` (``x^2``), ``sech2(m)`` (``-m(m+1) sech^2 x``), ``poly(c0, ...)`` or a CSV file."""
    text = sc.potential.strip()
    if text.startswith("csv:"):
        f = read_csv(sc.base_dir / text[4:].strip())
        if f.grid != grid:
            raise ConfigError(
                f"potential file grid (L={f.grid.half_width}, n={f.grid.n_points}) differs from the scenario grid",
                sc.path,
                None,
                "potential",
            )
        return f
    m = _CALL.match(text)
    name = m.group(1)
    args = [_real(a, sc.path, None, "potential") for a in _split_args(m.group(2))]
    if name == "sech2":
        mm = args[0] if args else 1.0
        return GridFunction.from_callable(grid, lambda x: -mm * (mm + 1) / np.cosh(x) ** 2)
    if name == "poly":
        c = np.array(args or [0.0])
        return GridFunction.from_callable(grid, lambda x: np.polynomial.polynomial.polyval(x, c))
    return GridFunction.from_callable(grid, BUILTIN_POTENTIALS[name])


def transformation_specs(sc: Scenario, params: Mapping[str, float] | None = None) -> list[list[TransformationFunctionSpec]]:
    out = []
    for c in sc.chains:
        lam = _number(c.lam, sc.path, c.line, "lambda", params)
        group = []
        for i, s in enumerate(c.sources):
            kind, _, body = s.text.partition(":")
            if kind.strip().lower() == "closed_form":
                m = _CALL.match(body.strip())
                vals = tuple(_plain(_number(a, sc.path, s.line, s.kind, params)) for a in _split_args(m.group(2)))
                src = ClosedForm(m.group(1), vals)
            else:
                a, b = (_number(v, sc.path, s.line, s.kind, params) for v in _split_args(body))
                src = InitialData(a, b)
            group.append(TransformationFunctionSpec(lam, i, src))
        out.append(group)
    return out


def _plain(v: complex):
    return v.real if v.imag == 0 else v


def build_basis(sc: Scenario, h: Hamiltonian, params: Mapping[str, float] | None = None) -> JordanBasis:
    chains = []
    for group in transformation_specs(sc, params):
        funcs: list[GridFunction] = []
        for spec in group:
            if spec.chain_index and isinstance(spec.source, InitialData):
                a, b = spec.source.psi0, spec.source.dpsi0
                spec = TransformationFunctionSpec(spec.lam, spec.chain_index, ParticularSolution(funcs[-1], (a, b)))
            funcs.append(realize(spec, h, funcs[-1] if funcs else None))
        lam = group[0].lam
        chains.append(Chain(_plain(lam), tuple(funcs)))
    return JordanBasis(tuple(chains))


def scan_points(sc: Scenario) -> list[dict[str, float]]:
    names = sc.parameters()
    axes = {a.name: a for a in sc.scan}
    missing = [n for n in names if n not in axes]
    if missing:
        raise ConfigError(f"scan parameters {missing} have no [scan] axis", sc.path, None, "scan")
    extra = [n for n in axes if n not in names]
    if extra:
        raise ConfigError(f"scan axes {extra} are not used by any chain", sc.path, None, "scan")
    if len(names) > 2:
        raise ConfigError("at most two scan parameters are supported", sc.path, None, "scan")
    grids = np.meshgrid(*[axes[n].values for n in names], indexing="ij") if names else []
    if not names:
        return [{}]
    return [dict(zip(names, map(float, vals))) for vals in zip(*(g.ravel() for g in grids))]


def axis_values(sc: Scenario) -> Sequence[np.ndarray]:
    axes = {a.name: a for a in sc.scan}
    return [axes[n].values for n in sc.parameters()]
