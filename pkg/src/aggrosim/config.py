"""Sectioned ``key = value`` run configuration.

Sections: ``[grid] [kernel] [diffusion] [chemo] [init] [stepper] [run]`` and
an optional ``[experiment]``.  ``#`` starts a comment.  Unknown sections or
keys are errors, reported with their line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .chemo import ChemoError, Coefficient, ConvolutionChemo, EllipticChemo
from .diffusion import DiffusionError, DiffusionModel, parse_diffusion, regularize
from .grid import GridSpec, ScalarField, gaussian_field
from .integrator import StepperConfig
from .kernels import Kernel, KernelError, mollify, parse_kernel


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Bump:
    """``mass * (eps/pi)^{d/2} exp(-eps |x - center|^2)``."""

    mass: float
    eps: float
    center: tuple[float, ...]


@dataclass
class ExperimentSection:
    name: str
    parameter: str = "mass_scale"
    values: tuple[float, ...] = ()
    confirm_factor: int = 2
    fit_window: tuple[float, float] = (10.0, 100.0)


@dataclass
class RunConfig:
    grid: GridSpec
    kernel: str = "newtonian"
    mollify: float = 0.0
    diffusion: str = "linear"
    regularize: float = 0.0
    chemo: str = "convolution"
    a: str = "const:1.0"
    gamma: str = "const:0.0"
    elliptic_tol: float = 1e-10
    boundary: str = "auto"
    bumps: tuple[Bump, ...] = ()
    stepper: StepperConfig = field(default_factory=StepperConfig)
    t_end: float = 10.0
    observe_every: int = 10
    output: str = "out"
    seed: int = 0
    snapshots: bool = True
    experiment: ExperimentSection | None = None

    # ------------------------------------------------------------ builders

    def build_kernel(self) -> Kernel:
        k = parse_kernel(self.kernel, self.grid.dim)
        return mollify(k, self.mollify) if self.mollify > 0 else k

    def build_diffusion(self) -> DiffusionModel:
        m = parse_diffusion(self.diffusion)
        return regularize(m, self.regularize) if self.regularize > 0 else m

    def build_chemo(self):
        if self.chemo == "convolution":
            return ConvolutionChemo(self.build_kernel())
        return EllipticChemo(a=Coefficient.parse(self.a), gamma=Coefficient.parse(self.gamma),
                             tol=self.elliptic_tol, boundary=None if self.boundary == "auto" else self.boundary)

    def initial_field(self) -> ScalarField:
        u = np.zeros(self.grid.shape)
        for b in self.bumps:
            u += gaussian_field(self.grid, b.mass, b.eps, b.center).values
        return ScalarField(self.grid, u)

    @property
    def total_mass(self) -> float:
        return sum(b.mass for b in self.bumps)

    def with_mass_scale(self, factor: float) -> "RunConfig":
        return replace(self, bumps=tuple(replace(b, mass=b.mass * factor) for b in self.bumps))


# ------------------------------------------------------------------ parsing

_STEPPER_KEYS = {f.name: f for f in fields(StepperConfig)}
_SECTIONS = ("grid", "kernel", "diffusion", "chemo", "init", "stepper", "run", "experiment")


def _float(v: str, line: int) -> float:
    try:
        x = float(v)
    except ValueError:
        raise ConfigError(f"malformed number {v!r}", line) from None
    if not math.isfinite(x):
        raise ConfigError(f"non-finite number {v!r}", line)
    return x


def _int(v: str, line: int) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"malformed integer {v!r}", line) from None


def _bool(v: str, line: int) -> bool:
    if v.lower() in ("true", "yes", "1"):
        return True
    if v.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"malformed boolean {v!r}", line)


def _floats(v: str, line: int, sep: str | None = None) -> tuple[float, ...]:
    return tuple(_float(x, line) for x in v.replace(",", " ").split(sep))


def _bump(v: str, line: int, dim: int | None) -> Bump:
    parts = {}
    for item in v.split(","):
        k, sep, val = item.partition("=")
        k = k.strip()
        if sep != "=" or k not in ("mass", "eps", "center"):
            raise ConfigError(f"gaussian expects 'mass=<m>, eps=<e>, center=<x> <y> ...', got {item.strip()!r}", line)
        parts[k] = val.strip()
    if "mass" not in parts or "eps" not in parts:
        raise ConfigError("gaussian needs mass and eps", line)
    center = tuple(_float(x, line) for x in parts.get("center", "").split())
    mass, eps = _float(parts["mass"], line), _float(parts["eps"], line)
    if eps <= 0:
        raise ConfigError("gaussian eps must be positive", line)
    if mass < 0:
        raise ConfigError("gaussian mass must be non-negative", line)
    return Bump(mass, eps, center)


def parse_config(text: str) -> RunConfig:
    raw: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in _SECTIONS}
    bumps_raw: list[tuple[str, int]] = []
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigError(f"malformed section header {s!r}", lineno)
            section = s[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        key, sep, val = s.partition("=")
        key, val = key.strip(), val.strip()
        if sep != "=" or not key:
            raise ConfigError(f"expected 'key = value', got {s!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        if section == "init" and key == "gaussian":
            bumps_raw.append((val, lineno))
            continue
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        raw[section][key] = (val, lineno)
    return _build(raw, bumps_raw)


def _take(sec: dict, allowed: set[str], name: str):
    for k, (_, ln) in sec.items():
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in [{name}]", ln)


def _build(raw, bumps_raw) -> RunConfig:
    g = raw["grid"]
    _take(g, {"d", "L", "n"}, "grid")
    for k in ("d", "L", "n"):
        if k not in g:
            raise ConfigError(f"[grid] requires {k!r}")
    try:
        grid = GridSpec(_int(*g["d"]), _float(*g["L"]), _int(*g["n"]))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), g["n"][1]) from None
    cfg = RunConfig(grid)

    kern = raw["kernel"]
    _take(kern, {"kernel", "mollify"}, "kernel")
    if "kernel" in kern:
        cfg.kernel = kern["kernel"][0]
    if "mollify" in kern:
        cfg.mollify = _float(*kern["mollify"])
    try:
        cfg.build_kernel()
    except (KernelError, OSError) as exc:
        raise ConfigError(str(exc), kern.get("kernel", (None, None))[1]) from None

    dif = raw["diffusion"]
    _take(dif, {"model", "regularize"}, "diffusion")
    if "model" in dif:
        cfg.diffusion = dif["model"][0]
    if "regularize" in dif:
        cfg.regularize = _float(*dif["regularize"])
        if cfg.regularize < 0:
            raise ConfigError("regularize must be >= 0", dif["regularize"][1])
    try:
        cfg.build_diffusion()
    except (DiffusionError, OSError) as exc:
        raise ConfigError(str(exc), dif.get("model", (None, None))[1]) from None

    ch = raw["chemo"]
    _take(ch, {"model", "a", "gamma", "tol", "boundary"}, "chemo")
    if "model" in ch:
        cfg.chemo = ch["model"][0]
        if cfg.chemo not in ("convolution", "elliptic"):
            raise ConfigError(f"chemo model must be convolution or elliptic, got {cfg.chemo!r}", ch["model"][1])
    for key, attr in (("a", "a"), ("gamma", "gamma")):
        if key in ch:
            try:
                setattr(cfg, attr, Coefficient.parse(ch[key][0]).spec())
            except ChemoError as exc:
                raise ConfigError(str(exc), ch[key][1]) from None
    if "tol" in ch:
        cfg.elliptic_tol = _float(*ch["tol"])
    if "boundary" in ch:
        cfg.boundary = ch["boundary"][0]
        if cfg.boundary not in ("auto", "dirichlet", "monopole"):
            raise ConfigError("boundary must be auto, dirichlet or monopole", ch["boundary"][1])
    if cfg.chemo == "elliptic":
        try:
            cfg.build_chemo().setup(grid)
        except ChemoError as exc:
            line = ch.get("gamma", ch.get("model", (None, None)))[1]
            raise ConfigError(str(exc), line) from None

    init = raw["init"]
    _take(init, set(), "init")
    bumps = []
    for val, ln in bumps_raw:
        b = _bump(val, ln, grid.dim)
        if not b.center:
            b = replace(b, center=(0.0,) * grid.dim)
        if len(b.center) != grid.dim:
            raise ConfigError(f"center needs {grid.dim} coordinates", ln)
        bumps.append(b)
    cfg.bumps = tuple(bumps)
    if not cfg.total_mass > 0:
        raise ConfigError("total initial mass must be positive (add [init] gaussian = ...)")

    st = raw["stepper"]
    _take(st, set(_STEPPER_KEYS), "stepper")
    kw = {}
    for k, (v, ln) in st.items():
        if k == "reconstruction":
            kw[k] = v
        elif k == "exact_linear":
            kw[k] = _bool(v, ln)
        elif k == "picard_sweeps":
            kw[k] = _int(v, ln)
        elif k == "blowup_lp":
            kw[k] = None if v == "auto" else _float(v, ln)
        else:
            kw[k] = _float(v, ln)
    try:
        cfg.stepper = StepperConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"[stepper] {exc}", next(iter(st.values()))[1] if st else None) from None

    run = raw["run"]
    _take(run, {"t_end", "observe_every", "output", "seed", "snapshots"}, "run")
    if "t_end" in run:
        cfg.t_end = _float(*run["t_end"])
        if cfg.t_end < 0:
            raise ConfigError("t_end must be non-negative", run["t_end"][1])
    if "observe_every" in run:
        cfg.observe_every = _int(*run["observe_every"])
        if cfg.observe_every < 1:
            raise ConfigError("observe_every must be >= 1", run["observe_every"][1])
    if "output" in run:
        cfg.output = run["output"][0]
    if "seed" in run:
        cfg.seed = _int(*run["seed"])
    if "snapshots" in run:
        cfg.snapshots = _bool(*run["snapshots"])

    ex = raw["experiment"]
    if ex:
        _take(ex, {"name", "parameter", "values", "confirm_factor", "fit_window"}, "experiment")
        if "name" not in ex:
            raise ConfigError("[experiment] requires 'name'", next(iter(ex.values()))[1])
        sec = ExperimentSection(ex["name"][0])
        if "parameter" in ex:
            sec.parameter = ex["parameter"][0]
        if "values" in ex:
            sec.values = _floats(*ex["values"])
            if not sec.values:
                raise ConfigError("values must be non-empty", ex["values"][1])
            if any(v <= 0 for v in sec.values):
                raise ConfigError("sweep values must be positive", ex["values"][1])
        if "confirm_factor" in ex:
            sec.confirm_factor = _int(*ex["confirm_factor"])
        if "fit_window" in ex:
            w = _floats(*ex["fit_window"])
            if len(w) != 2 or not 0 <= w[0] < w[1]:
                raise ConfigError("fit_window needs two increasing times", ex["fit_window"][1])
            sec.fit_window = (w[0], w[1])
        cfg.experiment = sec
    return cfg


def _num(x: float) -> str:
    return repr(float(x))


def dump_config(cfg: RunConfig) -> str:
    """Canonical text; ``parse_config(dump_config(c))`` reproduces ``c``."""
    st = cfg.stepper
    lines = [
        "[grid]",
        f"d = {cfg.grid.dim}",
        f"L = {_num(cfg.grid.half_width)}",
        f"n = {cfg.grid.n}",
        "",
        "[kernel]",
        f"kernel = {cfg.kernel}",
        f"mollify = {_num(cfg.mollify)}",
        "",
        "[diffusion]",
        f"model = {cfg.diffusion}",
        f"regularize = {_num(cfg.regularize)}",
        "",
        "[chemo]",
        f"model = {cfg.chemo}",
        f"a = {cfg.a}",
        f"gamma = {cfg.gamma}",
        f"tol = {_num(cfg.elliptic_tol)}",
        f"boundary = {cfg.boundary}",
        "",
        "[init]",
    ]
    for b in cfg.bumps:
        lines.append(f"gaussian = mass={_num(b.mass)}, eps={_num(b.eps)}, center={' '.join(_num(x) for x in b.center)}")
    lines += ["", "[stepper]"]
    for name in _STEPPER_KEYS:
        v = getattr(st, name)
        if name == "blowup_lp":
            v = "auto" if v is None else _num(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _num(v)
        lines.append(f"{name} = {v}")
    lines += [
        "",
        "[run]",
        f"t_end = {_num(cfg.t_end)}",
        f"observe_every = {cfg.observe_every}",
        f"output = {cfg.output}",
        f"seed = {cfg.seed}",
        f"snapshots = {'true' if cfg.snapshots else 'false'}",
    ]
    if cfg.experiment is not None:
        ex = cfg.experiment
        lines += [
            "",
            "[experiment]",
            f"name = {ex.name}",
            f"parameter = {ex.parameter}",
        ]
        if ex.values:
            lines.append(f"values = {', '.join(_num(v) for v in ex.values)}")
        lines += [
            f"confirm_factor = {ex.confirm_factor}",
            f"fit_window = {_num(ex.fit_window[0])}, {_num(ex.fit_window[1])}",
        ]
    return "\n".join(lines) + "\n"


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
