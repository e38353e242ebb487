"""Desk-scale experiments: critical-mass ladder, decay rate, second-moment
check, small-data probe and self-similar boundedness."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .config import RunConfig
from .diagnostics import (DiagnosticsRecord, modified_free_energy_at, self_similar_transform, tau_of_t, t_of_tau,
                          virial_rate)
from .diffusion import Criticality, Linear, classify, critical_mass
from .grid import GridSpec, ScalarField, tail_norm
from .integrator import BlowupSuspected, BoundaryOverflow, SimState, Stepper, run
from .kernels import Logarithmic, Newtonian

GLOBAL = "Global"
BLOWUP = "Blowup"
INCONCLUSIVE = "inconclusive"


class ExperimentError(RuntimeError):
    pass


def worker_count() -> int:
    """``AGGROSIM_THREADS`` caps parallel runs; 0 or unset means one per CPU."""
    raw = os.environ.get("AGGROSIM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _map(func, items: Sequence) -> list:
    """Order-preserving map, in worker processes when more than one is allowed."""
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@dataclass
class Frames:
    """Recorded diagnostics plus density snapshots at requested times."""

    series: list[DiagnosticsRecord]
    times: list[float] = field(default_factory=list)
    fields: list[ScalarField] = field(default_factory=list)
    outcome: str = GLOBAL
    t_detect: float | None = None
    reason: str = ""


def simulate(cfg: RunConfig, observe_times: Sequence[float] | None = None, keep_fields: bool = False) -> Frames:
    """Run ``cfg`` to ``t_end``; blow-up detection is an outcome, not an error."""
    frames = Frames([])
    wanted = set(float(t) for t in (observe_times or ()))

    def grab(state: SimState, rec: DiagnosticsRecord) -> None:
        if keep_fields and (state.t in wanted or state.step_count == 0 or state.t == cfg.t_end):
            frames.times.append(state.t)
            frames.fields.append(state.u)

    try:
        _, series = run(cfg.initial_field(), cfg.build_chemo(), cfg.build_diffusion(), cfg.stepper, cfg.t_end,
                        observers=[grab], observe_every=cfg.observe_every, observe_times=observe_times)
        frames.series = series
    except BlowupSuspected as exc:
        frames.series = exc.series + ([exc.diagnostics] if exc.diagnostics is not None else [])
        frames.outcome = BLOWUP
        frames.t_detect = exc.t
        frames.reason = exc.reason
    return frames


# -------------------------------------------------------- critical mass sweep


@dataclass
class SweepRow:
    mass: float
    outcome: str
    t_detect: float | None
    max_linf: float
    n: int
    confirm_outcome: str | None = None
    confirm_t: float | None = None
    confirm_n: int | None = None

    @property
    def verdict(self) -> str:
        if self.confirm_outcome is None or self.confirm_outcome == self.outcome:
            return self.outcome
        return INCONCLUSIVE


@dataclass
class SweepTable:
    rows: list[SweepRow]
    critical_mass: float | None

    @property
    def verdicts(self) -> list[str]:
        return [r.verdict for r in self.rows]

    @property
    def monotone(self) -> bool:
        seen_blowup = False
        for v in self.verdicts:
            if v == INCONCLUSIVE:
                return False
            if v == BLOWUP:
                seen_blowup = True
            elif seen_blowup:
                return False
        return True

    @property
    def bracket(self) -> tuple[float | None, float | None]:
        glob = [r.mass for r in self.rows if r.verdict == GLOBAL]
        blow = [r.mass for r in self.rows if r.verdict == BLOWUP]
        return (max(glob) if glob else None, min(blow) if blow else None)

    @property
    def inconclusive(self) -> bool:
        return not self.monotone

    def brackets_critical_mass(self) -> bool:
        lo, hi = self.bracket
        if self.critical_mass is None or lo is None or hi is None:
            return False
        return lo < self.critical_mass < hi

    def csv(self) -> str:
        lines = ["mass,outcome,t_detect,max_linf,n,confirm_outcome,confirm_t,confirm_n,verdict"]
        for r in self.rows:
            lines.append(",".join(str(x) for x in (repr(r.mass), r.outcome, r.t_detect, repr(r.max_linf), r.n,
                                                   r.confirm_outcome, r.confirm_t, r.confirm_n, r.verdict)))
        return "\n".join(lines) + "\n"


def _refined(cfg: RunConfig, factor: int) -> RunConfig:
    g = cfg.grid
    return replace(cfg, grid=GridSpec(g.dim, g.half_width, g.n * factor))


def _sweep_case(cfg: RunConfig) -> tuple[str, float | None, float]:
    fr = simulate(cfg)
    return fr.outcome, fr.t_detect, max(r.linf for r in fr.series)


def critical_mass_sweep(masses: Sequence[float], cfg: RunConfig, confirm_factor: int = 2,
                        confirm_all: bool = False) -> SweepTable:
    """Run each total mass (initial bumps rescaled) and classify the outcome.

    Every Blowup row (every row with ``confirm_all``) is re-run with
    ``confirm_factor`` times as many cells per axis; disagreeing rows are
    marked inconclusive.
    """
    if not masses:
        raise ExperimentError("mass list must be non-empty")
    if any(m <= 0 for m in masses):
        raise ExperimentError("masses must be positive")
    kernel = cfg.build_kernel() if cfg.chemo == "convolution" else None
    diff = cfg.build_diffusion()
    cls = classify(diff, kernel, cfg.grid.dim)
    if cls.label is not Criticality.CRITICAL or abs(cls.m_star - 1.0) > 1e-9:
        raise ExperimentError(f"critical_mass_sweep needs a critical pair with m* = 1 (got {cls.label.value}, "
                              f"m* = {cls.m_star:g})")
    mc = critical_mass(diff, kernel, cfg.grid.dim).value if kernel is not None else None
    base = cfg.total_mass
    cases = [cfg.with_mass_scale(m / base) for m in masses]
    first = _map(_sweep_case, cases)
    rows = [SweepRow(m, o, t, lf, cfg.grid.n) for m, (o, t, lf) in zip(masses, first)]
    redo = [i for i, r in enumerate(rows) if confirm_all or r.outcome == BLOWUP]
    if confirm_factor > 1 and redo:
        second = _map(_sweep_case, [_refined(cases[i], confirm_factor) for i in redo])
        for i, (o, t, _) in zip(redo, second):
            rows[i].confirm_outcome = o
            rows[i].confirm_t = t
            rows[i].confirm_n = cfg.grid.n * confirm_factor
    return SweepTable(rows, mc)


def virial_blowup_bound(mass: float, m2_0: float) -> float:
    """Upper bound ``M2(0) / (M^2/(2 pi) - 4M)`` on the 2-D blow-up time."""
    rate = mass**2 / (2.0 * math.pi) - 4.0 * mass
    if rate <= 0:
        raise ExperimentError("the second-moment bound needs M > 8 pi")
    return m2_0 / rate


# ---------------------------------------------------------------- decay rate


@dataclass
class DecayResult:
    exponent: float
    half_window_exponent: float
    window: tuple[float, float]
    frames: Frames


def _log_times(a: float, b: float, count: int) -> list[float]:
    return [float(x) for x in np.exp(np.linspace(math.log(a), math.log(b), count))]


def _check_decay_setup(cfg: RunConfig) -> None:
    if cfg.grid.dim != 2:
        raise ExperimentError("decay_rate is set up for d = 2")
    if not isinstance(cfg.build_diffusion(), Linear):
        raise ExperimentError("decay_rate needs linear diffusion (A(u) = u^{2-2/d} in d = 2)")
    if cfg.chemo != "convolution" or not isinstance(cfg.build_kernel(), (Newtonian, Logarithmic)):
        raise ExperimentError("decay_rate needs the Newtonian or logarithmic kernel")
    mc = critical_mass(cfg.build_diffusion(), cfg.build_kernel(), 2).value
    if mc is not None and cfg.total_mass >= mc:
        raise ExperimentError(f"decay_rate needs M < M_c = {mc:.6g}")


def decay_times(cfg: RunConfig, window: tuple[float, float], count: int = 41) -> list[float]:
    lo, hi = window
    times = _log_times(max(lo / 10.0, 1e-3), min(hi, cfg.t_end), count)
    times += [t_of_tau(x, cfg.grid.dim) for x in np.linspace(0.25, tau_of_t(cfg.t_end, cfg.grid.dim), 25)]
    return sorted(set(t for t in times if 0 < t <= cfg.t_end))


def fit_decay(times: Sequence[float], linf: Sequence[float], window: tuple[float, float]) -> float:
    t = np.asarray(times)
    y = np.asarray(linf)
    sel = (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
    if sel.sum() < 3:
        raise ExperimentError("not enough frames in the fit window")
    return float(np.polyfit(np.log1p(t[sel]), np.log(y[sel]), 1)[0])


def decay_rate(cfg: RunConfig, window: tuple[float, float] | None = None, frames: Frames | None = None) -> DecayResult:
    """Slope of ``log ||u||_inf`` against ``log(1 + t)`` over ``window``."""
    _check_decay_setup(cfg)
    window = window or (cfg.experiment.fit_window if cfg.experiment else (10.0, 100.0))
    if frames is None:
        frames = simulate(cfg, decay_times(cfg, window), keep_fields=True)
    if frames.outcome != GLOBAL:
        raise ExperimentError(f"blow-up detected at t = {frames.t_detect} during the decay run")
    t = [r.t for r in frames.series]
    li = [r.linf for r in frames.series]
    half = (window[0], window[0] + 0.5 * (window[1] - window[0]))
    return DecayResult(fit_decay(t, li, window), fit_decay(t, li, half), window, frames)


# ----------------------------------------------------------- self-similarity


@dataclass
class SelfSimReport:
    taus: list[float]
    theta_inf: list[float]
    tails: list[float]
    G: list[float]

    def theta_variation(self, lo: float = 1.0, hi: float = 2.3) -> float:
        v = [x for tau, x in zip(self.taus, self.theta_inf) if lo - 1e-9 <= tau <= hi + 1e-9]
        if not v:
            raise ExperimentError("no frames in the tau window")
        return (max(v) - min(v)) / max(v)

    def G_violations(self) -> tuple[int, float]:
        """Count and total size of increases beyond ``1e-3 (1 + |G0|) dtau``."""
        count, total = 0, 0.0
        scale = 1.0 + abs(self.G[0])
        for i in range(1, len(self.G)):
            rise = self.G[i] - self.G[i - 1]
            if rise > 1e-3 * scale * (self.taus[i] - self.taus[i - 1]):
                count += 1
                total += rise
        return count, total

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.theta_inf))) and bool(np.all(np.isfinite(self.tails)))


def selfsim_boundedness(cfg: RunConfig, frames: Frames | None = None, taus: Sequence[float] | None = None) -> SelfSimReport:
    """Track ``||theta||_inf``, ``||(theta - 10)_+||_1`` and ``G(theta)`` along the frames.

    The sup norm and ``G`` follow from ``u`` by the exact dilation; only the
    tail norm needs ``theta`` on the fixed ``eta`` grid.
    """
    d = cfg.grid.dim
    kernel = cfg.build_kernel()
    if frames is None:
        tau_end = tau_of_t(cfg.t_end, d)
        taus = list(taus) if taus is not None else [float(x) for x in np.linspace(0.0, tau_end, 60)]
        frames = simulate(cfg, [t_of_tau(x, d) for x in taus if x > 0], keep_fields=True)
    if frames.outcome != GLOBAL:
        raise ExperimentError(f"blow-up detected at t = {frames.t_detect}")
    diff = cfg.build_diffusion()
    rep = SelfSimReport([], [], [], [])
    for t, u in zip(frames.times, frames.fields):
        theta, tau = self_similar_transform(u, t)
        rep.taus.append(tau)
        rep.theta_inf.append(math.exp(d * tau) * float(u.values.max()))
        rep.tails.append(tail_norm(theta, 10.0, 1.0))
        rep.G.append(modified_free_energy_at(u, t, kernel, diff))
    return rep


# ------------------------------------------------------------ virial check


@dataclass
class VirialRow:
    mass: float
    predicted: float
    analytic: float | None
    measured: float
    t_used: float

    @property
    def rel_error(self) -> float:
        ref = self.analytic if self.analytic is not None else self.predicted
        return abs(self.measured - ref) / abs(ref)


def _virial_case(cfg: RunConfig) -> VirialRow:
    kernel = cfg.build_kernel()
    diff = cfg.build_diffusion()
    times = [float(x) for x in np.linspace(0.0, cfg.t_end, 21)[1:]]
    fr = simulate(cfg, times)
    series = fr.series
    linf0 = series[0].linf
    ok = [r for r in series if r.linf < 50.0 * linf0]
    # stop at the first frame that breaks the 50x window
    cut = len(ok)
    for i, r in enumerate(series):
        if r.linf >= 50.0 * linf0:
            cut = i
            break
    use = series[:cut]
    if len(use) < 3:
        raise ExperimentError("too few frames below 50x the initial peak")
    t = np.array([r.t for r in use])
    m2 = np.array([r.m2 for r in use])
    measured = float(np.polyfit(t, m2, 1)[0])
    predicted, _ = virial_rate(cfg.initial_field(), kernel, diff)
    M = cfg.total_mass
    analytic = None
    if cfg.grid.dim == 2 and isinstance(diff, Linear) and diff.coef == 1.0 and isinstance(kernel, Newtonian):
        analytic = 4.0 * M - M**2 / (2.0 * math.pi)
    return VirialRow(M, predicted, analytic, measured, float(t[-1]))


def virial_check(cfg: RunConfig, masses: Sequence[float]) -> list[VirialRow]:
    """Least-squares slope of ``M2(t)`` against the second-moment identity."""
    if cfg.chemo != "convolution":
        raise ExperimentError("virial_check needs a convolution model")
    base = cfg.total_mass
    return _map(_virial_case, [cfg.with_mass_scale(m / base) for m in masses])


# --------------------------------------------------------- small-data probe


@dataclass
class ProbeRow:
    amplitude: float
    mass: float
    status: str
    max_ratio: float


def _probe_case(cfg: RunConfig) -> ProbeRow:
    if cfg.total_mass == 0:
        return ProbeRow(0.0, 0.0, "Bounded", 0.0)
    fr = simulate(cfg)
    linf0 = fr.series[0].linf
    peak = max(r.linf for r in fr.series) / linf0
    status = BLOWUP if fr.outcome == BLOWUP else ("Bounded" if peak < 10.0 else "Unbounded")
    return ProbeRow(0.0, cfg.total_mass, status, peak)


def smalldata_probe(cfg: RunConfig, amplitudes: Sequence[float]) -> list[ProbeRow]:
    """Scale the initial data by each amplitude; ``Bounded`` means the sup norm
    stayed below 10x its initial value through ``t_end``."""
    kernel = cfg.build_kernel() if cfg.chemo == "convolution" else None
    cls = classify(cfg.build_diffusion(), kernel, cfg.grid.dim)
    if cls.label is Criticality.SUBCRITICAL:
        raise ExperimentError("smalldata_probe targets critical or supercritical pairs")
    rows = _map(_probe_case, [cfg.with_mass_scale(a) for a in amplitudes])
    for a, r in zip(amplitudes, rows):
        r.amplitude = a
    return rows
