"""Finite-volume time stepping for ``u_t + div(u grad c) = Lap A(u)``.

A step is a Strang splitting: half a diffusion step, transport with the
velocity ``grad c`` (limited upwind fluxes, two-stage SSP Runge-Kutta), and
another half diffusion step.  All fluxes are face based and vanish on the
box boundary, so mass is conserved to round-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import fft

from .chemo import ConvolutionChemo, EllipticChemo, face_gradient
from .diagnostics import DiagnosticsRecord, guard_exponent, record
from .diffusion import DiffusionModel, classify, entropy_density, Criticality, IndeterminateCriticality
from .grid import ScalarField, boundary_ring_mask
from .solvers import DiffusionOperator, Multigrid, pcg

log = logging.getLogger(__name__)


class IntegratorError(RuntimeError):
    pass


class BlowupSuspected(IntegratorError):
    """Raised when a blow-up criterion fires; carries the detection time."""

    def __init__(self, message: str, t: float, reason: str, diagnostics: DiagnosticsRecord | None = None,
                 series: list | None = None):
        super().__init__(message)
        self.t = t
        self.reason = reason
        self.diagnostics = diagnostics
        self.series = series or []


class BoundaryOverflow(IntegratorError):
    def __init__(self, message: str, t: float, ring_mass: float, series: list | None = None):
        super().__init__(message)
        self.t = t
        self.ring_mass = ring_mass
        self.series = series or []


@dataclass
class StepperConfig:
    cfl_advect: float = 0.4
    diff_theta: float = 1.0
    dt_max: float = 0.05
    dt_min: float = 1e-10
    blowup_linf_factor: float = 100.0
    blowup_lp: float | None = None
    picard_sweeps: int = 2
    reconstruction: str = "muscl"
    ring_fraction: float = 0.05
    ring_tolerance: float = 1e-6
    solver_tol: float = 1e-12
    exact_linear: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.cfl_advect <= 1:
            raise ValueError("cfl_advect must lie in (0, 1]")
        if not 0.5 <= self.diff_theta <= 1:
            raise ValueError("diff_theta must lie in [1/2, 1]")
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")
        if self.blowup_linf_factor <= 1:
            raise ValueError("blowup_linf_factor must exceed 1")
        if self.blowup_lp is not None and self.blowup_lp < 1:
            raise ValueError("blowup_lp must be >= 1")
        if self.picard_sweeps < 1:
            raise ValueError("picard_sweeps must be >= 1")
        if self.reconstruction not in ("muscl", "upwind"):
            raise ValueError("reconstruction must be 'muscl' or 'upwind'")


@dataclass
class SimState:
    t: float
    u: ScalarField
    c: ScalarField
    dt: float
    step_count: int = 0


# ------------------------------------------------------------------ transport


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _face_states(u: np.ndarray, k: int, muscl: bool) -> tuple[np.ndarray, np.ndarray]:
    """Left/right reconstructed values on the interior faces normal to axis ``k``."""
    n = u.shape[k]
    lo = [slice(None)] * u.ndim
    hi = [slice(None)] * u.ndim
    lo[k] = slice(0, n - 1)
    hi[k] = slice(1, n)
    left, right = u[tuple(lo)], u[tuple(hi)]
    if not muscl:
        return left, right
    d = np.diff(u, axis=k)
    pad = [(0, 0)] * u.ndim
    pad[k] = (1, 1)
    dp = np.pad(d, pad)
    a = [slice(None)] * u.ndim
    b = [slice(None)] * u.ndim
    a[k] = slice(0, n)
    b[k] = slice(1, n + 1)
    slope = _minmod(dp[tuple(a)], dp[tuple(b)])
    return left + 0.5 * slope[tuple(lo)], right - 0.5 * slope[tuple(hi)]


def transport_divergence(u: np.ndarray, vel: Sequence[np.ndarray], h: float, muscl: bool = True) -> np.ndarray:
    """``-div(u v)`` with upwinded face values and zero flux on the boundary."""
    out = np.zeros_like(u)
    for k, v in enumerate(vel):
        uL, uR = _face_states(u, k, muscl)
        flux = np.where(v > 0, v * uL, v * uR)
        pad = [(0, 0)] * u.ndim
        pad[k] = (1, 1)
        out -= np.diff(np.pad(flux, pad), axis=k) / h
    return out


def outflow_rate(vel: Sequence[np.ndarray], shape: tuple[int, ...], h: float) -> np.ndarray:
    """Per-cell sum of outgoing face speeds divided by ``h``."""
    out = np.zeros(shape)
    for k, v in enumerate(vel):
        pad = [(0, 0)] * len(shape)
        pad[k] = (1, 1)
        vp = np.pad(v, pad)
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        out += np.maximum(vp[tuple(hi)], 0.0) + np.maximum(-vp[tuple(lo)], 0.0)
    return out / h


def adapt_dt(vel: Sequence[np.ndarray], h: float, cfg: StepperConfig, shape: tuple[int, ...] | None = None) -> float:
    """``min(cfl h / max|v|, dt_max, positivity bound)`` clamped to ``dt_min``.

    The positivity bound keeps each forward-Euler transport stage
    non-negative: reconstructed face values are at most ``1.5 u`` (MUSCL) or
    ``u`` (upwind), so ``dt * max outflow * factor <= 1`` suffices.
    """
    vmax = max((float(np.max(np.abs(v))) if v.size else 0.0) for v in vel) if len(vel) else 0.0
    dt = cfg.dt_max
    if vmax > 0:
        dt = min(dt, cfg.cfl_advect * h / vmax)
        if shape is not None:
            factor = 1.5 if cfg.reconstruction == "muscl" else 1.0
            rate = float(np.max(outflow_rate(vel, shape, h)))
            if rate > 0:
                dt = min(dt, 0.95 / (factor * rate))
    return max(dt, cfg.dt_min)


# ------------------------------------------------------------------ diffusion


class _DiffusionSolver:
    def __init__(self, model: DiffusionModel, grid, cfg: StepperConfig):
        self.model = model
        self.grid = grid
        self.cfg = cfg
        self.constant = bool(model.is_linear)
        if self.constant:
            self.kappa = float(np.asarray(model.A_prime(np.array([1.0])))[0])
            lam1 = (2.0 - 2.0 * np.cos(np.pi * np.arange(grid.n) / grid.n)) / grid.spacing**2
            lam = 0.0
            for k in range(grid.dim):
                shape = [1] * grid.dim
                shape[k] = -1
                lam = lam + lam1.reshape(shape)
            self.lam = np.broadcast_to(lam, grid.shape).copy()
        self._mg_cache: dict = {}

    def _face_diffusivity(self, u: np.ndarray) -> list[np.ndarray]:
        ap = np.asarray(self.model.A_prime(u), dtype=float)
        faces = []
        for k in range(u.ndim):
            inner = 0.5 * (np.take(ap, range(0, ap.shape[k] - 1), axis=k) + np.take(ap, range(1, ap.shape[k]), axis=k))
            pad = [(0, 0)] * u.ndim
            pad[k] = (1, 1)
            faces.append(np.pad(inner, pad))
        return faces

    def __call__(self, u: np.ndarray, dt: float) -> np.ndarray:
        th = self.cfg.diff_theta
        if self.constant:
            uh = fft.dctn(u, type=2, norm="ortho")
            kl = dt * self.kappa * self.lam
            if self.cfg.exact_linear:
                # exact discrete heat semigroup: positive, and free of the
                # algebraic tails of the implicit resolvent
                uh *= np.exp(-kl)
            else:
                uh *= (1.0 - (1.0 - th) * kl) / (1.0 + th * kl)
            return fft.idctn(uh, type=2, norm="ortho")
        h = self.grid.spacing
        gamma = np.full(u.shape, 1.0 / (th * dt))
        guess = u
        for _ in range(self.cfg.picard_sweeps):
            op = DiffusionOperator(self._face_diffusivity(np.maximum(guess, 0.0)), gamma, h, dirichlet=False)
            rhs = u / (th * dt)
            if th < 1.0:
                rhs = rhs - ((1.0 - th) / th) * (op.apply(u) - gamma * u)
            mg = Multigrid(op)
            guess = pcg(op.apply, rhs, mg, x0=guess, tol=self.cfg.solver_tol, maxiter=500).x
        return guess


# -------------------------------------------------------------------- stepper


class Stepper:
    """Holds the per-run precomputation (kernel tables, solvers) for ``step``."""

    def __init__(self, grid, chemo, diffusion: DiffusionModel, cfg: StepperConfig):
        self.grid = grid
        self.chemo = chemo
        self.diffusion = diffusion
        self.cfg = cfg
        self.diff_solver = _DiffusionSolver(diffusion, grid, cfg)
        self.entropy = entropy_density(diffusion)
        self.muscl = cfg.reconstruction == "muscl"
        self.ring = boundary_ring_mask(grid, cfg.ring_fraction)
        self.guard_p = cfg.blowup_lp if cfg.blowup_lp is not None else self._default_guard()

    def _default_guard(self) -> float:
        kernel = getattr(self.chemo, "kernel", None)
        try:
            m_star = classify(self.diffusion, kernel, self.grid.dim).m_star
        except (IndeterminateCriticality, ValueError):
            return 2.0
        return guard_exponent(self.diffusion, m_star)

    def potential(self, u: np.ndarray, guess: np.ndarray | None = None) -> np.ndarray:
        return self.chemo.potential(u, self.grid, guess)

    def velocities(self, c: np.ndarray) -> tuple[np.ndarray, ...]:
        return face_gradient(c, self.grid.spacing)

    def initial_state(self, u0: ScalarField) -> SimState:
        c = self.potential(u0.values)
        dt = adapt_dt(self.velocities(c), self.grid.spacing, self.cfg, self.grid.shape)
        return SimState(0.0, u0, ScalarField(self.grid, c), dt, 0)

    def _transport(self, u: np.ndarray, vel, dt: float) -> np.ndarray | None:
        """Forward-Euler transport stage; ``None`` if positivity would be lost."""
        ut = u + dt * transport_divergence(u, vel, self.grid.spacing, self.muscl)
        if ut.min() < -1e-14 * max(1.0, float(u.max())):
            return None
        return np.maximum(ut, 0.0)

    def _diffuse(self, u: np.ndarray, dt: float) -> np.ndarray:
        return np.maximum(self.diff_solver(u, dt), 0.0)

    def step(self, state: SimState, dt: float | None = None) -> SimState:
        """Strang splitting: half diffusion, SSP-RK2 transport, half diffusion.

        The transport stages use the potential of their own input density,
        so the coupling is second order in time.  If a stage velocity breaks
        the positivity bound the step is retried with half the step size.
        """
        h = self.grid.spacing
        u = state.u.values
        c = state.c.values
        if dt is None:
            dt = adapt_dt(self.velocities(c), h, self.cfg, self.grid.shape)
        mass0 = float(u.sum())
        elliptic = isinstance(self.chemo, EllipticChemo)
        while True:
            us = self._diffuse(u, 0.5 * dt)
            cs = self.potential(us, c if elliptic else None)
            u1 = self._transport(us, self.velocities(cs), dt)
            if u1 is not None:
                c1 = self.potential(u1, cs if elliptic else None)
                u2 = self._transport(u1, self.velocities(c1), dt)
                if u2 is not None:
                    break
            dt *= 0.5
            if dt < self.cfg.dt_min:
                raise BlowupSuspected(f"time step underflow at t = {state.t:.6g}", state.t, "dt_underflow")
        un = self._diffuse(0.5 * (us + u2), 0.5 * dt)
        # implicit solves are exact only up to round-off / solver tolerance;
        # restore the pre-step mass multiplicatively
        s = float(un.sum())
        if s > 0:
            un *= mass0 / s
        cn = self.potential(un, c1 if elliptic else None)
        return SimState(state.t + dt, ScalarField(self.grid, un), ScalarField(self.grid, cn), dt,
                        state.step_count + 1)

    def record(self, state: SimState) -> DiagnosticsRecord:
        return record(state.t, state.u, state.c, self.entropy, self.diffusion, self.guard_p)


def step(state: SimState, chemo, diffusion: DiffusionModel, cfg: StepperConfig) -> SimState:
    """One step with ``state.dt`` (kernel tables are cached on the kernel)."""
    stepper = Stepper(state.u.grid, chemo, diffusion, cfg)
    if not cfg.dt_min <= state.dt <= cfg.dt_max:
        raise IntegratorError(f"dt = {state.dt} outside [{cfg.dt_min}, {cfg.dt_max}]")
    return stepper.step(state, state.dt)


Observer = Callable[[SimState, DiagnosticsRecord], None]


def run(initial: ScalarField, chemo, diffusion: DiffusionModel, cfg: StepperConfig, t_end: float,
        observers: Sequence[Observer] = (), observe_every: int = 1,
        observe_times: Sequence[float] | None = None,
        stepper: Stepper | None = None) -> tuple[SimState, list[DiagnosticsRecord]]:
    """Advance to ``t_end`` or to blow-up detection.

    Frames are recorded every ``observe_every`` steps (and at ``t = 0`` and
    ``t_end``); ``observe_times`` adds frames at the listed times, which the
    step size is clipped to hit exactly.  ``BlowupSuspected`` and
    ``BoundaryOverflow`` carry the series recorded so far.
    """
    if t_end < 0:
        raise IntegratorError("t_end must be non-negative")
    if observe_every < 1:
        raise IntegratorError("observe_every must be >= 1")
    st = stepper or Stepper(initial.grid, chemo, diffusion, cfg)
    state = st.initial_state(initial)
    series: list[DiagnosticsRecord] = []
    if t_end == 0:
        return state, series
    targets = sorted(t for t in (observe_times or ()) if 0 < t < t_end) + [t_end]
    ti = 0

    def emit(s: SimState) -> DiagnosticsRecord:
        rec = st.record(s)
        series.append(rec)
        for ob in observers:
            ob(s, rec)
        return rec

    rec0 = emit(state)
    linf0 = rec0.linf
    guard_prev = rec0.lp_guard
    mass0 = float(initial.values.sum())
    h = initial.grid.spacing
    while state.t < t_end * (1 - 1e-14):
        vel = st.velocities(state.c.values)
        dt = adapt_dt(vel, h, cfg, initial.grid.shape)
        raw = min(cfg.dt_max, cfg.cfl_advect * h / max(1e-300, max(float(np.max(np.abs(v))) for v in vel)))
        if dt <= cfg.dt_min and raw < cfg.dt_min:
            rec = st.record(state)
            raise BlowupSuspected(f"time step underflow at t = {state.t:.6g}", state.t, "dt_underflow", rec, series)
        hit = False
        if state.t + dt >= targets[ti] * (1 - 1e-14):
            dt = targets[ti] - state.t
            hit = True
        state = st.step(state, dt)
        if hit:
            state.t = targets[ti]
            ti += 1
        linf = float(state.u.values.max())
        frame = hit or state.step_count % observe_every == 0
        if linf > cfg.blowup_linf_factor * linf0:
            rec = st.record(state)
            raise BlowupSuspected(f"sup norm exceeded {cfg.blowup_linf_factor:g}x initial at t = {state.t:.6g}",
                                  state.t, "linf", rec, series)
        if cfg.ring_tolerance > 0:
            ring = float(state.u.values[st.ring].sum())
            if ring > cfg.ring_tolerance * mass0:
                raise BoundaryOverflow(
                    f"mass fraction {ring / mass0:.2e} reached the boundary ring at t = {state.t:.6g}; enlarge L",
                    state.t, ring / mass0, series)
        guard = None
        if frame:
            rec = emit(state)
            guard = rec.lp_guard
        else:
            from .grid import lp_norm

            guard = lp_norm(state.u, st.guard_p)
        if guard > 2.0 * guard_prev and state.step_count > 1:
            rec = st.record(state)
            raise BlowupSuspected(f"guard norm doubled within one step at t = {state.t:.6g}", state.t,
                                  "guard", rec, series)
        guard_prev = guard
    if series[-1].t != state.t:
        emit(state)
    return state, series
