"""Radial interaction kernels, their singularity class, mollification and grid tables.

All kernels are attractive: ``k(r)`` is non-increasing.  In two dimensions the
Newtonian kernel is ``-(1/2pi) log r``, the fundamental solution of ``-Laplace``,
so ``c = K * u`` solves ``-Laplace c = u`` in every dimension.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .grid import GridSpec, ScalarField

LADDER = 2.0 ** np.arange(-20, 11)


class KernelError(ValueError):
    pass


@dataclass(eq=False)
class Kernel:
    """Radial profile ``K(x) = k(|x|)`` in dimension ``dim``.

    Subclasses provide ``k``, ``dk`` and ``d2k`` (vectorized in ``r``).
    ``singularity_power`` is ``s`` with ``K = O(|x|^-s)`` at the origin; ``s = 0``
    means logarithmic or bounded, told apart by ``log_strength``.
    """

    dim: int
    _tables: dict = field(default_factory=dict, init=False, repr=False)

    singular = True

    def k(self, r):
        raise NotImplementedError

    def dk(self, r):
        raise NotImplementedError

    def d2k(self, r):
        raise NotImplementedError

    @property
    def singularity_power(self) -> float:
        return 0.0

    @property
    def log_strength(self) -> float:
        """``c`` in ``K(x) = -c log|x| + o(log|x|)``; zero if not logarithmic."""
        return 0.0

    def _check_r(self, r):
        r = np.asarray(r, dtype=float)
        if self.singular and np.any(r <= 0):
            raise KernelError("r must be positive for a singular kernel")
        return r

    def eval(self, r):
        return self.k(self._check_r(r))

    def grad_radial(self, r):
        return self.dk(self._check_r(r))

    def lap(self, r):
        r = self._check_r(r)
        return self.d2k(r) + (self.dim - 1) * self.dk(r) / r

    def virial_profile(self, r):
        """``r k'(r)``, i.e. ``z . grad K(z)`` at ``|z| = r``."""
        r = np.asarray(r, dtype=float)
        return r * self.dk(r)

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(eq=False)
class Newtonian(Kernel):
    """Fundamental solution of ``-Laplace``: ``-(1/2pi) log r`` (d=2), ``C_d r^{2-d}`` (d>=3)."""

    @property
    def coefficient(self) -> float:
        d = self.dim
        if d == 2:
            return 1.0 / (2.0 * math.pi)
        return math.gamma(d / 2 + 1) / (d * (d - 2) * math.pi ** (d / 2))

    def k(self, r):
        c = self.coefficient
        if self.dim == 2:
            return -c * np.log(r)
        return c * np.power(r, 2.0 - self.dim)

    def dk(self, r):
        c = self.coefficient
        if self.dim == 2:
            return -c / r
        return c * (2.0 - self.dim) * np.power(r, 1.0 - self.dim)

    def d2k(self, r):
        c = self.coefficient
        if self.dim == 2:
            return c / r**2
        d = self.dim
        return c * (2.0 - d) * (1.0 - d) * np.power(r, -float(d))

    @property
    def singularity_power(self) -> float:
        return float(self.dim - 2)

    @property
    def log_strength(self) -> float:
        return self.coefficient if self.dim == 2 else 0.0

    def spec(self) -> str:
        return "newtonian"


@dataclass(eq=False)
class Logarithmic(Kernel):
    """``k(r) = -c log r``; ``c = 0`` is the zero kernel (pure diffusion)."""

    strength: float = 1.0

    def __post_init__(self):
        if self.strength < 0:
            raise KernelError("log kernel strength must be >= 0")
        self.singular = self.strength > 0

    def k(self, r):
        if self.strength == 0:
            return np.zeros_like(np.asarray(r, dtype=float))
        return -self.strength * np.log(r)

    def dk(self, r):
        return -self.strength / np.asarray(r, dtype=float)

    def d2k(self, r):
        return self.strength / np.asarray(r, dtype=float) ** 2

    def virial_profile(self, r):
        return np.full_like(np.asarray(r, dtype=float), -self.strength)

    @property
    def log_strength(self) -> float:
        return self.strength

    def spec(self) -> str:
        return f"log:c={self.strength!r}"


@dataclass(eq=False)
class PowerLaw(Kernel):
    """``k(r) = r^{-s}`` with ``0 < s``; ``s = d/p`` in the critical-exponent notation."""

    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise KernelError("power-law exponent s must be positive")

    def k(self, r):
        return np.power(r, -self.s)

    def dk(self, r):
        return -self.s * np.power(r, -self.s - 1.0)

    def d2k(self, r):
        return self.s * (self.s + 1.0) * np.power(r, -self.s - 2.0)

    @property
    def singularity_power(self) -> float:
        return self.s

    def spec(self) -> str:
        return f"power:s={self.s!r}"


def _fit_singularity(r: np.ndarray, k: np.ndarray) -> tuple[str, float]:
    """Classify the small-r behavior from samples.

    Returns ``("log", c)``, ``("power", s)`` or ``("bounded", 0)``.  Two models
    are fitted over the sample window: ``k = a - c log r`` and
    ``log k = b - s log r``; the better fit wins, and power slopes below 0.05
    count as bounded.
    """
    lr = np.log(r)
    A = np.vstack([np.ones_like(lr), lr]).T
    coef_log, *_ = np.linalg.lstsq(A, k, rcond=None)
    res_log = np.linalg.norm(A @ coef_log - k) / max(np.linalg.norm(k - k.mean()), 1e-300)
    if np.all(k > 0):
        lk = np.log(k)
        coef_pow, *_ = np.linalg.lstsq(A, lk, rcond=None)
        res_pow = np.linalg.norm(A @ coef_pow - lk) / max(np.linalg.norm(lk - lk.mean()), 1e-300)
    else:
        coef_pow, res_pow = np.array([0.0, 0.0]), np.inf
    spread = np.ptp(k) / max(np.abs(k).max(), 1e-300)
    if spread < 1e-8:
        return "bounded", 0.0
    if res_log <= res_pow:
        c = -coef_log[1]
        return ("log", float(c)) if c > 1e-12 else ("bounded", 0.0)
    s = -coef_pow[1]
    if abs(s) < 0.05:
        return "bounded", 0.0
    return "power", float(s)


@dataclass(eq=False)
class TabulatedRadial(Kernel):
    """Kernel from samples ``(r_i, k_i)`` with strictly increasing ``r``.

    Interpolated by monotone cubics.  Below the first sample the fitted
    small-r model (log, power or constant) continues the profile; beyond the
    last sample the profile is held constant.
    """

    r: np.ndarray = field(default_factory=lambda: np.array([1.0, 2.0]))
    values: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0]))
    name: str = "table"

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.r.ndim != 1 or self.r.shape != self.values.shape or self.r.size < 2:
            raise KernelError("table needs matching 1-D r and k columns with >= 2 rows")
        if np.any(np.diff(self.r) <= 0) or self.r[0] <= 0:
            raise KernelError("table r must be positive and strictly increasing")
        lr = np.log(self.r)
        self._interp = PchipInterpolator(lr, self.values, extrapolate=False)
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)
        lo, hi = 1e-6, 1e-3
        sel = (self.r >= lo) & (self.r <= hi)
        if sel.sum() < 3:
            sel = np.zeros_like(self.r, dtype=bool)
            sel[: min(8, self.r.size)] = True
        self._cls, self._par = _fit_singularity(self.r[sel], self.values[sel])
        self.singular = self._cls != "bounded"
        r0, k0 = self.r[0], self.values[0]
        if self._cls == "log":
            self._small = lambda r: k0 - self._par * np.log(r / r0)
            self._small_d = lambda r: -self._par / r
            self._small_d2 = lambda r: self._par / r**2
        elif self._cls == "power":
            s = self._par
            self._small = lambda r: k0 * (r / r0) ** (-s)
            self._small_d = lambda r: -s * k0 * (r / r0) ** (-s) / r
            self._small_d2 = lambda r: s * (s + 1) * k0 * (r / r0) ** (-s) / r**2
        else:
            self._small = lambda r: np.full_like(r, k0)
            self._small_d = lambda r: np.zeros_like(r)
            self._small_d2 = lambda r: np.zeros_like(r)

    @classmethod
    def from_csv(cls, path: str, dim: int) -> "TabulatedRadial":
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, skiprows=_header_rows(path))
        return cls(dim, data[:, 0], data[:, 1], name=f"table:{path}")

    def _piecewise(self, r, small, inner, large):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < self.r[0]
        hi = r > self.r[-1]
        mid = ~(lo | hi)
        out[lo] = small(r[lo])
        out[mid] = inner(r[mid])
        out[hi] = large(r[hi])
        return out

    def k(self, r):
        return self._piecewise(r, self._small, lambda x: self._interp(np.log(x)),
                               lambda x: np.full_like(x, self.values[-1]))

    def dk(self, r):
        return self._piecewise(r, self._small_d, lambda x: self._d1(np.log(x)) / x, np.zeros_like)

    def d2k(self, r):
        def inner(x):
            lx = np.log(x)
            return (self._d2(lx) - self._d1(lx)) / x**2

        return self._piecewise(r, self._small_d2, inner, np.zeros_like)

    @property
    def singularity_power(self) -> float:
        return self._par if self._cls == "power" else 0.0

    @property
    def log_strength(self) -> float:
        return self._par if self._cls == "log" else 0.0

    def spec(self) -> str:
        return self.name


def _header_rows(path: str) -> int:
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(t) for t in first.split(",")]
        return 0
    except ValueError:
        return 1


# ------------------------------------------------------------ classification


def critical_exponent(kernel: Kernel) -> float:
    """``m* = (p + 1)/p`` with ``s = d/p``; ``m* = 1`` for log or bounded kernels.

    Values above ``2 - 2/d`` (``s > d - 2``) are clamped with a warning.  A
    bounded kernel returns 1 with a "no singularity" warning.
    """
    d = kernel.dim
    s = kernel.singularity_power
    if s == 0.0:
        if kernel.log_strength == 0.0:
            warnings.warn("kernel has no singularity at the origin; m* = 1", stacklevel=2)
        return 1.0
    p = d / s
    m_star = (p + 1.0) / p
    upper = 2.0 - 2.0 / d
    if m_star > upper:
        warnings.warn(f"singularity power {s} exceeds d-2; m* clamped to {upper}", stacklevel=2)
        return upper
    return m_star


@dataclass
class AdmissibilityReport:
    monotone_violations: list[float]
    second_derivative_ratio: float  # max over the ladder of |k''(r)| r^d
    ok: bool


def admissibility_audit(kernel: Kernel, ladder: np.ndarray = LADDER) -> AdmissibilityReport:
    """Sampled checks of the non-increasing profile and ``|k''| <~ r^{-d}``."""
    dk = np.asarray(kernel.dk(ladder))
    bad = [float(r) for r, g in zip(ladder, dk) if g > 1e-14 * max(1.0, abs(g))]
    ratio = float(np.max(np.abs(kernel.d2k(ladder)) * ladder**kernel.dim))
    return AdmissibilityReport(bad, ratio, ok=not bad)


# ---------------------------------------------------------------- mollifier


def cutoff(r):
    """Canonical radial cut-off: 1 on ``r <= 1/2``, in (0,1] on ``r < 1``, 0 beyond."""
    r = np.asarray(r, dtype=float)
    t = np.clip(2.0 * r - 1.0, 0.0, None)
    out = np.zeros_like(r)
    inside = t < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


_CUTOFF_MASS: dict[int, float] = {}


def cutoff_mass(d: int) -> float:
    """``int_{R^d} cutoff(|y|) dy``."""
    if d not in _CUTOFF_MASS:
        val, _ = integrate.quad(lambda t: float(cutoff(t)) * t ** (d - 1), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
        _CUTOFF_MASS[d] = _sphere_area(d) * val
    return _CUTOFF_MASS[d]


def _shell_average(kernel: Kernel, r: float, s: float) -> float:
    """Average of ``k(|x - y|)`` over ``|y| = s`` with ``|x| = r``."""
    d = kernel.dim
    if s == 0.0:
        return float(kernel.k(np.array([r]))[0])
    if r == 0.0:
        return float(kernel.k(np.array([s]))[0])
    if d == 3:
        lo, hi = abs(r - s), r + s
        f = lambda t: t * float(kernel.k(np.array([max(t, 1e-300)]))[0])
        val, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
        return val / (2.0 * r * s)
    f = lambda phi: float(kernel.k(np.array([max(math.sqrt(max(r * r + s * s - 2 * r * s * math.cos(phi), 0.0)), 1e-300)]))[0])
    val, _ = integrate.quad(f, 0.0, math.pi, epsabs=1e-12, epsrel=1e-10, limit=200)
    return val / math.pi


def mollified_value(kernel: Kernel, r: float, eps: float) -> tuple[float, float]:
    """``K^eps`` at radius ``r < 1`` and the quadrature error estimate."""
    d = kernel.dim
    delta = eps * float(cutoff(np.array([r]))[0])
    # K is smooth near |x| = 1, so a negligible radius changes it by O(delta^2)
    if delta <= 1e-8:
        return float(kernel.k(np.array([r]))[0]), 0.0
    # s = delta * sigma keeps the integrand O(1) however small delta is
    area = _sphere_area(d) / cutoff_mass(d)
    f = lambda sig: float(cutoff(np.array([sig]))[0]) * sig ** (d - 1) * _shell_average(kernel, r, delta * sig)
    pts = [r / delta] if 0.0 < r < delta else None
    val, err = integrate.quad(f, 0.0, 1.0, points=pts, epsabs=1e-11, epsrel=1e-9, limit=200)
    return area * val, area * err


@dataclass(eq=False)
class MollifiedKernel(Kernel):
    """``K^eps``: variable-radius mollification of ``base`` inside the unit ball.

    The mollifier radius is ``eps * cutoff(|x|)``, shrinking to zero at
    ``|x| = 1`` so the profile joins ``base`` smoothly; outside the unit ball
    ``base`` is used verbatim.
    """

    base: Kernel | None = None
    epsilon: float = 0.1
    nodes: int = 97

    def __post_init__(self):
        if self.base is None:
            raise KernelError("mollify needs a base kernel")
        if not 0.0 < self.epsilon <= 0.25:
            raise KernelError("epsilon must lie in (0, 1/4]")
        self.singular = False
        # cluster nodes near r = 1 where the radius shrinks fastest
        t = np.linspace(0.0, 1.0, self.nodes)
        rr = np.sin(0.5 * math.pi * t)
        vals, errs = [], []
        for ri in rr[:-1]:
            v, e = mollified_value(self.base, float(ri), self.epsilon)
            vals.append(v)
            errs.append(e)
        vals.append(float(self.base.k(np.array([1.0]))[0]))
        err = max(errs)
        if not np.all(np.isfinite(vals)) or err > 1e-6 * (1.0 + max(abs(v) for v in vals)):
            raise KernelError(f"mollifier quadrature did not converge (residual estimate {err:.3e})")
        self.quadrature_error = err
        self.r_nodes = rr
        self._interp = PchipInterpolator(rr, np.asarray(vals))
        self._d1 = self._interp.derivative(1)
        self._d2 = self._interp.derivative(2)

    def _split(self, r, inner, outer):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        m = r < 1.0
        out[m] = inner(r[m])
        out[~m] = outer(r[~m])
        return out

    def k(self, r):
        return self._split(r, self._interp, self.base.k)

    def dk(self, r):
        return self._split(r, self._d1, self.base.dk)

    def d2k(self, r):
        return self._split(r, self._d2, self.base.d2k)

    def eval(self, r):
        return self.k(r)

    def spec(self) -> str:
        return self.base.spec()


def mollify(base: Kernel, epsilon: float) -> MollifiedKernel:
    return MollifiedKernel(base.dim, base=base, epsilon=epsilon)


# --------------------------------------------------------------- grid tables


def origin_cell_average(profile: Callable[[np.ndarray], np.ndarray], h: float, dim: int, order: int = 48) -> float:
    """Average of ``g(|x|)`` over the cell ``[-h/2, h/2)^d``.

    By symmetry this is the average over ``[0, h/2]^d``, which splits into
    ``d`` pyramids with apex at the origin.  The Duffy map
    ``x = a s (1, t)`` removes the point singularity; ``s = w^2`` smooths the
    remaining log/power behavior before tensor Gauss-Legendre quadrature.
    """
    a = 0.5 * h
    xw, ww = leggauss(order)
    w = 0.5 * (xw + 1.0)
    wq = 0.5 * ww
    xt, wt = leggauss(max(order // 2, 8))
    t = 0.5 * (xt + 1.0)
    wtq = 0.5 * wt
    tgrids = np.meshgrid(*([t] * (dim - 1)), indexing="ij")
    twts = np.prod(np.meshgrid(*([wtq] * (dim - 1)), indexing="ij"), axis=0)
    rho = np.sqrt(1.0 + sum(tg**2 for tg in tgrids))
    s = w**2
    jac = 2.0 * w * s ** (dim - 1)  # ds = 2w dw, times s^{d-1}
    rr = a * s[:, None] * rho.ravel()[None, :]
    vals = np.asarray(profile(rr))
    integral = np.sum(vals * (wq * jac)[:, None] * twts.ravel()[None, :])
    return float(dim * integral)


@dataclass(eq=False)
class KernelTable:
    """Kernel values at cell-center offsets on the doubled ``(2n)^d`` domain.

    ``values`` is stored in FFT (wrap-around) order: index ``j`` is offset
    ``j h`` for ``j < n`` and ``(j - 2n) h`` otherwise.
    """

    grid: GridSpec
    values: np.ndarray

    def centered(self) -> np.ndarray:
        return np.fft.fftshift(self.values)

    def at_offset(self, offset: tuple[int, ...]) -> float:
        return float(self.values[tuple(o % (2 * self.grid.n) for o in offset)])


def radial_table(profile: Callable, grid: GridSpec, origin: float | None = None) -> KernelTable:
    n2 = 2 * grid.n
    j = np.arange(n2)
    off = np.where(j < grid.n, j, j - n2) * grid.spacing
    mesh = np.meshgrid(*([off] * grid.dim), indexing="ij", sparse=True)
    r = np.sqrt(sum(m**2 for m in mesh))
    r = np.broadcast_to(r, (n2,) * grid.dim)
    vals = np.empty(r.shape)
    nz = r > 0
    vals[nz] = profile(r[nz])
    if origin is None:
        origin = origin_cell_average(profile, grid.spacing, grid.dim)
    vals[(0,) * grid.dim] = origin
    return KernelTable(grid, vals)


def sample_on_grid(kernel: Kernel, grid: GridSpec) -> KernelTable:
    key = ("k", grid)
    if key not in kernel._tables:
        kernel._tables[key] = radial_table(kernel.k, grid)
    return kernel._tables[key]


def virial_table(kernel: Kernel, grid: GridSpec) -> KernelTable:
    """Table of ``z . grad K(z)`` for the second-moment rate."""
    key = ("virial", grid)
    if key not in kernel._tables:
        kernel._tables[key] = radial_table(kernel.virial_profile, grid)
    return kernel._tables[key]


# ---------------------------------------------------------------- config


def parse_kernel(text: str, dim: int) -> Kernel:
    """``newtonian | log:c=<real> | power:s=<real> | table:<path>``."""
    t = text.strip()
    if t == "newtonian":
        return Newtonian(dim)
    if t.startswith("log:"):
        return Logarithmic(dim, strength=_kv_float(t[4:], "c"))
    if t.startswith("power:"):
        return PowerLaw(dim, s=_kv_float(t[6:], "s"))
    if t.startswith("table:"):
        return TabulatedRadial.from_csv(t[6:], dim)
    raise KernelError(f"unknown kernel spec {text!r}")


def _kv_float(text: str, key: str) -> float:
    k, sep, v = text.partition("=")
    if sep != "=" or k.strip() != key:
        raise KernelError(f"expected '{key}=<real>', got {text!r}")
    try:
        return float(v)
    except ValueError as exc:
        raise KernelError(f"malformed number {v!r}") from exc
