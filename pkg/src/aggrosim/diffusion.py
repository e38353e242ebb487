"""Diffusion functions ``A(z)``, their regularization, entropy densities and criticality."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .kernels import Kernel, critical_exponent


class DiffusionError(ValueError):
    pass


class IndeterminateCriticality(DiffusionError):
    pass


class DiffusionModel:
    """Admissible diffusion ``A`` with ``A(0) = 0`` and ``A' > 0`` on ``(0, inf)``."""

    exponent: float = 1.0

    def A(self, z):
        raise NotImplementedError

    def A_prime(self, z):
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    @property
    def is_linear(self) -> bool:
        return False

    def admissibility(self, ladder=None) -> dict:
        """Sampled (D1)-(D3) checks with the observed constants."""
        zs = np.array([10.0**k for k in range(0, 9)]) if ladder is None else np.asarray(ladder)
        small = np.logspace(-12, 0, 25)
        ap_big = np.asarray(self.A_prime(zs), dtype=float)
        ap_small = np.asarray(self.A_prime(small), dtype=float)
        return {
            "A0": float(np.asarray(self.A(np.array([0.0])))[0]),
            "positive": bool(np.all(ap_big > 0) and np.all(ap_small > 0)),
            "c": float(ap_big.min()),
            "z_c": float(zs[0]),
            "C_A": float(ap_small.max()),
            "z_A": float(small[-1]),
        }


@dataclass
class Linear(DiffusionModel):
    """``A(z) = coef * z``."""

    coef: float = 1.0

    def A(self, z):
        return self.coef * np.asarray(z, dtype=float)

    def A_prime(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.coef)

    @property
    def is_linear(self) -> bool:
        return True

    def spec(self) -> str:
        return "linear" if self.coef == 1.0 else f"linear:k={self.coef!r}"


@dataclass
class PorousMedium(DiffusionModel):
    """``A(z) = coef * z^m`` with ``m > 1``."""

    m: float = 2.0
    coef: float = 1.0

    def __post_init__(self):
        if not self.m > 1:
            raise DiffusionError("porous-medium exponent must exceed 1")

    @property
    def exponent(self) -> float:  # type: ignore[override]
        return self.m

    def A(self, z):
        return self.coef * np.power(np.asarray(z, dtype=float), self.m)

    def A_prime(self, z):
        return self.coef * self.m * np.power(np.asarray(z, dtype=float), self.m - 1.0)

    def spec(self) -> str:
        return f"pme:m={self.m!r}"


class Custom(DiffusionModel):
    """User-supplied ``A`` and ``A'`` (callables, or a CSV table ``z,A,Aprime``)."""

    def __init__(self, A: Callable, A_prime: Callable, name: str = "custom", exponent: float = 1.0):
        self._A = A
        self._Ap = A_prime
        self.name = name
        self.exponent = exponent

    @classmethod
    def from_csv(cls, path: str) -> "Custom":
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, skiprows=_header_rows(path))
        z, a, ap = data[:, 0], data[:, 1], data[:, 2]
        if np.any(np.diff(z) <= 0):
            raise DiffusionError("custom diffusion table needs strictly increasing z")
        fa = PchipInterpolator(z, a, extrapolate=False)
        fap = PchipInterpolator(z, ap, extrapolate=False)
        zmax, amax, apmax = z[-1], a[-1], ap[-1]

        def A(x):
            x = np.asarray(x, dtype=float)
            return np.where(x <= zmax, np.nan_to_num(fa(np.minimum(x, zmax))), amax + apmax * (x - zmax))

        def Ap(x):
            x = np.asarray(x, dtype=float)
            return np.where(x <= zmax, np.nan_to_num(fap(np.minimum(x, zmax))), apmax)

        return cls(A, Ap, name=f"custom:{path}")

    def A(self, z):
        return np.asarray(self._A(np.asarray(z, dtype=float)), dtype=float)

    def A_prime(self, z):
        return np.asarray(self._Ap(np.asarray(z, dtype=float)), dtype=float)

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


@dataclass
class Regularized(DiffusionModel):
    """``A^eps(z) = A(z) + (3/2) eps z``: the mid-point of the band ``[A'+eps, A'+2eps]``."""

    base: DiffusionModel
    epsilon: float

    @property
    def exponent(self) -> float:  # type: ignore[override]
        return self.base.exponent

    def A(self, z):
        return self.base.A(z) + 1.5 * self.epsilon * np.asarray(z, dtype=float)

    def A_prime(self, z):
        return self.base.A_prime(z) + 1.5 * self.epsilon

    @property
    def is_linear(self) -> bool:
        return self.base.is_linear

    def spec(self) -> str:
        return self.base.spec()


def regularize(model: DiffusionModel, epsilon: float) -> Regularized:
    if not epsilon > 0:
        raise DiffusionError("regularization epsilon must be positive")
    return Regularized(model, float(epsilon))


# ------------------------------------------------------------------ entropy


@dataclass
class EntropyDensity:
    """``Phi`` with ``Phi'' = A'(z)/z``, ``Phi'(1) = 0`` and ``Phi(0) = 0``.

    ``h(z) = int_1^z A'(s)/s ds`` equals ``Phi'``; integrating by parts gives
    ``Phi(z) = z h(z) - A(z)``, which is what every model evaluates.
    """

    model: DiffusionModel
    Phi: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]

    def __call__(self, z):
        return self.Phi(z)


def _xlogx(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = z[pos] * np.log(z[pos])
    return out


def _closed_form(model: DiffusionModel):
    """``(Phi, h)`` for linear / porous-medium models, possibly regularized."""
    if isinstance(model, Linear):
        k = model.coef

        def Phi(z):
            z = np.asarray(z, dtype=float)
            return k * (_xlogx(z) - z)

        def h(z):
            return k * np.log(np.asarray(z, dtype=float))

        return Phi, h
    if isinstance(model, PorousMedium):
        m, k = model.m, model.coef

        def Phi(z):
            z = np.asarray(z, dtype=float)
            return k * (np.power(z, m) - m * z) / (m - 1.0)

        def h(z):
            z = np.asarray(z, dtype=float)
            return k * m * (np.power(z, m - 1.0) - 1.0) / (m - 1.0)

        return Phi, h
    if isinstance(model, Regularized):
        inner = _closed_form(model.base)
        if inner is None:
            return None
        P0, h0 = inner
        e = 1.5 * model.epsilon
        return (lambda z: P0(z) + e * (_xlogx(z) - np.asarray(z, dtype=float)),
                lambda z: h0(z) + e * np.log(np.asarray(z, dtype=float)))
    return None


def _quadrature_entropy(model: DiffusionModel, z_max: float = 1e8):
    """Tabulated ``h`` on a log grid by adaptive quadrature; ``Phi = z h - A``."""
    small = np.logspace(-14, -6, 9)
    ap_small = model.A_prime(small)
    if not np.all(np.isfinite(ap_small)) or ap_small.max() > 1e6 * max(1.0, float(model.A_prime(np.array([1.0]))[0])):
        raise DiffusionError("A'(s)/s is not integrable against the entropy construction: A' must stay bounded near 0 (D3)")
    nodes = np.unique(np.concatenate([np.logspace(-14, math.log10(z_max), 1101), [1.0]]))
    i1 = int(np.searchsorted(nodes, 1.0))
    f = lambda s: float(model.A_prime(np.array([s]))[0]) / s
    hv = np.zeros_like(nodes)
    for i in range(i1 + 1, nodes.size):
        val, _ = integrate.quad(f, nodes[i - 1], nodes[i], epsabs=1e-10, epsrel=1e-12)
        hv[i] = hv[i - 1] + val
    for i in range(i1 - 1, -1, -1):
        val, _ = integrate.quad(f, nodes[i], nodes[i + 1], epsabs=1e-10, epsrel=1e-12)
        hv[i] = hv[i + 1] - val
    interp = PchipInterpolator(np.log(nodes), hv, extrapolate=True)
    zlo = nodes[0]
    ap0 = float(model.A_prime(np.array([zlo]))[0])

    def h(z):
        z = np.asarray(z, dtype=float)
        zz = np.maximum(z, zlo)
        out = interp(np.log(zz))
        low = z < zlo
        if np.any(low):
            # A' ~ A'(0) below the table
            out = np.where(low, hv[0] + ap0 * np.log(np.maximum(z, 1e-300) / zlo), out)
        return out

    def Phi(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = z[pos] * h(z[pos]) - model.A(z[pos])
        return out

    return Phi, h


def entropy_density(model: DiffusionModel) -> EntropyDensity:
    closed = _closed_form(model)
    Phi, h = closed if closed is not None else _quadrature_entropy(model)
    return EntropyDensity(model, Phi, h)


# -------------------------------------------------------------- criticality


class Criticality(enum.Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


@dataclass
class Classification:
    label: Criticality
    liminf_estimate: float
    tail_slope: float
    m_star: float
    samples: np.ndarray


SLOPE_TOL = 0.05


def classify(model: DiffusionModel, kernel: Kernel | None, dim: int, m_star: float | None = None) -> Classification:
    """Estimate the criticality of ``(A, K)`` from ``A'(z)/z^{m*-1}`` at ``z = 10^2..10^8``.

    The label comes from the log-log slope over the last three samples
    (``> 0.05`` subcritical, ``< -0.05`` supercritical, otherwise critical with
    the minimum of those samples as the liminf estimate).  ``kernel=None``
    means the variable-coefficient system, for which ``m* = 2 - 2/d``.
    """
    if m_star is None:
        m_star = critical_exponent(kernel) if kernel is not None else 2.0 - 2.0 / dim
    z = 10.0 ** np.arange(2, 9)
    rho = np.asarray(model.A_prime(z), dtype=float) / z ** (m_star - 1.0)
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise IndeterminateCriticality("ratio A'(z)/z^(m*-1) is not positive and finite on the ladder")
    lz, lr = np.log(z[-3:]), np.log(rho[-3:])
    local = np.diff(lr) / np.diff(lz)
    if local[0] * local[1] < 0 and min(abs(local[0]), abs(local[1])) > SLOPE_TOL:
        raise IndeterminateCriticality(f"oscillating tail slopes {local.tolist()}")
    slope = float(np.polyfit(lz, lr, 1)[0])
    if slope > SLOPE_TOL:
        label = Criticality.SUBCRITICAL
        est = math.inf
    elif slope < -SLOPE_TOL:
        label = Criticality.SUPERCRITICAL
        est = 0.0
    else:
        label = Criticality.CRITICAL
        est = float(rho[-3:].min())
    return Classification(label, est, slope, m_star, rho)


class CriticalMass(NamedTuple):
    value: float | None
    reason: str


def critical_mass(model: DiffusionModel, kernel: Kernel, dim: int) -> CriticalMass:
    """Critical mass from ``lim Phi(z)/(z log z) = (c / 2d) M_c`` for ``K ~ -c log|x|``."""
    m_star = critical_exponent(kernel)
    if m_star != 1.0:
        return CriticalMass(None, f"m* = {m_star:g} != 1: no logarithmic critical mass; "
                                  "only small data in the critical norm is covered")
    c = kernel.log_strength
    if c <= 0:
        return CriticalMass(None, "kernel has no logarithmic singularity (c = 0)")
    cls = classify(model, kernel, dim, m_star=m_star)
    if cls.label is not Criticality.CRITICAL:
        return CriticalMass(None, f"problem is {cls.label.value}; Phi(z)/(z log z) has no finite positive limit")
    if isinstance(model, Linear):
        limit = model.coef
    else:
        ent = entropy_density(model)
        zs = np.array([1e6, 1e7, 1e8])
        ratios = ent.Phi(zs) / (zs * np.log(zs))
        # Phi/(z log z) = h/log z - A/(z log z) -> lim A'; the drift is O(1/log z)
        limit = float(cls.liminf_estimate)
        if not np.all(np.isfinite(ratios)):
            return CriticalMass(None, "entropy ratio not finite")
    return CriticalMass(2.0 * dim * limit / c, "ok")


# ---------------------------------------------------------------- config


def parse_diffusion(text: str) -> DiffusionModel:
    """``linear[:k=<real>] | pme:m=<real> | custom:<path>``."""
    t = text.strip()
    if t == "linear":
        return Linear()
    if t.startswith("linear:"):
        k, sep, v = t[7:].partition("=")
        if sep != "=" or k.strip() != "k":
            raise DiffusionError(f"expected 'linear:k=<real>', got {text!r}")
        try:
            return Linear(float(v))
        except ValueError as exc:
            raise DiffusionError(f"malformed number {v!r}") from exc
    if t.startswith("pme:"):
        k, sep, v = t[4:].partition("=")
        if sep != "=" or k.strip() != "m":
            raise DiffusionError(f"expected 'pme:m=<real>', got {text!r}")
        try:
            return PorousMedium(float(v))
        except ValueError as exc:
            raise DiffusionError(f"malformed number {v!r}") from exc
    if t.startswith("custom:"):
        return Custom.from_csv(t[7:])
    raise DiffusionError(f"unknown diffusion spec {text!r}")
