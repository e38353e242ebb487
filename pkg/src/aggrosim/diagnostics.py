"""Scalar functionals: free energy, dissipation, second-moment rate, entropy
lower bound, log-HLS and Gagliardo-Nirenberg probes, self-similar variables."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .chemo import convolution_operator, convolve_potential
from .diffusion import DiffusionModel, EntropyDensity, Linear, PorousMedium
from .grid import GridSpec, ScalarField, integrate, lp_norm, second_moment
from .kernels import Kernel, Logarithmic, Newtonian, origin_cell_average, virial_table

DISSIPATION_FLOOR = 1e-12


class DiagnosticsError(ValueError):
    pass


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    linf: float
    l2: float
    lp_guard: float
    m2: float
    free_energy: float
    dissipation: float
    entropy: float
    interaction: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[float]:
        return list(asdict(self).values())


def _xlogx(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def free_energy(u: ScalarField, c: ScalarField, entropy: EntropyDensity) -> tuple[float, float, float]:
    """``(S, W, F)`` with ``S = int Phi(u)``, ``W = 1/2 int u c`` and ``F = S - W``."""
    S = integrate(u.with_values(np.asarray(entropy(u.values), dtype=float)))
    W = 0.5 * integrate(u.with_values(u.values * c.values))
    return S, W, S - W


def dissipation(u: ScalarField, c: ScalarField, model: DiffusionModel, floor: float = DISSIPATION_FLOOR) -> float:
    """``int |grad A(u) - u grad c|^2 / u`` evaluated on interior faces.

    Face density is the arithmetic mean of the two cells; faces below ``floor``
    contribute nothing.
    """
    h = u.grid.spacing
    Au = np.asarray(model.A(u.values), dtype=float)
    total = 0.0
    for k in range(u.grid.dim):
        lo = [slice(None)] * u.grid.dim
        hi = [slice(None)] * u.grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        uf = 0.5 * (u.values[tuple(lo)] + u.values[tuple(hi)])
        j = np.diff(Au, axis=k) / h - uf * np.diff(c.values, axis=k) / h
        live = uf >= floor
        total += float(np.sum(j[live] ** 2 / uf[live]))
    return total * u.grid.cell_volume


def virial_rate(u: ScalarField, kernel: Kernel, model: DiffusionModel,
                m2_history: Sequence[tuple[float, float]] | None = None) -> tuple[float, float]:
    """Predicted ``dM2/dt = 2d int A(u) + int int u u (x-y).grad K(x-y)``.

    The double integral is ``int u (V * u)`` with ``V(z) = z . grad K(z)``.
    ``m2_history`` holds ``(t, M2)`` pairs; the last two give the measured
    difference quotient (``nan`` without history).
    """
    g = u.grid
    diff_term = 2.0 * g.dim * integrate(u.with_values(np.asarray(model.A(u.values), dtype=float)))
    table = virial_table(kernel, g)
    from scipy import fft

    shape2 = table.values.shape
    conv = fft.irfftn(fft.rfftn(u.values, s=shape2) * fft.rfftn(table.values), s=shape2)
    conv = conv[(slice(0, g.n),) * g.dim] * g.cell_volume
    agg_term = float(np.sum(u.values * conv)) * g.cell_volume
    measured = math.nan
    if m2_history is not None and len(m2_history) >= 2:
        (t0, a), (t1, b) = m2_history[-2], m2_history[-1]
        if t1 > t0:
            measured = (b - a) / (t1 - t0)
    return diff_term + agg_term, measured


# ----------------------------------------------------------- entropy bound


@dataclass
class EntropyBoundResult:
    lhs: float
    rhs: float
    ok: bool


def entropy_lower_bound_check(u: ScalarField, epsilon: float) -> EntropyBoundResult:
    """``int u log u >= M log(eps^{d/2} M / pi^{d/2}) - eps M2``."""
    if np.any(u.values < 0):
        raise DiagnosticsError("entropy bound requires u >= 0")
    d = u.grid.dim
    M = integrate(u)
    if not M > 0:
        raise DiagnosticsError("entropy bound requires positive mass")
    lhs = integrate(u.with_values(_xlogx(u.values)))
    rhs = M * math.log(epsilon ** (d / 2) * M / math.pi ** (d / 2)) - epsilon * second_moment(u)
    return EntropyBoundResult(lhs, rhs, lhs >= rhs - 1e-8 * (1.0 + abs(rhs)))


# ------------------------------------------------------------- log-HLS probe


@dataclass
class LogHLSReport:
    scales: list[float]
    Q: list[float]
    interaction: list[float]
    entropy: list[float]

    @property
    def max_Q(self) -> float:
        return max(self.Q) if self.Q else 0.0

    @property
    def variation(self) -> float:
        """Relative spread of ``Q`` over the scales ``<= 1``."""
        q = [v for s, v in zip(self.scales, self.Q) if s <= 1.0]
        if len(q) < 2:
            return 0.0
        ref = max(abs(v) for v in q)
        return (max(q) - min(q)) / ref if ref > 0 else 0.0

    @property
    def stable(self) -> bool:
        return bool(np.all(np.isfinite(self.Q))) and self.variation <= 0.10


def log_interaction(f: ScalarField) -> float:
    """``-int int f(x) f(y) log|x - y|`` through the discrete convolution."""
    kern = Logarithmic(f.grid.dim, strength=1.0)
    c = convolve_potential(kern, f)
    return float(np.sum(f.values * c.values)) * f.grid.cell_volume


def log_interaction_bruteforce(f: ScalarField) -> float:
    """Direct double sum (test oracle; ``O(N^2)``, use ``n <= 64``).

    The self-interaction of a cell uses the same cell average of ``log|z|``
    as the convolution table.
    """
    g = f.grid
    pts = np.stack([np.broadcast_to(m, g.shape).ravel() for m in g.mesh()], axis=1)
    w = f.values.ravel() * g.cell_volume
    diag = origin_cell_average(lambda r: -np.log(r), g.spacing, g.dim)
    total = 0.0
    for start in range(0, len(w), 512):
        blk = pts[start:start + 512]
        r = np.sqrt(((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        with np.errstate(divide="ignore"):
            k = -np.log(r)
        idx = np.arange(blk.shape[0])
        k[idx, start + idx] = diag
        total += float(w[start:start + 512] @ (k @ w))
    return total


def log_hls_probe(f: ScalarField | Callable, family_scales: Sequence[float], grid: GridSpec | None = None) -> LogHLSReport:
    """``Q(lam) = -int int f_lam f_lam log|x-y| - (M/d) int f_lam log f_lam``
    for ``f_lam(x) = lam^{-d} f(x/lam)``.

    ``f`` is either a callable of the coordinates (sampled exactly at each
    scale on ``grid``) or a field, which is resampled by linear interpolation
    and renormalized to its mass.
    """
    from scipy.ndimage import map_coordinates

    if isinstance(f, ScalarField):
        grid = f.grid
    elif grid is None:
        raise DiagnosticsError("a grid is required when f is a callable")
    d = grid.dim
    Qs, Is, Es = [], [], []
    for lam in family_scales:
        if not lam > 0:
            raise DiagnosticsError("scales must be positive")
        if isinstance(f, ScalarField):
            M = integrate(f)
            # grid coordinates of x / lam in index space
            coords = [(m / lam + grid.half_width) / grid.spacing - 0.5 for m in grid.mesh()]
            coords = np.stack([np.broadcast_to(cg, grid.shape) for cg in coords])
            vals = np.maximum(map_coordinates(f.values, coords, order=1, mode="constant", cval=0.0), 0.0)
            mv = float(vals.sum()) * grid.cell_volume
            vals = vals * (M / mv) if mv > 0 else vals
        else:
            vals = lam ** (-d) * np.broadcast_to(f(*[m / lam for m in grid.mesh()]), grid.shape).astype(float)
        fl = ScalarField(grid, np.ascontiguousarray(vals))
        M = integrate(fl)
        I = log_interaction(fl)
        E = integrate(fl.with_values(_xlogx(fl.values)))
        Is.append(I)
        Es.append(E)
        Qs.append(I - (M / d) * E)
    return LogHLSReport(list(family_scales), Qs, Is, Es)


# ---------------------------------------------------------------- GNS probe


class GNSConstraintError(DiagnosticsError):
    pass


def gns_exponents(p: float, q: float, r: float, k: float, d: int, s: float = 1.0) -> tuple[float, float]:
    """``(alpha1, alpha2)`` solving ``1 = a1 k + a2`` and
    ``1/q - 1/p = a1 (-s/d + 1/r - k/p)``; constraints are validated."""
    if not 1 <= p:
        raise GNSConstraintError(f"1 <= p violated (p = {p})")
    if not p <= r * k:
        raise GNSConstraintError(f"p <= r k violated ({p} > {r * k})")
    if not r * k <= d * k:
        raise GNSConstraintError(f"r k <= d k violated ({r * k} > {d * k})")
    upper = math.inf if r >= d else r * k * d / (d - r)
    if not k < q < upper:
        raise GNSConstraintError(f"k < q < r k d/(d - r) violated (q = {q}, bounds ({k}, {upper}))")
    if not 1.0 / r - k / q - s / d < 0:
        raise GNSConstraintError("condition 1/r - k/q - s/d < 0 violated")
    mat = np.array([[k, 1.0], [-s / d + 1.0 / r - k / p, 0.0]])
    rhs = np.array([1.0, 1.0 / q - 1.0 / p])
    try:
        a1, a2 = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise GNSConstraintError("exponent relations are degenerate") from exc
    if not (a1 > 0 and a2 > 0):
        raise GNSConstraintError(f"alpha_i > 0 violated (alpha1 = {a1:.6g}, alpha2 = {a2:.6g})")
    return float(a1), float(a2)


def gradient_lr_norm(g: ScalarField, r: float) -> float:
    """``|| grad g ||_r`` with face differences averaged to cell centers."""
    h = g.grid.spacing
    sq = np.zeros(g.grid.shape)
    for k in range(g.grid.dim):
        df = np.diff(g.values, axis=k) / h
        pad = [(0, 0)] * g.grid.dim
        pad[k] = (1, 1)
        dfp = np.pad(df, pad)
        lo = [slice(None)] * g.grid.dim
        hi = [slice(None)] * g.grid.dim
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        sq += (0.5 * (dfp[tuple(lo)] + dfp[tuple(hi)])) ** 2
    return lp_norm(g.with_values(np.sqrt(sq)), r)


@dataclass
class GNSReport:
    alpha1: float
    alpha2: float
    scales: list[float]
    ratios: list[float]

    @property
    def spread(self) -> float:
        ref = self.ratios[self.scales.index(1.0)] if 1.0 in self.scales else self.ratios[0]
        return max(abs(v / ref - 1.0) for v in self.ratios)

    @property
    def invariant(self) -> bool:
        return self.spread <= 0.01


def gns_ratio(f: ScalarField, p: float, q: float, r: float, k: float, a1: float, a2: float) -> float:
    fk = f.with_values(np.abs(f.values) ** k)
    den = lp_norm(f, p) ** a2 * gradient_lr_norm(fk, r) ** a1
    return lp_norm(f, q) / den


def gns_probe(f: Callable, grid: GridSpec, p: float, q: float, r: float, k: float, s: float = 1.0,
              scales: Sequence[float] = (0.5, 1.0, 2.0)) -> GNSReport:
    """``R(f) = ||f||_q / (||f||_p^{a2} ||grad f^k||_r^{a1})`` for the dilates ``f(lam x)``."""
    if s != 1.0:
        raise GNSConstraintError("only s = 1 (first derivatives) is computable")
    a1, a2 = gns_exponents(p, q, r, k, grid.dim, s)
    ratios = []
    for lam in scales:
        vals = np.broadcast_to(f(*[lam * m for m in grid.mesh()]), grid.shape).astype(float)
        ratios.append(gns_ratio(ScalarField(grid, vals), p, q, r, k, a1, a2))
    return GNSReport(a1, a2, list(scales), ratios)


# --------------------------------------------------------- self-similar vars


def tau_of_t(t: float, d: int) -> float:
    return math.log1p(d * t) / d


def t_of_tau(tau: float, d: int) -> float:
    return math.expm1(d * tau) / d


def _overlap_matrix(edges_to: np.ndarray, edges_from: np.ndarray) -> np.ndarray:
    """``W[j, i]`` = length of ``[to_j, to_{j+1}] ∩ [from_i, from_{i+1}]``."""
    lo = np.maximum(edges_to[:-1, None], edges_from[None, :-1])
    hi = np.minimum(edges_to[1:, None], edges_from[None, 1:])
    return np.maximum(hi - lo, 0.0)


def _remap(values: np.ndarray, mats: list[np.ndarray]) -> np.ndarray:
    out = values
    for k, W in enumerate(mats):
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [k])), 0, k)
    return out


def self_similar_transform(u: ScalarField, t: float) -> tuple[ScalarField, float]:
    """``tau = log(1 + d t)/d`` and ``theta(eta) = e^{d tau} u(e^tau eta)``.

    The value of ``theta`` on an ``eta`` cell is ``e^{d tau}`` times the
    average of the piecewise-constant ``u`` over the stretched cell, which
    conserves mass exactly.
    """
    if t < 0:
        raise DiagnosticsError("t must be non-negative")
    g = u.grid
    tau = tau_of_t(t, g.dim)
    if t == 0:
        return ScalarField(g, u.values.copy()), 0.0
    s = math.exp(tau)
    e = g.edges()
    W = _overlap_matrix(s * e, e) / (s * g.spacing)
    theta = math.exp(g.dim * tau) * _remap(u.values, [W] * g.dim)
    return ScalarField(g, theta), tau


def inverse_self_similar(theta: ScalarField, tau: float, tol: float = 1e-6) -> tuple[ScalarField, float]:
    """``u(x) = e^{-d tau} theta(x e^{-tau})``; rejects ``theta`` with mass outside ``|eta| < L e^{-tau}``."""
    g = theta.grid
    s = math.exp(tau)
    e = g.edges()
    W = _overlap_matrix(e / s, e) / (g.spacing / s)
    u = math.exp(-g.dim * tau) * _remap(theta.values, [W] * g.dim)
    M_theta = integrate(theta)
    M_u = integrate(ScalarField(g, u))
    if M_theta > 0 and abs(M_u - M_theta) > tol * M_theta:
        raise DiagnosticsError(f"rescaled support exceeds the box (lost mass {M_theta - M_u:.3e}); use a larger L")
    return ScalarField(g, u), t_of_tau(tau, g.dim)


def _g_entropy(f: ScalarField, kernel: Kernel, model: DiffusionModel | None) -> tuple[float, bool]:
    """Entropy part of ``G`` and whether the kernel is of log type."""
    d = f.grid.dim
    log_type = isinstance(kernel, Logarithmic) or (isinstance(kernel, Newtonian) and d == 2)
    if d == 2 and log_type:
        if model is not None and not isinstance(model, Linear):
            raise DiagnosticsError("the 2-D modified free energy needs linear diffusion")
        return integrate(f.with_values(_xlogx(f.values))), True
    if d >= 3 and isinstance(kernel, Newtonian):
        m = 2.0 - 2.0 / d
        if model is not None and not (isinstance(model, PorousMedium) and abs(model.m - m) < 1e-12):
            raise DiagnosticsError(f"d = {d} needs the porous-medium exponent {m:g}")
        return integrate(f.with_values(np.maximum(f.values, 0.0) ** m)) / (1.0 - 2.0 / d), False
    raise DiagnosticsError(f"no modified free energy for {kernel.spec()} in d = {d}")


def _half_interaction(f: ScalarField, kernel: Kernel) -> float:
    c = convolution_operator(kernel, f.grid)(f.values)
    return 0.5 * float(np.sum(f.values * c)) * f.grid.cell_volume


def modified_free_energy(theta: ScalarField, kernel: Kernel, model: DiffusionModel | None = None) -> float:
    """``G(theta) = entropy + 1/2 int |eta|^2 theta - 1/2 int theta (K * theta)``.

    The entropy is ``int theta log theta`` for the 2-D logarithmic kernel and
    ``(1/(1 - 2/d)) int theta^{2-2/d}`` for the Newtonian kernel with ``d >= 3``.
    """
    ent, _ = _g_entropy(theta, kernel, model)
    return ent + 0.5 * second_moment(theta) - _half_interaction(theta, kernel)


def modified_free_energy_at(u: ScalarField, t: float, kernel: Kernel, model: DiffusionModel | None = None) -> float:
    """``G(theta(tau))`` evaluated on the grid of ``u`` through the exact scaling.

    With ``R = e^tau`` the dilation gives, for log kernels,
    ``S(theta) = S(u) + d M log R`` and ``W(theta) = W(u) + (c M^2 / 2) log R``;
    for the Newtonian kernel in ``d >= 3`` both parts scale by ``R^{d-2}``.
    Always ``M2(theta) = M2(u) / R^2``.  No remap is involved, so frames
    taken at different alignments of the two grids stay comparable.
    """
    d = u.grid.dim
    logR = tau_of_t(t, d)
    R = math.exp(logR)
    ent, log_type = _g_entropy(u, kernel, model)
    W = _half_interaction(u, kernel)
    m2 = second_moment(u) / R**2
    if log_type:
        M = integrate(u)
        return ent + d * M * logR + 0.5 * m2 - (W + 0.5 * kernel.log_strength * M * M * logR)
    return R ** (d - 2) * (ent - W) + 0.5 * m2


def guard_exponent(model: DiffusionModel, m_star: float) -> float:
    """Default guard norm ``2(2-m)/(2-m*)``; falls back to 2 when not > 1."""
    m = float(model.exponent)
    if m_star >= 2:
        return 2.0
    p = 2.0 * (2.0 - m) / (2.0 - m_star)
    return p if p > 1 else 2.0


def record(t: float, u: ScalarField, c: ScalarField, entropy: EntropyDensity, model: DiffusionModel,
           guard_p: float) -> DiagnosticsRecord:
    S, W, F = free_energy(u, c, entropy)
    return DiagnosticsRecord(
        t=float(t),
        mass=integrate(u),
        linf=float(np.max(u.values)),
        l2=lp_norm(u, 2),
        lp_guard=lp_norm(u, guard_p),
        m2=second_moment(u),
        free_energy=F,
        dissipation=dissipation(u, c, model),
        entropy=S,
        interaction=W,
    )
