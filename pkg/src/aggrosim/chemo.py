"""Chemoattractant computation: free-space convolution ``c = K * u`` and the
variable-coefficient elliptic problem ``-div(a grad c) + gamma c = u``."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft

from .grid import GridSpec, ScalarField, VectorField, lp_norm
from .kernels import Kernel, sample_on_grid
from .solvers import ConvergenceError, DiffusionOperator, Multigrid, pcg


class ChemoError(ValueError):
    pass


# ------------------------------------------------------------- convolution


class ConvolutionOperator:
    """Discrete free-space convolution with a kernel table on the doubled domain."""

    def __init__(self, kernel: Kernel, grid: GridSpec):
        self.kernel = kernel
        self.grid = grid
        table = sample_on_grid(kernel, grid)
        self._khat = fft.rfftn(table.values)
        self._shape2 = table.values.shape

    def __call__(self, u: np.ndarray) -> np.ndarray:
        n = self.grid.n
        uhat = fft.rfftn(u, s=self._shape2)
        c = fft.irfftn(uhat * self._khat, s=self._shape2)
        return c[(slice(0, n),) * self.grid.dim] * self.grid.cell_volume


def convolution_operator(kernel: Kernel, grid: GridSpec) -> ConvolutionOperator:
    key = ("conv", grid)
    if key not in kernel._tables:
        kernel._tables[key] = ConvolutionOperator(kernel, grid)
    return kernel._tables[key]


def convolve_potential(kernel: Kernel, u: ScalarField) -> ScalarField:
    return ScalarField(u.grid, convolution_operator(kernel, u.grid)(u.values))


def face_gradient(c: np.ndarray, h: float) -> tuple[np.ndarray, ...]:
    return tuple(np.diff(c, axis=k) / h for k in range(c.ndim))


def grad_potential(c: ScalarField) -> VectorField:
    """Centered differences onto interior faces (staggered)."""
    return VectorField(c.grid, face_gradient(c.values, c.grid.spacing))


# --------------------------------------------------------- coefficient fields

_GAUSS = re.compile(r"^expr:gauss\(\s*([^,]+)\s*,\s*([^)]+)\s*\)\s*\+\s*(.+)$")


@dataclass
class Coefficient:
    """``base + amp * exp(-|x|^2 / width^2)``; ``amp = 0`` is a constant."""

    base: float
    amp: float = 0.0
    width: float = 1.0

    def __call__(self, *coords):
        r2 = sum(np.asarray(x, dtype=float) ** 2 for x in coords)
        if self.amp == 0.0:
            return np.full(np.broadcast(*coords).shape, self.base) if coords else self.base
        return self.base + self.amp * np.exp(-r2 / self.width**2)

    @property
    def is_constant(self) -> bool:
        return self.amp == 0.0

    def spec(self) -> str:
        if self.is_constant:
            return f"const:{self.base!r}"
        return f"expr:gauss({self.amp!r},{self.width!r})+{self.base!r}"

    @classmethod
    def parse(cls, text: str) -> "Coefficient":
        t = text.strip()
        try:
            if t.startswith("const:"):
                return cls(float(t[6:]))
            m = _GAUSS.match(t)
            if m:
                return cls(float(m.group(3)), float(m.group(1)), float(m.group(2)))
        except ValueError as exc:
            raise ChemoError(f"malformed number in coefficient {text!r}") from exc
        raise ChemoError(f"unknown coefficient spec {text!r}")


# ------------------------------------------------------------------ models


@dataclass(eq=False)
class ConvolutionChemo:
    kernel: Kernel

    def potential(self, u: np.ndarray, grid: GridSpec, guess: np.ndarray | None = None) -> np.ndarray:
        return convolution_operator(self.kernel, grid)(u)

    def spec(self) -> str:
        return "convolution"


@dataclass
class EllipticSolveReport:
    iterations: int
    residual: float
    achieved_tolerance: float


@dataclass(eq=False)
class EllipticChemo:
    """``-div(a grad c) + gamma c = f`` on the box, emulating decay at infinity.

    ``boundary="dirichlet"`` imposes ``c = 0`` on the box.  ``"monopole"``
    (the default when ``gamma == 0``) imposes the far field of the total
    source, ``M / (4 pi a |x - x_c|)`` in 3-D, which removes the O(1/L)
    truncation error of the zero condition.
    """

    a: Callable = field(default_factory=lambda: Coefficient(1.0))
    gamma: Callable = field(default_factory=lambda: Coefficient(0.0))
    tol: float = 1e-10
    boundary: str | None = None
    preconditioner: str = "multigrid"
    maxiter: int = 2000
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def spec(self) -> str:
        return "elliptic"

    def setup(self, grid: GridSpec):
        if grid in self._cache:
            return self._cache[grid]
        h = grid.spacing
        d = grid.dim
        x = grid.centers()
        xf = grid.edges()
        gamma = np.broadcast_to(self.gamma(*grid.mesh()), grid.shape).astype(float)
        faces = []
        for k in range(d):
            axes = [x] * d
            axes[k] = xf
            mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
            shp = list(grid.shape)
            shp[k] += 1
            faces.append(np.broadcast_to(self.a(*mesh), shp).astype(float))
        inf_a = min(float(f.min()) for f in faces)
        inf_gamma = float(gamma.min())
        if inf_a <= 0:
            raise ChemoError(f"diffusivity a must be strictly positive (inf a = {inf_a})")
        if inf_gamma < 0:
            raise ChemoError("gamma must be non-negative")
        if d == 2 and inf_gamma <= 0:
            raise ChemoError("in d = 2 gamma must be strictly positive for the elliptic model")
        grad_a = max(float(np.abs(np.diff(f, axis=k)).max()) / h for k, f in enumerate(faces))
        boundary = self.boundary or ("monopole" if inf_gamma == 0.0 else "dirichlet")
        op = DiffusionOperator(faces, gamma, h, dirichlet=True)
        mg = Multigrid(op) if self.preconditioner == "multigrid" else None
        diag = op.diagonal()
        info = dict(op=op, mg=mg, diag=diag, inf_a=inf_a, inf_gamma=inf_gamma, grad_a=grad_a, boundary=boundary)
        self._cache[grid] = info
        return info

    def inf_a(self, grid: GridSpec) -> float:
        return self.setup(grid)["inf_a"]

    def inf_gamma(self, grid: GridSpec) -> float:
        return self.setup(grid)["inf_gamma"]

    def _boundary_data(self, f: np.ndarray, grid: GridSpec, info) -> list | None:
        if info["boundary"] == "dirichlet":
            return None
        if grid.dim != 3:
            raise ChemoError("monopole boundary data is only available in d = 3")
        mass = float(f.sum()) * grid.cell_volume
        if mass == 0.0:
            return None
        mesh = grid.mesh()
        xc = [float((f * m).sum()) * grid.cell_volume / mass for m in mesh]
        L = grid.half_width
        x = grid.centers()
        data = []
        for k in range(grid.dim):
            pair = []
            for side in (-L, L):
                axes = [x] * grid.dim
                axes[k] = np.array([side])
                pts = np.meshgrid(*axes, indexing="ij", sparse=True)
                r = np.sqrt(sum((p - xc[j]) ** 2 for j, p in enumerate(pts)))
                a_b = self.a(*pts)
                val = mass / (4.0 * math.pi * a_b * r)
                pair.append(np.squeeze(np.broadcast_to(val, np.broadcast(*pts).shape), axis=k))
            data.append(tuple(pair))
        return data

    def solve(self, f: np.ndarray, grid: GridSpec, guess: np.ndarray | None = None,
              tol: float | None = None) -> tuple[np.ndarray, EllipticSolveReport]:
        info = self.setup(grid)
        op: DiffusionOperator = info["op"]
        tol = self.tol if tol is None else tol
        bdata = self._boundary_data(f, grid, info)
        rhs = f.astype(float)
        if bdata is not None:
            rhs = rhs - op.apply(np.zeros(grid.shape), bdata)
        if info["mg"] is not None:
            prec = info["mg"]
        else:
            diag = info["diag"]
            prec = lambda r: r / diag
        res = pcg(op.apply, rhs, prec, x0=guess, tol=tol, maxiter=self.maxiter)
        return res.x, EllipticSolveReport(res.iterations, res.residual, tol)

    def potential(self, u: np.ndarray, grid: GridSpec, guess: np.ndarray | None = None) -> np.ndarray:
        c, _ = self.solve(u, grid, guess)
        return c


def solve_elliptic(model: EllipticChemo, f: ScalarField, tol: float = 1e-10) -> tuple[ScalarField, EllipticSolveReport]:
    if not 1e-14 < tol < 1e-2:
        raise ChemoError("tol must lie in (1e-14, 1e-2)")
    c, rep = model.solve(f.values, f.grid, tol=tol)
    return ScalarField(f.grid, c), rep


# ------------------------------------------------------------ verification


def random_mixture(grid: GridSpec, seed: int, max_bumps: int = 5) -> np.ndarray:
    """1-5 Gaussians, centers uniform in the half box, widths in [L/16, L/4]."""
    rng = np.random.default_rng(seed)
    L = grid.half_width
    k = int(rng.integers(1, max_bumps + 1))
    mesh = grid.mesh()
    out = np.zeros(grid.shape)
    for _ in range(k):
        c = rng.uniform(-L / 2, L / 2, size=grid.dim)
        w = rng.uniform(L / 16, L / 4)
        amp = rng.uniform(0.5, 2.0)
        out += amp * np.exp(-sum((m - c[j]) ** 2 for j, m in enumerate(mesh)) / w**2)
    return out


@dataclass
class TrialRow:
    trial: int
    seed: int
    lhs: float
    rhs: float
    ratio: float
    ok: bool


@dataclass
class VerifyReport:
    check: str
    rows: list[TrialRow]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def worst_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)

    @property
    def failing_seeds(self) -> list[int]:
        return [r.seed for r in self.rows if not r.ok]

    def csv(self) -> str:
        lines = ["trial,seed,lhs,rhs,ratio"]
        lines += [f"{r.trial},{r.seed},{r.lhs!r},{r.rhs!r},{r.ratio!r}" for r in self.rows]
        return "\n".join(lines) + "\n"


def verify_lp_estimate(model: EllipticChemo, grid: GridSpec, trials: int, p: float,
                       allowance: float = 0.02, seed0: int = 0) -> VerifyReport:
    """``||c||_p <= ||f||_p / inf gamma`` (gamma > 0), or, for ``gamma = 0`` in 3-D,
    the homogeneous ratio ``||c||_p inf a / ||f||_q`` with ``2/d + 1/p = 1/q``
    (reported; only finiteness is checked)."""
    info = model.setup(grid)
    rows = []
    homogeneous = info["inf_gamma"] == 0.0
    if homogeneous:
        if grid.dim != 3 or not 3.0 < p < math.inf:
            raise ChemoError("homogeneous estimate needs d = 3 and 3 < p < inf")
        q = 1.0 / (2.0 / grid.dim + 1.0 / p)
    for t in range(trials):
        seed = seed0 + t
        f = ScalarField(grid, random_mixture(grid, seed))
        c, _ = solve_elliptic(model, f, tol=1e-11)
        lhs = lp_norm(c, p)
        if homogeneous:
            rhs = lp_norm(f, q) / info["inf_a"]
            ratio = lhs / rhs if rhs > 0 else 0.0
            ok = bool(np.isfinite(ratio))
        else:
            rhs = lp_norm(f, p) / info["inf_gamma"]
            ratio = lhs / rhs if rhs > 0 else 0.0
            ok = lhs <= rhs * (1.0 + allowance)
        rows.append(TrialRow(t, seed, lhs, rhs, ratio, ok))
    return VerifyReport(f"lp_estimate(p={p:g})", rows)


def random_face_field(grid: GridSpec, seed: int) -> list[np.ndarray]:
    """Smooth random vector field on all faces (``n+1`` per axis)."""
    rng = np.random.default_rng(seed)
    L = grid.half_width
    out = []
    for k in range(grid.dim):
        axes = [grid.centers()] * grid.dim
        axes[k] = grid.edges()
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        comp = 0.0
        for _ in range(int(rng.integers(1, 6))):
            c = rng.uniform(-L / 2, L / 2, size=grid.dim)
            w = rng.uniform(L / 16, L / 4)
            comp = comp + rng.uniform(-2.0, 2.0) * np.exp(-sum((m - c[j]) ** 2 for j, m in enumerate(mesh)) / w**2)
        shp = list(grid.shape)
        shp[k] += 1
        out.append(np.broadcast_to(comp, shp).copy())
    return out


def face_l2(grid: GridSpec, comps: list[np.ndarray]) -> float:
    """Discrete L2 norm of a face field; boundary faces carry half-cell weight."""
    total = 0.0
    for k, g in enumerate(comps):
        w = np.ones(g.shape[k])
        w[0] = w[-1] = 0.5
        shape = [1] * grid.dim
        shape[k] = -1
        total += float(np.sum(w.reshape(shape) * g**2))
    return math.sqrt(total * grid.cell_volume)


def verify_h1_stability(model: EllipticChemo, grid: GridSpec, trials: int,
                        allowance: float = 0.01, seed0: int = 0) -> VerifyReport:
    """``||grad c||_2 <= ||F||_2 / inf a`` for ``f = div F``."""
    info = model.setup(grid)
    if info["boundary"] != "dirichlet":
        raise ChemoError("H^-1 stability is checked with homogeneous Dirichlet data")
    op: DiffusionOperator = info["op"]
    h = grid.spacing
    rows = []
    for t in range(trials):
        seed = seed0 + t
        F = random_face_field(grid, seed)
        f = sum(np.diff(F[k], axis=k) / h for k in range(grid.dim))
        c, _ = solve_elliptic(model, ScalarField(grid, f), tol=1e-11)
        lhs = face_l2(grid, op.gradients(c.values))
        rhs = face_l2(grid, F) / info["inf_a"]
        ratio = lhs / rhs if rhs > 0 else 0.0
        rows.append(TrialRow(t, seed, lhs, rhs, ratio, lhs <= rhs * (1.0 + allowance)))
    return VerifyReport("h1_stability", rows)


def hessian_norm(c: np.ndarray, h: float, p: float, cell_volume: float) -> float:
    """``|| D^2 c ||_p`` with the pointwise Frobenius norm, second differences in the interior."""
    d = c.ndim
    inner = (slice(1, -1),) * d
    total = np.zeros(tuple(s - 2 for s in c.shape))
    for i in range(d):
        for j in range(d):
            if i == j:
                lo = [slice(1, -1)] * d
                hi = [slice(1, -1)] * d
                lo[i] = slice(0, -2)
                hi[i] = slice(2, None)
                dij = (c[tuple(hi)] - 2.0 * c[inner] + c[tuple(lo)]) / h**2
            else:
                def sh(si, sj):
                    s = [slice(1, -1)] * d
                    s[i] = slice(1 + si, c.shape[i] - 1 + si)
                    s[j] = slice(1 + sj, c.shape[j] - 1 + sj)
                    return c[tuple(s)]
                dij = (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4.0 * h**2)
            total += dij**2
    frob = np.sqrt(total)
    return float((np.sum(frob**p) * cell_volume) ** (1.0 / p))


def verify_hessian_bound(model: EllipticChemo, grid: GridSpec, trials: int, p: float = 6.0,
                         seed0: int = 0) -> VerifyReport:
    """Measured ``||D^2 c||_p / (||f||_p + ||f||_{pd/(2p+d)})`` (boundedness only)."""
    rows = []
    q = p * grid.dim / (2.0 * p + grid.dim)
    for t in range(trials):
        seed = seed0 + t
        f = ScalarField(grid, random_mixture(grid, seed))
        c, _ = solve_elliptic(model, f, tol=1e-11)
        lhs = hessian_norm(c.values, grid.spacing, p, grid.cell_volume)
        # q < 1 in low dimension, so the quasi-norm is summed directly
        rhs = lp_norm(f, p) + float(np.sum(np.abs(f.values) ** q) * grid.cell_volume) ** (1.0 / q)
        ratio = lhs / rhs
        rows.append(TrialRow(t, seed, lhs, rhs, ratio, bool(np.isfinite(ratio))))
    return VerifyReport(f"hessian(p={p:g})", rows)


__all__ = [
    "ChemoError", "Coefficient", "ConvergenceError", "ConvolutionChemo", "ConvolutionOperator",
    "EllipticChemo", "EllipticSolveReport", "VerifyReport", "convolve_potential", "grad_potential",
    "solve_elliptic", "verify_h1_stability", "verify_lp_estimate", "verify_hessian_bound",
]
