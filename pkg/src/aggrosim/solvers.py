"""Cell-centered diffusion operators, a multigrid V-cycle preconditioner and a CG driver.

The operators are ``-div(a grad c) + gamma c`` on a cell-centered grid with
face coefficients ``a_faces[k]`` (``n+1`` faces along axis ``k``, boundary
faces included) and a Dirichlet or Neumann treatment of the box boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, solution: np.ndarray | None = None):
        super().__init__(message)
        self.residual = residual
        self.solution = solution


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residual: float


def pcg(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    precond: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    maxiter: int = 2000,
) -> PCGResult:
    """Solve ``A x = b`` for SPD ``A`` with ``scipy``'s CG; ``tol`` bounds ``||b - A x|| / ||b||``."""
    shape = b.shape
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return PCGResult(np.zeros_like(b), 0, 0.0)
    size = b.size
    A = LinearOperator((size, size), matvec=lambda v: apply_A(v.reshape(shape)).ravel(), dtype=float)
    M = LinearOperator((size, size), matvec=lambda v: precond(v.reshape(shape)).ravel(), dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = cg(A, b.ravel(), x0=None if x0 is None else x0.ravel(), rtol=tol, atol=0.0, maxiter=maxiter,
                 M=M, callback=tick)
    x = x.reshape(shape)
    res = float(np.linalg.norm(b - apply_A(x))) / bnorm
    if info != 0 or not np.isfinite(res):
        raise ConvergenceError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", res, x)
    return PCGResult(x, count[0], res)


def _face_slices(d: int, k: int):
    lo = [slice(None)] * d
    hi = [slice(None)] * d
    lo[k] = slice(0, -1)
    hi[k] = slice(1, None)
    return tuple(lo), tuple(hi)


@dataclass
class DiffusionOperator:
    """``-div(a grad c) + gamma c`` on a cell-centered grid of spacing ``h``.

    ``dirichlet=True`` imposes ``c = 0`` on the box boundary (boundary faces at
    half-cell distance); otherwise the boundary faces carry zero flux.
    """

    a_faces: list[np.ndarray]
    gamma: np.ndarray
    h: float
    dirichlet: bool = True

    @property
    def shape(self):
        return self.gamma.shape

    def gradients(self, c: np.ndarray, boundary: list[tuple[np.ndarray, np.ndarray]] | None = None):
        """Face gradients including boundary faces (``n+1`` per axis)."""
        d = c.ndim
        out = []
        for k in range(d):
            shp = list(c.shape)
            shp[k] += 1
            g = np.zeros(shp)
            lo, hi = _face_slices(d, k)
            inner = [slice(None)] * d
            inner[k] = slice(1, -1)
            g[tuple(inner)] = np.diff(c, axis=k) / self.h
            if self.dirichlet:
                first = [slice(None)] * d
                last = [slice(None)] * d
                first[k] = 0
                last[k] = -1
                c0 = np.take(c, 0, axis=k)
                c1 = np.take(c, -1, axis=k)
                b0 = 0.0 if boundary is None else boundary[k][0]
                b1 = 0.0 if boundary is None else boundary[k][1]
                g[tuple(first)] = (c0 - b0) / (0.5 * self.h)
                g[tuple(last)] = (b1 - c1) / (0.5 * self.h)
            out.append(g)
        return out

    def _scaled(self):
        cache = self.__dict__.get("_scaled_faces")
        if cache is None:
            d = self.gamma.ndim
            cache = []
            for k in range(d):
                a = self.a_faces[k] / self.h**2
                inner = [slice(None)] * d
                inner[k] = slice(1, -1)
                first = [slice(None)] * d
                first[k] = 0
                last = [slice(None)] * d
                last[k] = -1
                cache.append((a[tuple(inner)], 2.0 * a[tuple(first)], 2.0 * a[tuple(last)]))
            self.__dict__["_scaled_faces"] = cache
        return cache

    def apply(self, c: np.ndarray, boundary=None) -> np.ndarray:
        d = c.ndim
        out = self.gamma * c
        for k, (ai, a0, a1) in enumerate(self._scaled()):
            lo, hi = _face_slices(d, k)
            f = ai * (c[hi] - c[lo])
            out[lo] -= f
            out[hi] += f
            if self.dirichlet:
                first = [slice(None)] * d
                first[k] = 0
                last = [slice(None)] * d
                last[k] = -1
                first, last = tuple(first), tuple(last)
                if boundary is None:
                    out[first] += a0 * c[first]
                    out[last] += a1 * c[last]
                else:
                    out[first] += a0 * (c[first] - boundary[k][0])
                    out[last] += a1 * (c[last] - boundary[k][1])
        return out

    def diagonal(self) -> np.ndarray:
        d = self.gamma.ndim
        diag = self.gamma.copy()
        for k in range(d):
            a = self.a_faces[k]
            w = np.ones(a.shape[k])
            w[0] = w[-1] = 2.0 if self.dirichlet else 0.0
            shape = [1] * d
            shape[k] = -1
            aw = a * w.reshape(shape)
            lo, hi = _face_slices(d, k)
            diag = diag + (aw[lo] + aw[hi]) / self.h**2
        return diag

    def coarsen(self) -> "DiffusionOperator":
        d = self.gamma.ndim
        g = self.gamma
        for k in range(d):
            g = 0.5 * (np.take(g, np.arange(0, g.shape[k], 2), axis=k) + np.take(g, np.arange(1, g.shape[k], 2), axis=k))
        faces = []
        for k in range(d):
            a = np.take(self.a_faces[k], np.arange(0, self.a_faces[k].shape[k], 2), axis=k)
            for j in range(d):
                if j != k:
                    a = 0.5 * (np.take(a, np.arange(0, a.shape[j], 2), axis=j) + np.take(a, np.arange(1, a.shape[j], 2), axis=j))
            faces.append(a)
        return DiffusionOperator(faces, g, 2.0 * self.h, self.dirichlet)


def _restrict(r: np.ndarray) -> np.ndarray:
    d = r.ndim
    for k in range(d):
        even = [slice(None)] * d
        odd = [slice(None)] * d
        even[k] = slice(0, None, 2)
        odd[k] = slice(1, None, 2)
        r = 0.5 * (r[tuple(even)] + r[tuple(odd)])
    return r


def _prolong(e: np.ndarray) -> np.ndarray:
    for k in range(e.ndim):
        e = np.repeat(e, 2, axis=k)
    return e


class Multigrid:
    """Symmetric V(nu,nu) cycle with damped Jacobi smoothing, usable as a PCG preconditioner."""

    def __init__(self, op: DiffusionOperator, nu: int = 2, omega: float = 0.8, coarsest: int = 4):
        self.levels = [op]
        while self.levels[-1].shape[0] > coarsest and self.levels[-1].shape[0] % 2 == 0:
            self.levels.append(self.levels[-1].coarsen())
        self.diags = [lv.diagonal() for lv in self.levels]
        self.nu = nu
        self.omega = omega
        last = self.levels[-1]
        size = last.gamma.size
        mat = np.empty((size, size))
        for i in range(size):
            e = np.zeros(size)
            e[i] = 1.0
            mat[:, i] = last.apply(e.reshape(last.shape)).ravel()
        self._coarse = np.linalg.pinv(mat)

    def _cycle(self, lvl: int, b: np.ndarray) -> np.ndarray:
        op = self.levels[lvl]
        if lvl == len(self.levels) - 1:
            return (self._coarse @ b.ravel()).reshape(b.shape)
        D = self.diags[lvl]
        x = self.omega * b / D
        for _ in range(self.nu - 1):
            x += self.omega * (b - op.apply(x)) / D
        r = b - op.apply(x)
        x += _prolong(self._cycle(lvl + 1, _restrict(r)))
        for _ in range(self.nu):
            x += self.omega * (b - op.apply(x)) / D
        return x

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._cycle(0, r)
