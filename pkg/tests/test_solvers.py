import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import diags, identity, kron
from scipy.sparse.linalg import spsolve

from aggrosim.solvers import ConvergenceError, DiffusionOperator, Multigrid, pcg


def _laplacian_1d(n, h, dirichlet):
    main = np.full(n, 2.0)
    if dirichlet:
        main[0] = main[-1] = 3.0  # half-cell Dirichlet faces
    else:
        main[0] = main[-1] = 1.0
    return diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1]) / h**2


@pytest.mark.parametrize("dirichlet", [True, False])
def test_constant_coefficient_operator_matches_sparse_matrix(dirichlet):
    """[DERIVED] a = 1, gamma = g: the operator is the assembled 5-point matrix."""
    n, h, g = 16, 0.25, 0.7
    op = DiffusionOperator([np.ones((n + 1, n)), np.ones((n, n + 1))], np.full((n, n), g), h, dirichlet)
    T = _laplacian_1d(n, h, dirichlet)
    I = identity(n)
    A = kron(T, I) + kron(I, T) + g * identity(n * n)
    c = np.random.default_rng(1).normal(size=(n, n))
    assert np.allclose(op.apply(c).ravel(), A @ c.ravel())
    assert np.allclose(op.diagonal().ravel(), A.diagonal())


def _random_operator(rng, n=32, d=2):
    faces = []
    for k in range(d):
        shp = [n] * d
        shp[k] += 1
        faces.append(rng.uniform(0.5, 2.0, size=shp))
    return DiffusionOperator(faces, rng.uniform(0.1, 1.0, size=(n,) * d), 1.0 / n)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_operator_is_symmetric_positive(seed):
    """[DERIVED] <x, A y> = <A x, y> and <x, A x> > 0."""
    rng = np.random.default_rng(seed)
    op = _random_operator(rng)
    x, y = rng.normal(size=op.shape), rng.normal(size=op.shape)
    assert np.vdot(x, op.apply(y)) == pytest.approx(np.vdot(op.apply(x), y), rel=1e-10)
    assert np.vdot(x, op.apply(x)) > 0


def test_boundary_data_enters_linearly():
    """[DERIVED] A(c; b) = A(c; 0) + A(0; b)."""
    rng = np.random.default_rng(3)
    op = _random_operator(rng, 16)
    b = [(rng.normal(size=16), rng.normal(size=16)) for _ in range(2)]
    c = rng.normal(size=op.shape)
    assert np.allclose(op.apply(c, b), op.apply(c) + op.apply(np.zeros_like(c), b))


@pytest.mark.parametrize("d", [2, 3])
def test_multigrid_pcg_solves(d):
    """[DERIVED] PCG with the V-cycle reproduces the direct sparse solve."""
    rng = np.random.default_rng(7)
    n = 32 if d == 2 else 16
    op = _random_operator(rng, n, d)
    b = rng.normal(size=op.shape)
    res = pcg(op.apply, b, Multigrid(op), tol=1e-12)
    assert res.residual <= 1e-12
    assert res.iterations < 40
    assert np.allclose(op.apply(res.x), b, atol=1e-9 * np.abs(b).max())


def test_multigrid_beats_jacobi():
    """[DERIVED] the V-cycle needs far fewer iterations than diagonal scaling."""
    rng = np.random.default_rng(2)
    op = _random_operator(rng, 64)
    b = rng.normal(size=op.shape)
    mg = pcg(op.apply, b, Multigrid(op), tol=1e-10).iterations
    diag = op.diagonal()
    jac = pcg(op.apply, b, lambda r: r / diag, tol=1e-10).iterations
    assert mg * 4 < jac


def test_pcg_zero_rhs_and_failure():
    """[TRIVIAL]"""
    op = _random_operator(np.random.default_rng(0), 16)
    assert pcg(op.apply, np.zeros(op.shape), lambda r: r).iterations == 0
    with pytest.raises(ConvergenceError) as info:
        pcg(op.apply, np.ones(op.shape), lambda r: r, tol=1e-14, maxiter=2)
    assert info.value.residual > 0


def test_pcg_against_spsolve():
    """[DERIVED] 1-D-like slab: compare to scipy's direct solver."""
    n, h = 16, 0.1
    op = DiffusionOperator([np.ones((n + 1, n)), np.ones((n, n + 1))], np.ones((n, n)), h)
    T = _laplacian_1d(n, h, True)
    A = (kron(T, identity(n)) + kron(identity(n), T) + identity(n * n)).tocsc()
    b = np.random.default_rng(4).normal(size=n * n)
    x = pcg(op.apply, b.reshape(n, n), Multigrid(op), tol=1e-13).x
    assert np.allclose(x.ravel(), spsolve(A, b), rtol=1e-9, atol=1e-12)
