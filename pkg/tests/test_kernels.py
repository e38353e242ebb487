import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from aggrosim.grid import GridSpec
from aggrosim.kernels import (
    KernelError,
    Logarithmic,
    Newtonian,
    PowerLaw,
    TabulatedRadial,
    admissibility_audit,
    critical_exponent,
    cutoff,
    cutoff_mass,
    mollify,
    origin_cell_average,
    parse_kernel,
    sample_on_grid,
    virial_table,
)


@pytest.mark.parametrize("d", [2, 3])
def test_newtonian_is_harmonic_away_from_origin(d):
    """[DERIVED] Laplace K = k'' + (d-1) k'/r = 0 for r > 0."""
    r = np.logspace(-3, 2, 20)
    K = Newtonian(d)
    assert np.allclose(K.lap(r), 0.0, atol=1e-9 * np.abs(K.d2k(r)).max())


def test_newtonian_flux_is_unit():
    """[DERIVED] -k'(r) |S^{d-1}| r^{d-1} = 1 (fundamental solution of -Laplace)."""
    for d, area in ((2, lambda r: 2 * math.pi * r), (3, lambda r: 4 * math.pi * r**2)):
        r = 0.7
        assert -Newtonian(d).dk(r) * area(r) == pytest.approx(1.0, rel=1e-14)


def test_kernel_rejects_origin():
    """[TRIVIAL]"""
    with pytest.raises(KernelError):
        Newtonian(2).eval([0.0, 1.0])


def test_critical_exponents():
    """[DERIVED] m* = (p+1)/p with s = d/p; log kernels give 1."""
    assert critical_exponent(Newtonian(3)) == 4.0 / 3.0
    assert critical_exponent(Newtonian(2)) == 1.0
    assert critical_exponent(Logarithmic(2, 0.3)) == 1.0
    assert critical_exponent(PowerLaw(3, s=0.5)) == pytest.approx(1 + 0.5 / 3)


def test_critical_exponent_warnings():
    """[TRIVIAL] clamping above 2 - 2/d and the bounded kernel both warn."""
    with pytest.warns(UserWarning):
        assert critical_exponent(PowerLaw(3, s=2.0)) == pytest.approx(4.0 / 3.0)
    with pytest.warns(UserWarning):
        assert critical_exponent(Logarithmic(2, 0.0)) == 1.0


def test_tabulated_recovers_log_strength():
    """[DERIVED] samples of -(1/2pi) log r are classified as log with c = 1/2pi."""
    r = np.logspace(-7, 2, 200)
    tab = TabulatedRadial(2, r, -np.log(r) / (2 * math.pi))
    assert tab.log_strength == pytest.approx(1 / (2 * math.pi), rel=1e-6)
    assert critical_exponent(tab) == 1.0
    assert tab.k(np.array([1e-9]))[0] == pytest.approx(-math.log(1e-9) / (2 * math.pi), rel=1e-6)


def test_tabulated_recovers_power():
    """[DERIVED] samples of r^{-1} in 3-D give s = 1 and m* = 4/3."""
    r = np.logspace(-7, 2, 200)
    tab = TabulatedRadial(3, r, 1.0 / r)
    assert tab.singularity_power == pytest.approx(1.0, rel=1e-6)
    assert critical_exponent(tab) == pytest.approx(4 / 3, rel=1e-6)


def test_tabulated_csv(tmp_path):
    """[TRIVIAL] header line is skipped."""
    r = np.logspace(-6, 1, 50)
    path = tmp_path / "k.csv"
    np.savetxt(path, np.c_[r, -np.log(r)], delimiter=",", header="r,k", comments="")
    k = parse_kernel(f"table:{path}", 2)
    assert k.log_strength == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(KernelError):
        TabulatedRadial(2, np.array([2.0, 1.0]), np.array([0.0, 0.0]))


def test_admissibility():
    """[TRIVIAL]"""
    assert admissibility_audit(Newtonian(2)).ok
    r = np.logspace(-3, 1, 40)
    bump = TabulatedRadial(2, r, np.sin(r))
    assert not admissibility_audit(bump).ok


def test_cutoff_properties():
    """[DERIVED] 1 on [0, 1/2], 0 beyond 1, mass in 2-D between |B_1/2| and |B_1|."""
    assert cutoff(np.array([0.0, 0.5]))[1] == 1.0
    assert cutoff(np.array([1.0, 2.0])).max() == 0.0
    m = cutoff_mass(2)
    assert math.pi / 4 < m < math.pi


@pytest.fixture(scope="module")
def mollified():
    return mollify(Newtonian(2), 0.1)


def test_mollified_kernel(mollified):
    """[DERIVED] bounded at 0, equal to K outside the unit ball, continuous at r = 1, non-increasing."""
    base = Newtonian(2)
    r = np.array([1.0, 1.5, 3.0])
    assert np.allclose(mollified.k(r), base.k(r))
    assert np.isfinite(mollified.k(np.array([0.0])))[0]
    assert mollified.k(np.array([1 - 1e-9]))[0] == pytest.approx(base.k(1.0), abs=1e-6)
    rr = np.linspace(0, 1.2, 400)
    assert np.all(np.diff(mollified.k(rr)) <= 1e-9)


def test_mollified_value_at_origin(mollified):
    """[DERIVED] K^eps(0) is the cutoff-weighted average of -(1/2pi) log|y| over |y| < eps."""
    eps = 0.1
    num, _ = integrate.quad(lambda s: float(cutoff(np.array([s / eps]))[0]) * s * -math.log(s) / (2 * math.pi), 0, eps)
    den, _ = integrate.quad(lambda s: float(cutoff(np.array([s / eps]))[0]) * s, 0, eps)
    assert mollified.k(np.array([0.0]))[0] == pytest.approx(num / den, rel=1e-6)


def test_mollify_rejects_epsilon():
    """[TRIVIAL]"""
    with pytest.raises(KernelError):
        mollify(Newtonian(2), 0.5)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 2.0))
def test_origin_cell_average_polynomial(h):
    """[DERIVED] average of r^2 over [-h/2, h/2]^2 is h^2/6."""
    assert origin_cell_average(lambda r: r**2, h, 2) == pytest.approx(h**2 / 6, rel=1e-12)


def test_origin_cell_average_log():
    """[DERIVED] average of -log r over the unit-h cell against scipy dblquad."""
    h = 0.3
    val, _ = integrate.dblquad(lambda y, x: -0.5 * math.log(x * x + y * y), 0, h / 2, 0, h / 2, epsabs=1e-12)
    assert origin_cell_average(lambda r: -np.log(r), h, 2) == pytest.approx(val / (h / 2) ** 2, rel=1e-9)


def test_origin_cell_average_3d_newtonian():
    """[DERIVED] average of 1/r over the cube [-a, a]^3 via tplquad."""
    h = 0.5
    a = h / 2
    val, _ = integrate.tplquad(lambda z, y, x: 1 / math.sqrt(x * x + y * y + z * z), 0, a, 0, a, 0, a, epsabs=1e-10)
    assert origin_cell_average(lambda r: 1 / r, h, 3) == pytest.approx(val / a**3, rel=1e-7)


def test_table_wrap_order():
    """[DERIVED] offset j and -j hold k(|j| h); the origin holds the cell average."""
    g = GridSpec(2, 2.0, 16)
    K = Newtonian(2)
    tab = sample_on_grid(K, g)
    assert tab.values.shape == (32, 32)
    assert tab.at_offset((3, 0)) == pytest.approx(K.k(3 * g.spacing))
    assert tab.at_offset((-3, 4)) == pytest.approx(K.k(5 * g.spacing))
    assert tab.at_offset((0, 0)) == pytest.approx(origin_cell_average(K.k, g.spacing, 2))
    assert sample_on_grid(K, g) is tab


def test_virial_table_log():
    """[DERIVED] r k'(r) = -1/2pi everywhere for the 2-D Newtonian kernel."""
    g = GridSpec(2, 2.0, 16)
    assert np.allclose(virial_table(Newtonian(2), g).values, -1 / (2 * math.pi))


@pytest.mark.parametrize("text,cls", [("newtonian", Newtonian), ("log:c=0.5", Logarithmic), ("power:s=0.7", PowerLaw)])
def test_parse_kernel(text, cls):
    """[TRIVIAL]"""
    k = parse_kernel(text, 2)
    assert isinstance(k, cls)
    assert parse_kernel(k.spec(), 2).spec() == k.spec()


@pytest.mark.parametrize("text", ["gauss", "log:c=x", "power:t=1", "log:c=-1", "power:s=0"])
def test_parse_kernel_errors(text):
    """[TRIVIAL]"""
    with pytest.raises(KernelError):
        parse_kernel(text, 2)


def test_no_warning_for_singular_kernels():
    """[TRIVIAL]"""
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        critical_exponent(Newtonian(2))
