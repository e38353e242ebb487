import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrosim.chemo import ConvolutionChemo
from aggrosim.diffusion import Linear, PorousMedium
from aggrosim.grid import GridSpec, ScalarField, gaussian_field, integrate
from aggrosim.integrator import (
    BlowupSuspected,
    BoundaryOverflow,
    IntegratorError,
    SimState,
    Stepper,
    StepperConfig,
    adapt_dt,
    outflow_rate,
    run,
    step,
    transport_divergence,
)
from aggrosim.kernels import Logarithmic, Newtonian

NO_FORCE = ConvolutionChemo(Logarithmic(2, 0.0))
pytestmark = pytest.mark.filterwarnings("ignore:kernel has no singularity")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_transport_conserves_mass(seed, muscl):
    """[DERIVED] face fluxes telescope: sum of -div(u v) is zero."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 2, size=(16, 16))
    vel = [rng.normal(size=(15, 16)), rng.normal(size=(16, 15))]
    assert abs(transport_divergence(u, vel, 0.1, muscl).sum()) < 1e-10 * np.abs(u).sum() / 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_positivity_bound(seed, muscl):
    """[DERIVED] a forward-Euler transport stage at the adapted dt stays non-negative."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 1, size=(16, 16)) * (rng.uniform(size=(16, 16)) > 0.5)
    vel = [rng.normal(size=(15, 16)) * 5, rng.normal(size=(16, 15)) * 5]
    cfg = StepperConfig(cfl_advect=1.0, dt_max=10.0, reconstruction="muscl" if muscl else "upwind")
    dt = adapt_dt(vel, 0.1, cfg, u.shape)
    assert (u + dt * transport_divergence(u, vel, 0.1, muscl)).min() >= -1e-12


def test_outflow_rate_of_uniform_drift():
    """[DERIVED] v = 1 along x: every cell but the last loses one face speed."""
    vel = [np.ones((15, 16)), np.zeros((16, 15))]
    rate = outflow_rate(vel, (16, 16), 0.5)
    assert np.allclose(rate[:-1], 2.0) and np.allclose(rate[-1], 0.0)


def test_uniform_translation_is_exact_for_upwind_cfl_one():
    """[DERIVED] upwind with unit Courant number shifts a profile by one cell."""
    u = np.zeros((16, 16))
    u[4, 5] = 1.0
    vel = [np.ones((15, 16)), np.zeros((16, 15))]
    out = u + 0.1 * transport_divergence(u, vel, 0.1, muscl=False)
    assert out[5, 5] == pytest.approx(1.0) and out[4, 5] == pytest.approx(0.0)


def test_config_validation():
    """[TRIVIAL]"""
    for bad in (dict(cfl_advect=0), dict(diff_theta=0.2), dict(dt_min=1.0), dict(blowup_linf_factor=1.0),
                dict(picard_sweeps=0), dict(reconstruction="weno")):
        with pytest.raises(ValueError):
            StepperConfig(**bad)


@pytest.mark.parametrize("exact", [True, False])
def test_linear_diffusion_matches_heat_kernel(exact):
    """[DERIVED] a Gaussian of variance s^2 spreads to s^2 + 2t per axis."""
    g = GridSpec(2, 8.0, 128)
    u0 = gaussian_field(g, 1.0, 1.0)
    cfg = StepperConfig(dt_max=0.01 if not exact else 0.05, exact_linear=exact, ring_tolerance=0.0)
    state, _ = run(u0, NO_FORCE, Linear(), cfg, 1.0)
    exact_u = gaussian_field(g, 1.0, 1.0 / (1 + 4 * 1.0))
    err = np.abs(state.u.values - exact_u.values).max() / exact_u.values.max()
    assert err < (2e-3 if exact else 1e-2)


def test_barenblatt_profile():
    """[DERIVED] PME m = 2 in 2-D: u = t^{-1/2} (C - |x|^2 / (16 t^{1/2}))_+ is reproduced in L1 (C = 1/4)."""
    g = GridSpec(2, 4.0, 64)

    def barenblatt(t):
        return ScalarField.from_function(g, lambda x, y: np.maximum(0.25 - (x**2 + y**2) / (16 * math.sqrt(t)), 0.0) / math.sqrt(t))

    u0 = barenblatt(1.0)
    cfg = StepperConfig(dt_max=0.02, ring_tolerance=0.0)
    state, _ = run(u0, NO_FORCE, PorousMedium(2.0), cfg, 1.0)
    ref = barenblatt(2.0)
    l1 = np.abs(state.u.values - ref.values).sum() * g.cell_volume
    assert l1 / integrate(ref) < 2e-2


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 10**6))
def test_mass_and_positivity_random_data(seed):
    """[DERIVED] attractive transport plus diffusion: mass conserved to round-off, u >= 0."""
    g = GridSpec(2, 6.0, 32)
    rng = np.random.default_rng(seed)
    u = np.zeros(g.shape)
    for _ in range(3):
        u += gaussian_field(g, rng.uniform(1, 6), rng.uniform(1, 4), rng.uniform(-2, 2, 2)).values
    u0 = ScalarField(g, u)
    state, series = run(u0, ConvolutionChemo(Newtonian(2)), Linear(), StepperConfig(ring_tolerance=0.0), 0.3)
    assert state.u.values.min() >= 0
    assert abs(series[-1].mass - series[0].mass) <= 1e-12 * series[0].mass


def test_free_energy_decreases_subcritical():
    """[PAPER] F is non-increasing along a subcritical run."""
    g = GridSpec(2, 8.0, 64)
    u0 = gaussian_field(g, 4 * math.pi)
    _, series = run(u0, ConvolutionChemo(Newtonian(2)), Linear(), StepperConfig(ring_tolerance=0.0), 1.0)
    F = [r.free_energy for r in series]
    assert all(b <= a + 1e-3 * (1 + abs(F[0])) * 1e-3 for a, b in zip(F, F[1:]))
    assert F[-1] < F[0]


def test_supercritical_blowup_is_detected():
    """[PAPER] M = 1.5 * 8 pi concentrates; the sup-norm criterion fires."""
    g = GridSpec(2, 4.0, 64)
    u0 = gaussian_field(g, 1.5 * 8 * math.pi)
    with pytest.raises(BlowupSuspected) as info:
        run(u0, ConvolutionChemo(Newtonian(2)), Linear(), StepperConfig(blowup_linf_factor=10, ring_tolerance=0.0), 5.0)
    assert info.value.reason in ("linf", "guard", "dt")
    assert 0 < info.value.t < 1.0
    assert info.value.series


def test_boundary_overflow():
    """[TRIVIAL] a spreading density in a small box trips the ring monitor."""
    g = GridSpec(2, 2.0, 32)
    with pytest.raises(BoundaryOverflow) as info:
        run(gaussian_field(g, 1.0, 2.0), NO_FORCE, Linear(), StepperConfig(), 2.0)
    assert info.value.ring_mass > 1e-6


def test_observe_times_are_hit():
    """[TRIVIAL]"""
    g = GridSpec(2, 6.0, 32)
    times = [0.1, 0.237, 0.5]
    _, series = run(gaussian_field(g), NO_FORCE, Linear(), StepperConfig(ring_tolerance=0.0), 0.5,
                    observe_every=10**6, observe_times=times)
    got = [r.t for r in series]
    for t in times:
        assert any(abs(x - t) < 1e-12 for x in got)
    assert got[0] == 0.0


def test_zero_horizon_and_single_step():
    """[TRIVIAL]"""
    g = GridSpec(2, 6.0, 32)
    u0 = gaussian_field(g)
    state, series = run(u0, NO_FORCE, Linear(), StepperConfig(), 0.0)
    assert series == [] and state.t == 0.0
    cfg = StepperConfig()
    st0 = Stepper(g, NO_FORCE, Linear(), cfg).initial_state(u0)
    st1 = step(SimState(0.0, u0, st0.c, 0.01), NO_FORCE, Linear(), cfg)
    assert st1.t == pytest.approx(0.01) and st1.step_count == 1
    with pytest.raises(IntegratorError):
        step(SimState(0.0, u0, st0.c, 1.0), NO_FORCE, Linear(), cfg)
    with pytest.raises(IntegratorError):
        run(u0, NO_FORCE, Linear(), cfg, -1.0)
