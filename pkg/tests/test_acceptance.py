"""Acceptance suite: one test per criterion, each records a PASS/FAIL line.

The lines are printed in the pytest terminal summary (and immediately, so
they also show up with ``-s``).
"""

import math
import time
from importlib import resources

import numpy as np
import pytest

from aggrosim import experiments as ex
from aggrosim.chemo import Coefficient, EllipticChemo, verify_h1_stability, verify_lp_estimate
from aggrosim.cli import GNS_TUPLES, gns_test_functions, random_density, shipped_config
from aggrosim.config import parse_config
from aggrosim.diagnostics import (
    entropy_lower_bound_check,
    gns_probe,
    log_hls_probe,
    log_interaction,
    log_interaction_bruteforce,
)
from aggrosim.diffusion import Criticality, Linear, PorousMedium, classify, critical_mass
from aggrosim.grid import GridSpec, ScalarField, gaussian_field, second_moment
from aggrosim.integrator import BlowupSuspected, run
from aggrosim.kernels import Logarithmic, Newtonian, critical_exponent

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance
EIGHT_PI = 8 * math.pi


def report(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _examples():
    root = resources.files("aggrosim").joinpath("configs")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".ini"))


def _series(cfg):
    try:
        _, series = run(cfg.initial_field(), cfg.build_chemo(), cfg.build_diffusion(), cfg.stepper, cfg.t_end,
                        observe_every=cfg.observe_every)
        return series, "global"
    except BlowupSuspected as exc:
        return exc.series + ([exc.diagnostics] if exc.diagnostics is not None else []), f"blow-up t={exc.t:.4g}"


def test_criterion_01_mass_conservation():
    """[DERIVED] every shipped example keeps relative mass drift <= 1e-10 within 2 min."""
    worst, slowest, ok = 0.0, 0.0, True
    notes = []
    for name in _examples():
        cfg = parse_config(shipped_config(name))
        assert cfg.grid.n == 256 and cfg.grid.dim == 2 and cfg.t_end == 10.0
        t0 = time.perf_counter()
        series, outcome = _series(cfg)
        elapsed = time.perf_counter() - t0
        drift = abs(series[-1].mass - series[0].mass) / series[0].mass
        worst, slowest = max(worst, drift), max(slowest, elapsed)
        ok &= drift <= 1e-10 and elapsed <= 120.0
        notes.append(f"{name[:-4]} {drift:.1e}/{elapsed:.0f}s ({outcome})")
    assert report(1, ok, f"max drift {worst:.2e}, slowest {slowest:.0f}s: " + "; ".join(notes))


def test_criterion_02_energy_dissipation():
    """[PAPER] F non-increasing within 1e-3 (1 + |F0|) dt on the 0.9 * 8 pi run; violations total <= 0.1% |F0|."""
    cfg = parse_config(shipped_config("pks_subcritical.ini"))
    assert cfg.total_mass == pytest.approx(0.9 * EIGHT_PI)
    series, outcome = _series(cfg)
    F = [r.free_energy for r in series]
    t = [r.t for r in series]
    F0 = F[0]
    rises = [F[i] - F[i - 1] for i in range(1, len(F))
             if F[i] - F[i - 1] > 1e-3 * (1 + abs(F0)) * (t[i] - t[i - 1])]
    total = sum(rises)
    ok = outcome == "global" and total <= 1e-3 * abs(F0)
    assert report(2, ok, f"{len(F)} frames, {len(rises)} above tol_E, total {total:.2e} vs {1e-3 * abs(F0):.2e}, "
                         f"F: {F0:.4f} -> {F[-1]:.4f}")


def test_criterion_03_virial():
    """[PAPER] dM2/dt = 4M - M^2/(2 pi) within 5% for M in {4 pi, 6 pi} while ||u|| < 50x initial."""
    cfg = parse_config(shipped_config("experiments/virial_check.ini"))
    assert cfg.grid.n == 256
    rows, times = [], []
    for m in (4 * math.pi, 6 * math.pi):
        t0 = time.perf_counter()
        rows += ex.virial_check(cfg, [m])
        times.append(time.perf_counter() - t0)
    ok = all(r.rel_error <= 0.05 for r in rows) and max(times) <= 180.0
    detail = ", ".join(f"M={r.mass / math.pi:.0f}pi rel.err {r.rel_error:.2%} ({s:.0f}s)" for r, s in zip(rows, times))
    assert report(3, ok, detail)


def test_criterion_04_critical_mass_dichotomy():
    """[PAPER] {0.7, 0.9, 1.1, 1.3} * 8 pi -> Global, Global, Blowup, Blowup on n = 256 and 512."""
    cfg = parse_config(shipped_config("experiments/critical_mass_sweep.ini"))
    masses = [v * cfg.total_mass for v in cfg.experiment.values]
    t0 = time.perf_counter()
    tab = ex.critical_mass_sweep(masses, cfg, confirm_factor=2, confirm_all=True)
    elapsed = time.perf_counter() - t0
    first = [r.outcome for r in tab.rows]
    second = [r.confirm_outcome for r in tab.rows]
    expected = ["Global", "Global", "Blowup", "Blowup"]
    top = tab.rows[-1]
    bound = ex.virial_blowup_bound(top.mass, second_moment(cfg.with_mass_scale(top.mass / cfg.total_mass).initial_field()))
    ok = (first == expected and second == expected and tab.brackets_critical_mass()
          and top.t_detect is not None and top.t_detect <= 1.2 * bound and elapsed <= 900.0)
    assert report(4, ok, f"n=256 {first}, n=512 {second}, bracket {tuple(round(x / EIGHT_PI, 2) for x in tab.bracket)}*8pi, "
                         f"t_detect(1.3) {top.t_detect} vs 1.2*T* {1.2 * bound:.4f}, {elapsed:.0f}s")


@pytest.fixture(scope="module")
def decay_run():
    cfg = parse_config(shipped_config("experiments/decay_rate.ini"))
    t0 = time.perf_counter()
    res = ex.decay_rate(cfg)
    return cfg, res, time.perf_counter() - t0


def test_criterion_05_decay_rate(decay_run):
    """[PAPER] ||u||_inf ~ (1 + t)^-1 for M = 4 pi over t in [10, 100]."""
    cfg, res, elapsed = decay_run
    assert cfg.total_mass == pytest.approx(4 * math.pi) and res.window == (10.0, 100.0)
    ok = abs(res.exponent + 1.0) <= 0.15 and elapsed <= 600.0
    assert report(5, ok, f"exponent {res.exponent:.4f} (first half {res.half_window_exponent:.4f}), {elapsed:.0f}s")


def test_criterion_06_elliptic_estimates():
    """[PAPER] 50 trials: Lp bound (+2%) for p = 2, 4 and H^-1 stability (+1%); zero failures."""
    grid = GridSpec(2, 4.0, 64)
    model = EllipticChemo(a=Coefficient(1.0, 0.5, 1.0), gamma=Coefficient(0.5, 1.0, 1.0))
    t0 = time.perf_counter()
    reps = [verify_lp_estimate(model, grid, 50, 2.0, allowance=0.02),
            verify_lp_estimate(model, grid, 50, 4.0, allowance=0.02),
            verify_h1_stability(model, grid, 50, allowance=0.01)]
    elapsed = time.perf_counter() - t0
    fails = sum(len(r.failing_seeds) for r in reps)
    ok = fails == 0 and all(len(r.rows) == 50 for r in reps) and elapsed <= 120.0
    assert report(6, ok, ", ".join(f"{r.check} worst ratio {r.worst_ratio:.3f}" for r in reps)
                  + f"; {fails} failures, {elapsed:.0f}s")


def test_criterion_07_entropy_bound():
    """[PAPER] equality for the matching Gaussian to 1e-6; zero violations on 100 random fields."""
    grid = GridSpec(2, 8.0, 64)
    eq = entropy_lower_bound_check(gaussian_field(grid, 2.0, 1.0, cell_average=False), 1.0)
    eq_err = abs(eq.lhs - eq.rhs) / abs(eq.rhs)
    violations = 0
    for i in range(100):
        u = random_density(grid, np.random.default_rng(i))
        violations += not entropy_lower_bound_check(u, 1.0).ok
    ok = eq_err <= 1e-6 and violations == 0
    assert report(7, ok, f"Gaussian equality rel. error {eq_err:.1e}, {violations}/100 violations")


def test_criterion_08_formulas():
    """[PAPER] m*(Newtonian, 3) = 4/3, M_c = 8 pi, canonical classification triples."""
    m3 = critical_exponent(Newtonian(3))
    mc = critical_mass(Linear(), Newtonian(2), 2).value
    labels = [classify(Linear(), Logarithmic(2, 1.0), 2).label,
              classify(PorousMedium(2.0), Logarithmic(2, 1.0), 2).label,
              classify(Linear(), Newtonian(3), 3).label]
    want = [Criticality.CRITICAL, Criticality.SUBCRITICAL, Criticality.SUPERCRITICAL]
    ok = m3 == 4 / 3 and abs(mc - EIGHT_PI) <= 1e-12 * EIGHT_PI and labels == want
    assert report(8, ok, f"m*={m3!r}, M_c-8pi={mc - EIGHT_PI:.1e}, labels {[x.value for x in labels]}")


def test_criterion_09_gns_invariance():
    """[DERIVED] the GNS ratio is dilation invariant within 1% for three tuples and two test functions."""
    grid = GridSpec(2, 8.0, 256)
    spreads = {}
    for name, f in gns_test_functions().items():
        for tup in GNS_TUPLES:
            spreads[(name, tup)] = gns_probe(f, grid, *tup).spread
    worst = max(spreads.values())
    ok = len(spreads) == 6 and worst <= 0.01
    assert report(9, ok, f"worst spread {worst:.2e} over {len(spreads)} (function, tuple) pairs")


def test_criterion_10_log_hls():
    """[DERIVED] Q(lam) varies <= 10% for lam <= 1; brute force at n = 64 matches the convolution within 1%."""
    f = lambda x, y: np.exp(-(x**2 + y**2)) / math.pi
    rep = log_hls_probe(f, [1.0, 0.75, 0.5, 0.35, 0.25], grid=GridSpec(2, 8.0, 256))
    small = GridSpec(2, 4.0, 64)
    field = ScalarField.from_function(small, f)
    fast, brute = log_interaction(field), log_interaction_bruteforce(field)
    rel = abs(fast - brute) / abs(brute)
    ok = rep.stable and rel <= 0.01
    assert report(10, ok, f"Q variation {rep.variation:.2%}, max Q {rep.max_Q:.4f}, brute-force rel. diff {rel:.1e}")


def test_criterion_11_selfsimilar_boundedness(decay_run):
    """[PAPER] M = 4 pi: ||theta||_inf varies <= 20% on tau in [1, 2.3]; G non-increasing within tol_E."""
    cfg, res, _ = decay_run
    rep = ex.selfsim_boundedness(cfg, frames=res.frames)
    var = rep.theta_variation(1.0, 2.3)
    count, total = rep.G_violations()
    covered = min(rep.taus) <= 1.0 and max(rep.taus) >= 2.3
    ok = covered and var <= 0.20 and count == 0
    assert report(11, ok, f"theta variation {var:.2%} over {len(rep.taus)} frames, G violations {count} (total {total:.1e})")
