"""Command line: ``aggrosim simulate | sweep | verify | dump-config``.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from importlib import resources

import numpy as np

from . import experiments as ex
from .chemo import Coefficient, EllipticChemo, verify_h1_stability, verify_lp_estimate
from .config import ConfigError, RunConfig, dump_config, load_config, parse_config
from .diagnostics import entropy_lower_bound_check, gns_probe, log_hls_probe
from .grid import GridSpec, ScalarField, gaussian_field, integrate
from .integrator import BlowupSuspected, BoundaryOverflow, run
from .outputs import write_outputs

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2


def shipped_config(name: str) -> str:
    return resources.files("aggrosim").joinpath("configs", name).read_text(encoding="utf-8")


def _load(path: str) -> RunConfig:
    if path.startswith("shipped:"):
        return parse_config(shipped_config(path[8:]))
    return load_config(path)


# ------------------------------------------------------------------ simulate


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    if args.observe_every:
        cfg = replace(cfg, observe_every=args.observe_every)
    out = args.out or cfg.output
    snaps: list[tuple[int, ScalarField]] = []

    def keep(state, rec):
        if cfg.snapshots:
            snaps.append((state.step_count, state.u))

    u0 = cfg.initial_field()
    code = EXIT_OK
    try:
        state, series = run(u0, cfg.build_chemo(), cfg.build_diffusion(), cfg.stepper, cfg.t_end,
                            observers=[keep], observe_every=cfg.observe_every)
        status = f"completed t = {state.t:.6g} in {state.step_count} steps"
    except BlowupSuspected as exc:
        series = exc.series
        status = f"blow-up suspected ({exc.reason}) at t = {exc.t:.6g}"
    except BoundaryOverflow as exc:
        series = exc.series
        status = str(exc)
        code = EXIT_FAIL
    if series:
        drift = abs(series[-1].mass - series[0].mass) / series[0].mass
        status += f"; relative mass drift {drift:.3e}"
        if drift > 1e-10:
            code = EXIT_FAIL
    manifest = write_outputs(series, snaps, out, extra={"config.ini": dump_config(cfg).encode()})
    print(status)
    print(f"wrote {len(manifest['files'])} files to {out}")
    return code


# --------------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    name = args.experiment
    values = list(cfg.experiment.values) if cfg.experiment and cfg.experiment.values else []
    base = cfg.total_mass
    if name == "critical_mass_sweep":
        vals = values or [0.7, 0.9, 1.1, 1.3]
        table = ex.critical_mass_sweep([v * base for v in vals], cfg,
                                       confirm_factor=cfg.experiment.confirm_factor if cfg.experiment else 2)
        print(table.csv(), end="")
        print(f"bracket = {table.bracket}, M_c = {table.critical_mass}")
        _write_table(args.out, "sweep.csv", table.csv())
        if table.inconclusive:
            return EXIT_INCONCLUSIVE
        return EXIT_OK if table.brackets_critical_mass() else EXIT_FAIL
    if name == "decay_rate":
        res = ex.decay_rate(cfg)
        print(f"exponent = {res.exponent:.4f} over t in {res.window}; first half of window: "
              f"{res.half_window_exponent:.4f}")
        _write_table(args.out, "decay.csv", f"exponent,half_window_exponent\n{res.exponent!r},{res.half_window_exponent!r}\n")
        return EXIT_OK if abs(res.exponent + 1.0) <= 0.15 else EXIT_FAIL
    if name == "virial_check":
        rows = ex.virial_check(cfg, [v * base for v in (values or [1.0])])
        text = "mass,predicted,analytic,measured,rel_error\n" + "".join(
            f"{r.mass!r},{r.predicted!r},{r.analytic!r},{r.measured!r},{r.rel_error!r}\n" for r in rows)
        print(text, end="")
        _write_table(args.out, "virial.csv", text)
        return EXIT_OK if all(r.rel_error <= 0.05 for r in rows) else EXIT_FAIL
    if name == "smalldata_probe":
        rows = ex.smalldata_probe(cfg, values or [0.1, 1.0, 10.0])
        text = "amplitude,mass,status,max_ratio\n" + "".join(
            f"{r.amplitude!r},{r.mass!r},{r.status},{r.max_ratio!r}\n" for r in rows)
        print(text, end="")
        _write_table(args.out, "smalldata.csv", text)
        smallest = min(rows, key=lambda r: r.amplitude)
        return EXIT_OK if smallest.status == "Bounded" else EXIT_FAIL
    if name == "selfsim_boundedness":
        rep = ex.selfsim_boundedness(cfg)
        text = "tau,theta_inf,tail,G\n" + "".join(
            f"{a!r},{b!r},{c!r},{d!r}\n" for a, b, c, d in zip(rep.taus, rep.theta_inf, rep.tails, rep.G))
        print(text, end="")
        _write_table(args.out, "selfsim.csv", text)
        count, _ = rep.G_violations()
        ok = rep.bounded and count == 0
        if rep.taus[-1] >= 2.3:
            ok = ok and rep.theta_variation() <= 0.20
        return EXIT_OK if ok else EXIT_FAIL
    print(f"unknown experiment {name!r}", file=sys.stderr)
    return EXIT_FAIL


def _write_table(out: str | None, name: str, text: str) -> None:
    if out:
        write_outputs([], [], out, extra={name: text.encode()})


# -------------------------------------------------------------------- verify


def _emit(check: str, seed, lhs: float, rhs: float, ok: bool) -> None:
    print(json.dumps({"check": check, "seed": seed, "lhs": lhs, "rhs": rhs, "ok": bool(ok)}))


def verify_elliptic(trials: int, seed: int) -> bool:
    grid = GridSpec(2, 4.0, 64)
    model = EllipticChemo(a=Coefficient(1.0, 0.5, 1.0), gamma=Coefficient(0.5, 1.0, 1.0))
    ok = True
    for rep in (verify_lp_estimate(model, grid, trials, 2.0, seed0=seed),
                verify_lp_estimate(model, grid, trials, 4.0, seed0=seed),
                verify_h1_stability(model, grid, trials, seed0=seed)):
        for r in rep.rows:
            _emit(rep.check, r.seed, r.lhs, r.rhs, r.ok)
        ok &= rep.ok
    return ok


def random_density(grid: GridSpec, rng: np.random.Generator) -> ScalarField:
    u = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, 6))):
        c = rng.uniform(-grid.L / 2, grid.L / 2, size=grid.dim)
        u += gaussian_field(grid, rng.uniform(0.1, 5.0), rng.uniform(0.5, 8.0), c).values
    return ScalarField(grid, u)


def verify_entropy(trials: int, seed: int) -> bool:
    grid = GridSpec(2, 8.0, 64)
    ok = True
    for i in range(trials):
        rng = np.random.default_rng(seed + i)
        u = random_density(grid, rng)
        for eps in (0.25, 1.0, 4.0):
            r = entropy_lower_bound_check(u, eps)
            _emit(f"entropy(eps={eps:g})", seed + i, r.lhs, r.rhs, r.ok)
            ok &= r.ok
    return ok


GNS_TUPLES = ((1.0, 2.0, 2.0, 1.0), (1.0, 3.0, 2.0, 1.0), (1.0, 4.0, 2.0, 2.0))


def gns_test_functions():
    return {
        "gaussian": lambda x, y: np.exp(-(x**2 + y**2)),
        "two_bump": lambda x, y: np.exp(-2.0 * ((x - 1.0) ** 2 + y**2)) + 0.5 * np.exp(-3.0 * ((x + 1.0) ** 2 + (y - 0.5) ** 2)),
    }


def verify_gns(trials: int, seed: int) -> bool:
    grid = GridSpec(2, 8.0, 256)
    ok = True
    for name, f in gns_test_functions().items():
        for p, q, r, k in GNS_TUPLES:
            rep = gns_probe(f, grid, p, q, r, k)
            ref = rep.ratios[rep.scales.index(1.0)]
            for lam, val in zip(rep.scales, rep.ratios):
                _emit(f"gns({name},p={p:g},q={q:g},r={r:g},k={k:g},lam={lam:g})", seed, val, ref,
                      abs(val / ref - 1.0) <= 0.01)
            ok &= rep.invariant
    return ok


def verify_loghls(trials: int, seed: int) -> bool:
    grid = GridSpec(2, 8.0, 256)
    f = lambda x, y: np.exp(-(x**2 + y**2)) / math.pi
    rep = log_hls_probe(f, [1.0, 0.75, 0.5, 0.35, 0.25], grid=grid)
    ref = rep.Q[0]
    for lam, q in zip(rep.scales, rep.Q):
        _emit(f"loghls(lam={lam:g})", seed, q, ref, abs(q - ref) <= 0.10 * abs(ref))
    return rep.stable


def verify_energy(trials: int, seed: int) -> bool:
    cfg = parse_config(shipped_config("pks_subcritical.ini"))
    cfg = replace(cfg, t_end=2.0)
    _, series = run(cfg.initial_field(), cfg.build_chemo(), cfg.build_diffusion(), cfg.stepper, cfg.t_end,
                    observe_every=cfg.observe_every)
    F0 = series[0].free_energy
    ok = True
    for a, b in zip(series, series[1:]):
        tol = 1e-3 * (1.0 + abs(F0)) * (b.t - a.t)
        good = b.free_energy - a.free_energy <= tol
        _emit("energy", seed, b.free_energy - a.free_energy, tol, good)
        ok &= good
    return ok


def verify_virial(trials: int, seed: int) -> bool:
    cfg = parse_config(shipped_config("experiments/virial_check.ini"))
    base = cfg.total_mass
    rows = ex.virial_check(cfg, [v * base for v in cfg.experiment.values])
    for r in rows:
        ref = r.analytic if r.analytic is not None else r.predicted
        _emit("virial", seed, r.measured, ref, r.rel_error <= 0.05)
    return all(r.rel_error <= 0.05 for r in rows)


SUITES = {
    "elliptic": verify_elliptic,
    "energy": verify_energy,
    "virial": verify_virial,
    "gns": verify_gns,
    "loghls": verify_loghls,
    "entropy": verify_entropy,
}


def cmd_verify(args) -> int:
    seed = args.seed
    if args.config:
        seed = _load(args.config).seed if args.seed is None else args.seed
    ok = SUITES[args.suite](args.trials, seed or 0)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_dump(args) -> int:
    print(dump_config(_load(args.config)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggrosim", description="Aggregation-diffusion simulator and checks")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run one configuration and write outputs")
    s.add_argument("--config", required=True, help="config path, or shipped:<name>.ini")
    s.add_argument("--out", help="output directory (default: [run] output)")
    s.add_argument("--observe-every", type=int, help="observer cadence in steps")
    s.set_defaults(func=cmd_simulate)
    w = sub.add_parser("sweep", help="run a canned experiment")
    w.add_argument("--experiment", required=True, choices=["critical_mass_sweep", "decay_rate", "virial_check",
                                                           "smalldata_probe", "selfsim_boundedness"])
    w.add_argument("--config", required=True)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)
    v = sub.add_parser("verify", help="randomized inequality checks, JSON lines on stdout")
    v.add_argument("--suite", required=True, choices=sorted(SUITES))
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--config")
    v.set_defaults(func=cmd_verify)
    d = sub.add_parser("dump-config", help="print the canonical form of a config")
    d.add_argument("--config", required=True)
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ex.ExperimentError) as exc:  # OutputError is an OSError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
