import math
from importlib import resources

import pytest

from aggrosim.chemo import ConvolutionChemo, EllipticChemo
from aggrosim.config import ConfigError, dump_config, load_config, parse_config
from aggrosim.diffusion import Linear, PorousMedium, Regularized
from aggrosim.grid import integrate
from aggrosim.kernels import MollifiedKernel, Newtonian

BASE = """
[grid]
d = 2
L = 4.0
n = 32

[kernel]
kernel = newtonian

[diffusion]
model = linear

[chemo]
model = convolution

[init]
gaussian = mass=2.0, eps=1.0, center=0 0
gaussian = mass=1.0, eps=2.0, center=1 -1

[run]
t_end = 0.5
"""


def _shipped():
    root = resources.files("aggrosim").joinpath("configs")
    out = [p for p in root.iterdir() if p.name.endswith(".ini")]
    out += [p for p in root.joinpath("experiments").iterdir() if p.name.endswith(".ini")]
    return out


def test_parse_minimal():
    """[TRIVIAL]"""
    cfg = parse_config(BASE)
    assert cfg.grid.n == 32 and cfg.t_end == 0.5
    assert len(cfg.bumps) == 2 and cfg.bumps[1].center == (1.0, -1.0)
    assert cfg.total_mass == 3.0
    assert isinstance(cfg.build_chemo(), ConvolutionChemo)
    assert isinstance(cfg.build_kernel(), Newtonian)
    assert integrate(cfg.initial_field()) == pytest.approx(3.0, rel=1e-6)


@pytest.mark.parametrize("path", _shipped(), ids=lambda p: p.name)
def test_shipped_configs_roundtrip(path):
    """[DERIVED] dump(parse(text)) is a fixed point and re-parses to an equal config."""
    cfg = parse_config(path.read_text())
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text


def test_load_config(tmp_path):
    """[TRIVIAL]"""
    p = tmp_path / "a.ini"
    p.write_text(BASE)
    assert load_config(str(p)) == parse_config(BASE)


def test_mass_scaling():
    """[TRIVIAL]"""
    cfg = parse_config(BASE).with_mass_scale(2.0)
    assert cfg.total_mass == 6.0


def test_elliptic_and_options():
    """[TRIVIAL] elliptic chemo, PME with regularization, mollified kernel, stepper keys."""
    text = BASE.replace("model = convolution", "model = elliptic\na = expr:gauss(0.5,2.0)+1.0\ngamma = const:0.5")
    text = text.replace("model = linear", "model = pme:m=2.0\nregularize = 0.1")
    text += "\n[stepper]\ncfl_advect = 0.3\nring_tolerance = 0.0\n"
    cfg = parse_config(text)
    assert isinstance(cfg.build_chemo(), EllipticChemo)
    model = cfg.build_diffusion()
    assert isinstance(model, Regularized) and isinstance(model.base, PorousMedium)
    assert cfg.stepper.cfl_advect == 0.3 and cfg.stepper.ring_tolerance == 0.0
    moll = parse_config(BASE.replace("kernel = newtonian", "kernel = newtonian\nmollify = 0.1")).build_kernel()
    assert isinstance(moll, MollifiedKernel)


@pytest.mark.parametrize("edit,line", [
    (("[run]", "[bogus]"), 20),
    (("t_end = 0.5", "t_end = soon"), 21),
    (("n = 32", "n = 30"), 5),
    (("kernel = newtonian", "kernel = yukawa"), 8),
    (("model = linear", "model = pme:m=0.5"), 11),
    (("t_end = 0.5", "t_end = 0.5\ncolour = red"), 22),
])
def test_errors_carry_line_numbers(edit, line):
    """[TRIVIAL]"""
    with pytest.raises(ConfigError) as info:
        parse_config(BASE.replace(*edit))
    assert info.value.line == line


def test_rejects_zero_gamma_in_2d():
    """[TRIVIAL] the 2-D elliptic model needs gamma > 0."""
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("model = convolution", "model = elliptic\ngamma = const:0.0"))


def test_missing_init_is_an_error():
    """[TRIVIAL]"""
    with pytest.raises(ConfigError):
        parse_config(BASE.replace("gaussian = mass=2.0, eps=1.0, center=0 0\n", "").replace("gaussian = mass=1.0, eps=2.0, center=1 -1\n", ""))


def test_experiment_section():
    """[TRIVIAL]"""
    text = BASE + "\n[experiment]\nname = critical_mass_sweep\nvalues = 0.7, 1.3\nfit_window = 1, 5\n"
    ex = parse_config(text).experiment
    assert ex.values == (0.7, 1.3) and ex.fit_window == (1.0, 5.0)
    with pytest.raises(ConfigError):
        parse_config(text.replace("fit_window = 1, 5", "fit_window = 5, 1"))


def test_shipped_masses():
    """[TRIVIAL] the example masses are the advertised multiples of 8 pi."""
    root = resources.files("aggrosim").joinpath("configs")
    sub = parse_config(root.joinpath("pks_subcritical.ini").read_text())
    sup = parse_config(root.joinpath("pks_supercritical.ini").read_text())
    assert sub.total_mass == pytest.approx(0.9 * 8 * math.pi)
    assert sup.total_mass == pytest.approx(1.3 * 8 * math.pi)
    assert isinstance(sub.build_diffusion(), Linear)
