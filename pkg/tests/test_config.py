import math

import pytest
from hypothesis import given, strategies as st

from phasecap.config import ConfigError, parse_config, format_config, load_config
from phasecap.materials import PhysicalParams
from phasecap.optimizer import OptimParams


def test_empty_config_has_example1_defaults():
    cfg = parse_config("")
    o = cfg.optim
    assert (o.nu, o.kappa, o.lambda1, o.lambda2, o.beta, o.v_target) == (
        2e-4, 1e-3, 1.0, 1e-2, 500.0, 1.0)
    assert cfg.physical == PhysicalParams()
    p = cfg.physical
    assert (p.eps0, p.epsm, p.d0, p.dm, p.g_gamma2, p.c_inf, p.alpha0, p.p) == (
        0.01, 5.0, 0.5, 0.01, -0.5, 0.5, 1.0, 2)
    assert cfg.geometry.kind == "rectangle"
    assert (cfg.geometry.width, cfg.geometry.height) == (1.0, 2.0)


def test_negative_kappa_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("[optim]\n\nkappa = -1\n")
    assert exc.value.line == 3
    assert "kappa" in str(exc.value) and "line 3" in str(exc.value)


def test_annulus_example2_volume_target():
    text = ("[geometry]\nkind = annulus\nnr = 12\nntheta = 96\n"
            "[optim]\nnu = 1e-3\nv_target_fraction = 0.5\n")
    cfg = parse_config(text)
    area = cfg.geometry.build().area()
    assert cfg.optim.v_target == pytest.approx(0.5 * area, rel=1e-14)
    assert cfg.optim.v_target == pytest.approx(0.5 * math.pi * 0.96, rel=2e-3)
    assert cfg.optim.nu == 1e-3


@pytest.mark.parametrize("text,line", [
    ("[optim]\nkapa = 1e-3\n", 2),
    ("[physics]\n", 1),
    ("[geometry]\nnx = 4.5\n", 2),
    ("[optim]\nbeta = lots\n", 2),
    ("[optim]\nbeta = 1\nbeta = 2\n", 3),
    ("nx = 4\n", 1),
    ("[geometry]\nnx 4\n", 2),
    ("[optim]\nearly_stop = maybe\n", 2),
    ("[optim]\nv_target = 0.5\nv_target_fraction = 0.5\n", 3),
    ("[physical]\neps0 = 0\n", 2),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line


def test_comments_and_overrides():
    cfg = parse_config("# header\n[optim]\nbeta = 250  # inline\n[run]\noutput_dir = a/b\n")
    assert cfg.optim.beta == 250.0
    assert cfg.output_dir == "a/b"


def test_shipped_configs_load():
    for name in ("example1", "example2", "coarse"):
        cfg = load_config(f"configs/{name}.cfg")
        assert isinstance(cfg.optim, OptimParams)
    assert load_config("configs/example1.cfg").initial_m == 4


@pytest.mark.parametrize("text", ["", "[geometry]\nkind = annulus\n[optim]\n"
                                  "v_target_fraction = 0.3\nadjoint = galerkin\n",
                                  "[physical]\nz = 1, -1\n[run]\nseed = 7\n"])
def test_round_trip(text):
    cfg = parse_config(text)
    assert parse_config(format_config(cfg)) == cfg


@given(kappa=st.floats(1e-6, 1.0), beta=st.floats(1e-3, 1e4), stride=st.integers(1, 50),
       early=st.booleans())
def test_round_trip_property(kappa, beta, stride, early):
    text = (f"[optim]\nkappa = {kappa!r}\nbeta = {beta!r}\nstate_update_stride = {stride}\n"
            f"early_stop = {str(early).lower()}\n")
    cfg = parse_config(text)
    assert cfg.optim.kappa == kappa
    assert parse_config(format_config(cfg)) == cfg
