import pytest

from morphpd import config as cfgmod
from morphpd.cli import find_config
from morphpd.errors import ConfigError

BASE = """
[scenario]
name = small
[geometry]
kind = rect
width = 20.0
height = 20.0
spacing = 0.5
[material]
E = 72e3
rho = 2.44e-9
G0 = 1.35e-4
[criterion]
mode = broken_bond
initial_flags = 10 10 {r1} {r2}
[load]
kind = step
sides = top bottom
sigma0 = 5.0
[numerics]
t_end = 1e-6
"""


def small(r1=3.0, r2=6.0, **extra):
    text = BASE.format(r1=r1, r2=r2)
    for line in extra.values():
        text += line + "\n"
    return cfgmod.parse_text(text)


def test_valid_small_config():
    vals = cfgmod.validate(small())
    assert vals["delta"] == pytest.approx(1.5)
    assert vals["dt"] == pytest.approx(0.5 * vals["dt_cr"])


@pytest.mark.parametrize("r1, r2, msg", [(0.75, 6.0, "r1 >= delta"), (2.0, 4.0, "r2 - r1 >= 2 delta")])
def test_flag_radius_errors(r1, r2, msg):
    with pytest.raises(ConfigError, match=msg.replace("-", r"\-")):
        cfgmod.validate(small(r1, r2))


def test_dt_above_critical_is_rejected():
    cfg = small(numerics="dt = 1e-7")
    with pytest.raises(ConfigError, match="dt_cr"):
        cfgmod.validate(cfg)


def test_missing_sections_and_fields():
    with pytest.raises(ConfigError, match=r"missing \[criterion\]"):
        cfgmod.parse_text(BASE.format(r1=3, r2=6).replace("[criterion]\nmode = broken_bond\n"
                                                          "initial_flags = 10 10 3 6\n", ""))
    with pytest.raises(ConfigError, match="'E'"):
        cfgmod.material_params(cfgmod.parse_text(BASE.format(r1=3, r2=6).replace("E = 72e3\n", "")))
    with pytest.raises(ConfigError, match="unknown key"):
        cfgmod.parse_text(BASE.format(r1=3, r2=6) + "colour = red\n")
    with pytest.raises(ConfigError, match="strength mode"):
        cfgmod.validate(cfgmod.parse_text(BASE.format(r1=3, r2=6).replace("broken_bond", "strength")))


def test_branch_plate_resolved_values(tmp_path):
    cfg = cfgmod.load_config(find_config("branch_plate"))
    vals = cfgmod.validate(cfg)
    assert vals["delta"] == pytest.approx(1.5)
    assert vals["dt"] == pytest.approx(4e-8)
    assert vals["dt_cr"] == pytest.approx(0.5 / 5.4322e6, rel=1e-3)
    assert vals["C_R"] == pytest.approx(3.0986e6, rel=1e-4)
    cfgmod.write_resolved(cfg, tmp_path / "r.ini")
    again = cfgmod.load_config(tmp_path / "r.ini")
    assert again.material == cfg.material and again.numerics == cfg.numerics


def test_all_bundled_configs_validate():
    from morphpd.scenarios import builtin_files

    for path in builtin_files():
        cfgmod.validate(cfgmod.load_config(path))


def test_unknown_bundled_name():
    with pytest.raises(ConfigError, match="no config"):
        find_config("nope")
