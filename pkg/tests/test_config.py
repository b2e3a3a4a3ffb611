import json

import pytest

from lieflow.cli import resolve_config, shipped_configs
from lieflow.config import ConfigError, build_config, load_config, parse_text


def test_defaults_and_normalised_grading():
    cfg = build_config({"n": 3, "grading": [0, 1, 0]})
    assert str(cfg.grading) == "0,1,0" and cfg.raw["grading"] == "0,1,0"
    assert cfg.M == 1 and cfg.mode == "float" and cfg.levels == 3
    assert cfg.digest() == build_config({"n": 3, "grading": "0,1,0"}).digest()


def test_grading_defaults_to_all_black():
    assert str(build_config({"n": 2}).grading) == "1,1"


def test_overrides_merge_into_nested_blocks():
    cfg = build_config({"n": 3, "grid": {"x1": 0.5}}, {"grid": {"h": 0.05}, "tolerances": {"identity": 1e-6}})
    assert cfg.grid.h == 0.05 and cfg.grid.x1 == 0.5
    assert cfg.tolerances["identity"] == 1e-6 and cfg.tolerances["order_band"] == [1.8, 2.2]
    assert cfg.digest() != build_config({"n": 3}).digest()


@pytest.mark.parametrize("data,where", [
    ({}, "n"),
    ({"n": 0}, "n"),
    ({"n": 3, "grading": "1,2,0"}, "grading"),
    ({"n": 3, "grading": "1,0"}, "grading"),
    ({"n": 3, "mode": "symbolic"}, "mode"),
    ({"n": 3, "grading": "0,1,0", "M": 2}, "M"),
    ({"n": 3, "colour": 1}, "config"),
    ({"n": 3, "grid": {"dx": 1}}, "grid"),
    ({"n": 3, "grid": {"h": "small"}}, "grid.h"),
    ({"n": 3, "grid": {"refinements": 0}}, "grid.refinements"),
    ({"n": 3, "tolerances": {"order_band": [2.2, 1.8]}}, "tolerances.order_band"),
    ({"n": 3, "goursat": "yes"}, "goursat"),
    ({"n": 3, "coefficients": {"Q": 1}}, "coefficients"),
    ({"n": 3, "grading": "0,1,0", "coefficients": {"P": {"1": {"1": [[1]]}}}}, "coefficients.P.1.1"),
    ({"n": 3, "grading": "0,1,0", "coefficients": {"P": {"1": {"3": "identity"}}}}, "coefficients.P.1.3"),
    ({"n": 3, "grading": "0,1,0", "coefficients": {"P": {"2": {"1": "identity"}}}}, "coefficients.P.2"),
    ({"n": 3, "coefficients": {"A0": {"4": 1.0}}}, "coefficients.A0.4"),
    ({"n": 3, "grading": "1,1,1", "coefficients": {"P": {"1": {"1": [[[0, 0, 0, 0, 0, 1]]]}}, "degree_cap": 3}},
     "coefficients.P.1.1"),
])
def test_invalid_configs_name_the_field(data, where):
    with pytest.raises(ConfigError) as info:
        build_config(data)
    assert info.value.where.startswith(where)


def test_polynomial_blocks():
    cfg = build_config({"n": 3, "grading": "0,1,0", "coefficients": {
        "P": {"1": {"1": [[[1, 2], 0], [[0, 0, 3], -1]]}},
        "Pbar": "identity",
    }})
    P = cfg.coefficients.P
    assert P[(1, 1)].shape == (2, 2, 3)
    assert P[(1, 1)][:, 0, :].tolist() == [[1, 2, 0], [0, 0, 3]]
    assert P[(1, 1)][:, 1, :].tolist() == [[0, 0, 0], [-1, 0, 0]]
    assert set(cfg.coefficients.Pbar) == {(1, 1)}


def test_json_errors_carry_line_and_column():
    with pytest.raises(ConfigError) as info:
        parse_text('{\n  "n": 3,\n  "grading" "0,1,0"\n}', "bad.json")
    assert "line 3 column" in str(info.value)
    with pytest.raises(ConfigError):
        parse_text("[1, 2]")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize("name", ["scalar-toda.json", "matrix-toda-m1.json", "grade2-a4.json"])
def test_shipped_configs_load(name):
    assert name in shipped_configs()
    cfg = load_config(resolve_config(name))
    assert cfg.raw["name"] == name[:-5]
    assert load_config(resolve_config(name[:-5])).digest() == cfg.digest()


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n": 4, "grading": "0,1,0,1", "M": 2}))
    cfg = load_config(path, {"seed": 7})
    assert cfg.M == 2 and cfg.seed == 7
