import json
import math

import numpy as np
import pytest

from fracfp import io
from fracfp.config import defaults, load_config, parse_config
from fracfp.errors import ConfigError


def test_defaults():
    cfg = defaults()
    assert cfg["grid"]["n"] == 512
    assert parse_config("").gamma == 2.0


def test_parse_values():
    cfg = parse_config("""
# comment
[equilibrium]
beta = 2.8          ; trailing comment
asymmetry_plus = 1.5
[sweep]
etas = 1e-2, 1e-3 1e-4
[grid]
vmax = auto
""")
    assert cfg.gamma == pytest.approx(1.4)
    assert cfg["sweep"]["etas"] == [1e-2, 1e-3, 1e-4]
    assert cfg["grid"]["vmax"] is None


@pytest.mark.parametrize("text, line, what", [
    ("[equilibrium]\ngamma = 2\nfoo = 1\n", 3, "unknown key"),
    ("[nowhere]\n", 1, "unknown section"),
    ("gamma = 2\n", 1, "outside"),
    ("[grid]\nn = 12.5\n", 2, "bad value"),
    ("[grid]\nn = 10\nn = 20\n", 3, "duplicate"),
    ("[grid\n", 1, "malformed"),
    ("[grid]\n\njust words\n", 3, "expected"),
    ("[equilibrium]\nfamily = gaussian\n", 2, "expected one of"),
])
def test_errors_carry_line_numbers(text, line, what):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.ini")
    assert f"run.ini:{line}:" in str(exc.value)
    assert what in str(exc.value)


def test_inconsistent_gamma_beta():
    with pytest.raises(ConfigError):
        parse_config("[equilibrium]\ngamma = 2\nbeta = 3\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_json_roundtrip(tmp_path):
    obj = {"a": 0.1, "b": [1, 2.5e-300], "c": 1 + 2j, "d": float("nan"), "e": True, "f": None,
           "g": np.float64(1 / 3), "h": np.arange(3)}
    p = io.write_json(tmp_path / "x.json", obj)
    back = json.loads(p.read_text())
    assert back["a"] == 0.1 and back["b"][1] == 2.5e-300
    assert back["c"] == {"re": 1.0, "im": 2.0}
    assert back["d"] is None and back["e"] is True and back["h"] == [0, 1, 2]
    assert back["g"] == 1 / 3


def test_fmt_roundtrips_every_double(rng):
    for x in rng.standard_normal(1000) * 10.0 ** rng.integers(-300, 300, 1000):
        assert float(io.fmt(x)) == x
    assert io.fmt(math.pi) == "3.1415926535897931"


def test_csv(tmp_path):
    p = io.write_csv(tmp_path / "t.csv", ["a", "b"], [(0.1, "x"), (np.float64(2.0), 3)])
    assert p.read_text() == "a,b\n0.10000000000000001,x\n2,3\n"
