import pytest

from simplexma.config import ConfigError, load_config, parse_config


def test_minimal_and_full(tmp_path):
    rc = parse_config({"seed": 7})
    assert rc.dim == 1 and list(rc.solve.levels) == [6.0, 8.0, 10.0]
    p = tmp_path / "run.toml"
    p.write_text('seed = 3\ndim = 2\noutput_dir = "o"\n[solve]\nlevels = [8, 10]\nh = 0.01\n'
                 '[simulate]\nx0 = [0.2, 0.5]\nn_paths = 10\n[verify]\ntests = ["censoring"]\nk = 2.5\n')
    rc = load_config(p)
    assert rc.seed == 3 and rc.dim == 2 and rc.output_dir == "o"
    assert rc.solve.h == 0.01 and rc.simulate.n_paths == 10 and rc.verify.k == 2.5


@pytest.mark.parametrize("raw", [
    {},
    {"seed": -1},
    {"seed": True},
    {"seed": 1, "dim": 3},
    {"seed": 1, "colour": "red"},
    {"seed": 1, "solve": {"levels": [6, 8], "hh": 1}},
    {"seed": 1, "simulate": {"paths": 10}},
    {"seed": 1, "verify": {"k": 3, "extra": 1}},
    {"seed": 1, "solve": {"levels": [8, 6]}},
])
def test_rejected(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
