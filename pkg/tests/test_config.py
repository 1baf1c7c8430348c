import pytest

from pidheal.harness.config import (ConfigError, ExperimentConfig, dump_config, load_config,
                                    parse_text)


def test_defaults_validate():
    cfg = load_config()
    assert cfg == ExperimentConfig()
    assert cfg.gains == (0.5, 0.0, 0.5)


def test_parse_text_comments_and_blank_lines():
    assert parse_text("# header\n\nc = 2.5  # inline\nscheme = P, PID\n") == {"c": "2.5", "scheme": "P, PID"}


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("c = 2.0\nseed = 5\ngains = 1,0,0\n")
    cfg = load_config(str(path), {"c": "3.0"})
    assert cfg.c == 3.0 and cfg.seed == 5 and cfg.gains == (1.0, 0.0, 0.0)


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides={"scheme": "P,PD", "bench_d": "16,32"})
    path = tmp_path / "dump.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(str(path)) == cfg


@pytest.mark.parametrize("pairs", [
    {"c": "-1"}, {"threshold": "0"}, {"threshold": "1.5"}, {"gains": "1,2"}, {"gains": "1,-1,0"},
    {"controller": "magic"}, {"scheme": "PX"}, {"r": "0"}, {"r": "40"}, {"seed": "abc"},
    {"nonsense": "1"}, {"bench_repeats": "0"}, {"trials": "0"},
])
def test_invalid_values(pairs):
    with pytest.raises(ConfigError):
        load_config(overrides=pairs)


def test_malformed_and_missing_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("c 1\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(str(path))
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "missing.cfg"))
