import pytest

from qreadout.config import ExperimentConfig
from qreadout.errors import ConfigError


def test_defaults_load():
    cfg = ExperimentConfig.load(None)
    assert cfg.seed == 1234 and cfg.preset_name == "no-twpa"
    assert cfg.sim().n_samples == 500
    assert cfg.cycle().norm_cycles == 9
    assert cfg.train().batch_size == 64


def test_partial_override_merges(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  epochs: 3\nsim:\n  readout_len: 2.0e-6\n")
    cfg = ExperimentConfig.load(p, seed=5)
    assert cfg.train().epochs == 3 and cfg.train().lr == 1e-3
    assert cfg.sim().n_samples == 1000 and cfg.seed == 5


def test_preset_overrides_noise(tmp_path):
    cfg = ExperimentConfig.load(None)
    assert cfg.sim("twpa").noise_sigma < cfg.sim("no-twpa").noise_sigma


@pytest.mark.parametrize("text", ["sim: [1, 2\n", "- a\n- b\n", "sweep:\n  readout_times: [-1]\n",
                                  "cycle:\n  accumulation: diagonal\n", "lut:\n  bins: 3\n"])
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(tmp_path / "none.yaml")
