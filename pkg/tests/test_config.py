import pytest

from adaptive_eb_module.config import load_config, validate_config
from adaptive_eb_module.models import PipelineConfig


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.env"
    path.write_text(
        "# density run\n"
        "ROLE=temperature\n"
        "EB_AVG=0.5\n"
        "BLOCK_DIMS=16,16,16\n"
        "CALIBRATION_EBS=0.1,0.3\n"
        "T_HALO=\n"
    )
    return path


def test_defaults():
    config = load_config(validate=False)
    assert config == PipelineConfig()
    assert config.resolved_t_halo() == pytest.approx(176.32)
    assert config.resolved_strategy() == "fft"


def test_file_values_are_typed(config_file):
    config = load_config(config_file)
    assert config.role == "temperature"
    assert config.eb_avg == 0.5
    assert config.block_dims == (16, 16, 16)
    assert config.calibration_ebs == (0.1, 0.3)
    assert config.t_halo is None


def test_flags_beat_the_file_and_none_is_ignored(config_file):
    config = load_config(config_file, {"eb_avg": 0.25, "strategy": None, "workers": "4"})
    assert config.eb_avg == 0.25
    assert config.strategy is None
    assert config.workers == 4


def test_unknown_and_malformed_keys(tmp_path, config_file):
    with pytest.raises(ValueError):
        load_config(config_file, {"eb": 1.0})
    bad = tmp_path / "bad.env"
    bad.write_text("EB_AVG=abc\n")
    with pytest.raises(ValueError):
        load_config(bad)
    bad.write_text("COLOUR=blue\n")
    with pytest.raises(ValueError):
        load_config(bad)
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.env")


@pytest.mark.parametrize(
    "overrides",
    [
        {},
        {"eb_avg": 1.0, "target_sigma": 5.0},
        {"eb_avg": -1.0},
        {"eb_avg": 1.0, "tol": -0.5},
        {"eb_avg": 1.0, "role": "pressure"},
        {"eb_avg": 1.0, "strategy": "greedy"},
        {"eb_avg": 1.0, "strategy": "halo"},
        {"eb_avg": 1.0, "connectivity": 18},
        {"eb_avg": 1.0, "rate_mode": "guess"},
        {"eb_avg": 1.0, "block_dims": (0, 8, 8)},
    ],
)
def test_validation_rejects(overrides):
    with pytest.raises(ValueError):
        load_config(overrides=overrides)


def test_density_with_budget_defaults_to_combined():
    config = validate_config(PipelineConfig(eb_avg=1.0, mass_fault_budget=1e4))
    assert config.resolved_strategy() == "combined"
    assert PipelineConfig(role="temperature", mass_fault_budget=1e4).resolved_strategy() == "fft"
