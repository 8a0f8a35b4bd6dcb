import numpy as np
import pytest

from adaptive_eb_module.errors import CalibrationError
from adaptive_eb_module.modeling import (
    calibrate,
    count_extrapolated,
    estimate_C,
    fit_power_law,
    fit_rate_model,
    load_rate_model,
    predict_bitrate,
    predict_dataset_bitrate,
    measure_C,
    save_rate_model,
)
from adaptive_eb_module.models import RateModel
from adaptive_eb_module.processing import plan_fft

EB_GRID = np.array([4.0, 8.0, 16.0, 32.0])


def _table(C_m, c=-0.8, grid=EB_GRID):
    return np.outer(C_m, grid**c)


def test_fit_power_law_recovers_exact_curve():
    ebs = np.array([0.1, 0.3, 1.0, 3.0])
    c, C = fit_power_law(ebs, 2.0 * ebs**-0.7)
    assert c == pytest.approx(-0.7, abs=1e-10)
    assert C == pytest.approx(2.0, rel=1e-10)


def test_fit_rate_model_recovers_log_map():
    keys = np.array([1.0, 10.0, 100.0])
    C_m = 0.5 * np.log(keys) + 2.0
    model = fit_rate_model(EB_GRID, _table(C_m), keys)
    assert model.c == pytest.approx(-0.8, abs=1e-9)
    assert model.fit_alpha == pytest.approx(0.5, abs=1e-9)
    assert model.fit_beta == pytest.approx(2.0, abs=1e-9)
    assert model.C_floor == pytest.approx(C_m.min() / 4.0)
    assert model.calibration_report["excluded"] == []
    assert model.calibration_report["max_rel_residual"] < 1e-9


def test_points_above_the_bitrate_cap_are_left_out():
    keys = np.array([1.0, 10.0, 100.0])
    C_m = 0.5 * np.log(keys) + 2.0
    grid = np.array([0.25, 4.0, 8.0, 16.0, 32.0])
    table = _table(C_m, grid=grid)
    assert np.all(table[:, 0] > 2.0)
    model = fit_rate_model(grid, table, keys)
    assert model.c == pytest.approx(-0.8, abs=1e-9)


def test_partitions_with_too_few_points_are_excluded():
    keys = np.array([1.0, 10.0, 100.0])
    table = _table(0.5 * np.log(keys) + 2.0)
    table[1, :2] = 5.0
    model = fit_rate_model(EB_GRID, table, keys, partition_ids=[0, 4, 8])
    assert model.calibration_report["excluded"] == [4]
    assert model.calibration_report["partition_ids"] == [0, 8]


def test_all_partitions_excluded_is_a_calibration_error():
    with pytest.raises(CalibrationError):
        fit_rate_model(EB_GRID, np.full((2, 4), 3.0), [1.0, 2.0])


def test_non_negative_exponent_is_a_calibration_error():
    table = np.outer([0.1, 0.2], EB_GRID**0.3)
    with pytest.raises(CalibrationError):
        fit_rate_model(EB_GRID, table, [1.0, 2.0])


def test_single_partition_gives_constant_map():
    model = fit_rate_model(EB_GRID, _table([1.5]), [3.0])
    assert model.fit_alpha == 0.0
    assert model.fit_beta == pytest.approx(1.5)
    assert estimate_C(1e6, model) == pytest.approx(1.5)


def test_table_shape_must_match():
    with pytest.raises(ValueError):
        fit_rate_model(EB_GRID, np.ones((2, 3)), [1.0, 2.0])


def test_estimate_C_floors_and_vectorises(rate_model):
    assert estimate_C(1.0, rate_model) == pytest.approx(2.0)
    assert estimate_C(0.0, rate_model) == rate_model.C_floor
    C = estimate_C(np.array([1.0, np.e]), rate_model)
    np.testing.assert_allclose(C, [2.0, 2.5])
    with pytest.raises(ValueError):
        estimate_C(-1.0, rate_model)


def test_estimate_C_rejects_missing_entropy(make_features, rate_model):
    with pytest.raises(ValueError, match="finite"):
        estimate_C(np.array([1.0, np.nan]), rate_model)
    entropy_model = RateModel(c=-0.8, fit_alpha=0.5, fit_beta=2.0, C_floor=0.05, key_feature="entropy")
    features = make_features([1.0, 2.0])
    with pytest.raises(ValueError, match="finite"):
        plan_fft(features, entropy_model, eb_avg=1.0)


def test_predict_bitrate(rate_model):
    assert predict_bitrate(2.0, 1.0, rate_model) == pytest.approx(2.0)
    np.testing.assert_allclose(
        predict_bitrate([1.0, 2.0], [2.0, 4.0], rate_model), [2.0**-0.8, 2.0 * 4.0**-0.8]
    )
    with pytest.raises(ValueError):
        predict_bitrate(1.0, 0.0, rate_model)
    with pytest.raises(ValueError):
        predict_bitrate(-1.0, 1.0, rate_model)


def test_dataset_bitrate_is_cell_weighted(rate_model):
    B = predict_dataset_bitrate([1.0, 3.0], [1.0, 1.0], [100, 300], rate_model)
    assert B == pytest.approx(2.5)
    assert count_extrapolated([1.0, 2.5, 3.0], rate_model) == 2


def test_rate_model_json_round_trip(tmp_path):
    keys = np.array([1.0, 10.0, 100.0])
    model = fit_rate_model(EB_GRID, _table(0.5 * np.log(keys) + 2.0), keys, key_feature="mean")
    path = tmp_path / "rate_model.json"
    save_rate_model(model, path)
    loaded = load_rate_model(path)
    assert loaded.c == model.c
    assert loaded.fit_alpha == model.fit_alpha
    assert loaded.fit_beta == model.fit_beta
    assert loaded.C_floor == model.C_floor
    assert loaded.calibration_report["excluded"] == []


def test_load_rate_model_rejects_incomplete_documents(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"c": -0.8}')
    with pytest.raises(ValueError):
        load_rate_model(path)
    path.write_text("not json")
    with pytest.raises(ValueError):
        load_rate_model(path)


def test_calibrate_on_a_smooth_field(smooth_32, smooth_32_pset):
    model = calibrate(smooth_32_pset, smooth_32, [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0], sample_stride=1)
    assert model.c < 0
    assert len(model.calibration_report["slopes"]) + len(model.calibration_report["excluded"]) == 8
    assert model.calibration_report["role"] == "generic"


def test_calibrate_validates_its_arguments(smooth_32, smooth_32_pset):
    with pytest.raises(ValueError):
        calibrate(smooth_32_pset, smooth_32, [0.1, 1.0])
    with pytest.raises(ValueError):
        calibrate(smooth_32_pset, smooth_32, [0.0, 0.1, 1.0])
    with pytest.raises(ValueError):
        calibrate(smooth_32_pset, smooth_32, [0.1, 0.5, 1.0], sample_stride=0)


def test_measure_mode_covers_every_partition(smooth_32, smooth_32_pset):
    model = RateModel(c=-0.5, fit_alpha=0.0, fit_beta=1.0)
    C = measure_C(smooth_32_pset, smooth_32, model, eb_ref=0.25)
    assert C.shape == (smooth_32_pset.M,)
    assert np.all(C > 0)
