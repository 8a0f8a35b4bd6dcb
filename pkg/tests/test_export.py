import numpy as np
import pandas as pd
import pytest

from adaptive_eb_module.export import (
    read_features_csv,
    read_plan_csv,
    read_summary,
    write_catalog_csv,
    write_comparison_csv,
    write_effective_cells_csv,
    write_features_csv,
    write_plan_csv,
    write_table_csv,
)
from adaptive_eb_module.models import CatalogComparison, HaloCatalog
from adaptive_eb_module.processing import plan_fft


def test_features_round_trip(tmp_path, make_features):
    features = make_features([0.25, 1.5, 30.0], n_refs=[0.0, 12.0, 3.0])
    path = tmp_path / "features.csv"
    write_features_csv(features, path)
    loaded = read_features_csv(path)
    assert [f.partition_id for f in loaded] == [0, 1, 2]
    assert [f.mean for f in loaded] == [0.25, 1.5, 30.0]
    assert [f.n_ref for f in loaded] == [0.0, 12.0, 3.0]
    assert all(np.isnan(f.entropy) for f in loaded)


def test_plan_round_trip_keeps_bounds_exact(tmp_path, make_features, rate_model):
    plan = plan_fft(make_features([0.3, 1.0, 7.0, 2.0]), rate_model, eb_avg=0.1)
    path = tmp_path / "plan.csv"
    write_plan_csv(plan, path, extra={"rate_model": "models/rate_model.json"})
    loaded = read_plan_csv(path)
    np.testing.assert_array_equal(loaded.ebs, plan.ebs)
    assert loaded.strategy == "fft"
    assert loaded.eb_avg == 0.1
    assert loaded.clamp_events == plan.clamp_events
    assert loaded.predicted_bitrate == pytest.approx(plan.predicted_bitrate)
    assert read_summary(path)["rate_model"] == "models/rate_model.json"


def test_plan_without_bounds_is_rejected(tmp_path):
    path = tmp_path / "plan.csv"
    pd.DataFrame({"partition_id": [0, 1]}).to_csv(path, index=False)
    with pytest.raises(ValueError):
        read_plan_csv(path)


def test_empty_catalog_keeps_its_header(tmp_path):
    path = tmp_path / "catalog.csv"
    write_catalog_csv(HaloCatalog([], 88.16, 176.32), path)
    df = pd.read_csv(path, comment="#")
    assert list(df.columns) == ["id", "cell_count", "mass", "cx", "cy", "cz", "peak"]
    assert len(df) == 0
    assert read_summary(path)["halos"] == "0"


def test_comparison_summary(tmp_path):
    nan = float("nan")
    comparison = CatalogComparison(
        matched=[],
        unmatched_orig=[0, 1],
        unmatched_recon=[],
        mean_displacement=nan,
        max_displacement=nan,
        mass_ratio_rmse=nan,
        min_cells=10,
    )
    path = tmp_path / "halo_comparison.csv"
    write_comparison_csv(comparison, path)
    summary = read_summary(path)
    assert summary["count_change"] == "-2"
    assert summary["unmatched_orig"] == "2"


def test_effective_cells_histogram(tmp_path, make_features):
    features = make_features([1.0] * 5, n_refs=[0.0, 0.0, 1.0, 10.0, 100.0])
    df = write_effective_cells_csv(features, tmp_path / "effective_cells.csv", bins_per_decade=1)
    assert df["partitions"].tolist() == [2, 1, 1, 1]
    assert df["n_ref_low"].tolist() == [0.0, 1.0, 10.0, 100.0]
    assert df["partitions"].sum() == len(features)


def test_table_csv_with_summary(tmp_path):
    path = tmp_path / "ratio_comparison.csv"
    write_table_csv(
        [{"plan": "uniform", "ratio": 10.0}, {"plan": "adaptive", "ratio": 12.5}],
        path,
        summary={"improvement": 0.25},
    )
    assert read_summary(path) == {"improvement": "0.25"}
    df = pd.read_csv(path, comment="#")
    assert df["plan"].tolist() == ["uniform", "adaptive"]
