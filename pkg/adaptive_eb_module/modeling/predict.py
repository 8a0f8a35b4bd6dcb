from pathlib import Path
from typing import Sequence, Union

from loguru import logger
import numpy as np
import pandas as pd
import typer

from adaptive_eb_module.config import MODELS_DIR, PROCESSED_DATA_DIR
from adaptive_eb_module.models import RateModel

app = typer.Typer()

ArrayLike = Union[float, Sequence[float], np.ndarray]


def estimate_C(key: ArrayLike, model: RateModel):
    """
    C from the fitted logarithmic map, floored at the model's C_floor

    Accepts a scalar key (returns a float) or an array of keys (returns an array).
    """
    x = np.asarray(key, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("key feature values must be finite; was the entropy feature extracted?")
    if np.any(x < 0):
        raise ValueError("key feature values must be non-negative")
    C = np.maximum(model.fit_alpha * np.log(x + RateModel.EPS) + model.fit_beta, model.C_floor)
    return float(C) if C.ndim == 0 else C


def predict_bitrate(C: ArrayLike, eb: ArrayLike, model: RateModel):
    """b = C * eb**c, elementwise"""
    C = np.asarray(C, dtype=np.float64)
    eb = np.asarray(eb, dtype=np.float64)
    if np.any(eb <= 0) or np.any(C <= 0):
        raise ValueError("predict_bitrate needs C > 0 and eb > 0")
    b = C * eb**model.c
    return float(b) if b.ndim == 0 else b


def count_extrapolated(bitrates: ArrayLike, model: RateModel) -> int:
    """Number of predictions above the calibrated bitrate regime"""
    return int(np.count_nonzero(np.asarray(bitrates) > model.valid_bitrate_max))


def predict_dataset_bitrate(
    C: Sequence[float], ebs: Sequence[float], cell_counts: Sequence[int], model: RateModel
) -> float:
    """
    Cell-count-weighted mean of the per-partition predicted bitrates

    The predicted compression ratio of the plan is 32 / B.
    """
    b = np.atleast_1d(predict_bitrate(C, ebs, model))
    weights = np.asarray(cell_counts, dtype=np.float64)
    if len(weights) != len(b):
        raise ValueError(f"{len(b)} bitrates but {len(weights)} cell counts")
    n = count_extrapolated(b, model)
    if n:
        logger.warning(f"{n} partitions predicted above bitrate {model.valid_bitrate_max}")
    return float(np.dot(b, weights) / weights.sum())


@app.command()
def main(
    features_path: Path = PROCESSED_DATA_DIR / "features.csv",
    model_path: Path = MODELS_DIR / "rate_model.json",
    predictions_path: Path = PROCESSED_DATA_DIR / "rate_predictions.csv",
    eb: float = 1.0,
):
    """Predict C_m and the bitrate at a uniform error bound for every partition"""
    from adaptive_eb_module.modeling.train import load_rate_model

    logger.info("Performing inference for rate model...")
    model = load_rate_model(model_path)
    df = pd.read_csv(features_path, comment="#")
    C = np.atleast_1d(estimate_C(df[model.key_feature].to_numpy(), model))
    out = pd.DataFrame(
        {
            "partition_id": df["partition_id"],
            "C": C,
            "predicted_bitrate": np.atleast_1d(predict_bitrate(C, eb, model)),
        }
    )
    predictions_path.parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(predictions_path, index=False)
    B = predict_dataset_bitrate(C, np.full(len(C), eb), df["cell_count"], model)
    logger.success(f"Predicted dataset bitrate {B:.4f} at eb={eb}; saved to {predictions_path}")


if __name__ == "__main__":
    app()
