from adaptive_eb_module.modeling.predict import (
    count_extrapolated,
    estimate_C,
    predict_bitrate,
    predict_dataset_bitrate,
)
from adaptive_eb_module.modeling.train import (
    calibrate,
    fit_power_law,
    fit_rate_model,
    load_rate_model,
    measure_C,
    save_rate_model,
)

__all__ = [
    "calibrate",
    "count_extrapolated",
    "estimate_C",
    "fit_power_law",
    "fit_rate_model",
    "load_rate_model",
    "predict_bitrate",
    "predict_dataset_bitrate",
    "measure_C",
    "save_rate_model",
]
