# Import path configurations
from adaptive_eb_module.config import (
    DATA_DIR,
    EXTERNAL_DATA_DIR,
    INTERIM_DATA_DIR,
    MODELS_DIR,
    PROCESSED_DATA_DIR,
    PROJ_ROOT,
    RAW_DATA_DIR,
    REPORTS_DIR,
    load_config,
)

# Import archive functions
from adaptive_eb_module.archive import cmd_compress, cmd_decompress, read_archive, write_archive

# Import field store functions
from adaptive_eb_module.dataset import (
    SynthesisSpec,
    generate_synthetic,
    load_field,
    partition_field,
    save_field,
)

# Import exceptions
from adaptive_eb_module.errors import (
    AdaptiveEBError,
    CalibrationError,
    DecodeError,
    ErrorBoundViolation,
    FieldFormatError,
    FieldLengthError,
    InfeasiblePlanError,
    NonFiniteValueError,
    StageFailure,
)

# Import feature functions
from adaptive_eb_module.features import extract_features, global_mean

# Import halo functions
from adaptive_eb_module.halos import compare_catalogs, find_halos, predict_fault

# Import data models
from adaptive_eb_module.models import (
    ArchiveFile,
    CompressedBlock,
    CompressionPlan,
    Field3D,
    HaloCatalog,
    PartitionFeatures,
    PartitionSet,
    PipelineConfig,
    RateModel,
)

# Import pipeline functions
from adaptive_eb_module.pipeline import cmd_overhead, cmd_pipeline

# Import processing functions
from adaptive_eb_module.processing import plan_combined, plan_fft, plan_halo, plan_uniform

# Import spectrum functions
from adaptive_eb_module.spectrum import fft3, power_spectrum, predict_fft_sigma, verify_spectrum

# Public API
__all__ = [
    # Path configurations
    "DATA_DIR",
    "EXTERNAL_DATA_DIR",
    "INTERIM_DATA_DIR",
    "MODELS_DIR",
    "PROCESSED_DATA_DIR",
    "PROJ_ROOT",
    "RAW_DATA_DIR",
    "REPORTS_DIR",
    "load_config",
    # Field store
    "SynthesisSpec",
    "generate_synthetic",
    "load_field",
    "partition_field",
    "save_field",
    # Features
    "extract_features",
    "global_mean",
    # Planning
    "plan_combined",
    "plan_fft",
    "plan_halo",
    "plan_uniform",
    # Spectrum
    "fft3",
    "power_spectrum",
    "predict_fft_sigma",
    "verify_spectrum",
    # Halos
    "compare_catalogs",
    "find_halos",
    "predict_fault",
    # Archive and pipeline
    "cmd_compress",
    "cmd_decompress",
    "cmd_overhead",
    "cmd_pipeline",
    "read_archive",
    "write_archive",
    # Exceptions
    "AdaptiveEBError",
    "CalibrationError",
    "DecodeError",
    "ErrorBoundViolation",
    "FieldFormatError",
    "FieldLengthError",
    "InfeasiblePlanError",
    "NonFiniteValueError",
    "StageFailure",
    # Data models
    "ArchiveFile",
    "CompressedBlock",
    "CompressionPlan",
    "Field3D",
    "HaloCatalog",
    "PartitionFeatures",
    "PartitionSet",
    "PipelineConfig",
    "RateModel",
]
