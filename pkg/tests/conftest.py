import numpy as np
import pytest

from adaptive_eb_module.dataset import SynthesisSpec, generate_synthetic, partition_field
from adaptive_eb_module.models import PartitionFeatures, RateModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def density_32():
    """Heterogeneous log-normal density on a 32^3 grid"""
    return generate_synthetic(SynthesisSpec.heterogeneous("baryon_density", (32, 32, 32)), seed=7)


@pytest.fixture(scope="session")
def smooth_32():
    return generate_synthetic(SynthesisSpec.smooth("generic", (32, 32, 32)), seed=3)


@pytest.fixture(scope="session")
def smooth_32_pset(smooth_32):
    return partition_field(smooth_32, (16, 16, 16))


@pytest.fixture
def rate_model():
    """Synthetic rate model: C(x) = 0.5 * ln(x) + 2, b = C * eb**-0.8"""
    return RateModel(c=-0.8, fit_alpha=0.5, fit_beta=2.0, valid_bitrate_max=2.0, C_floor=0.05)


@pytest.fixture
def make_features():
    """Factory for feature lists with equal cell counts"""

    def factory(means, n_refs=None, cell_count=4096):
        n_refs = [0.0] * len(means) if n_refs is None else n_refs
        return [
            PartitionFeatures(partition_id=i, mean=float(m), cell_count=cell_count, n_ref=float(n))
            for i, (m, n) in enumerate(zip(means, n_refs))
        ]

    return factory
