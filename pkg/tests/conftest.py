from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from unlearn_forge.data import SplitSpec, make_synthetic_benchmark, split_for_unlearning
from unlearn_forge.nn import MlpArchitecture, SgdConfig, fit, init_params

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_problem():
    """Trained 4-class model with a sample-wise split; shared, never mutated."""
    train, test = make_synthetic_benchmark(4, 6, 40, 0.6, seed=5)
    split = split_for_unlearning(train, test, SplitSpec("sample_wise", unlearn_fraction=0.2, seed=5))
    arch = MlpArchitecture((6, 16, 16, 4), "relu", seed=5)
    params = fit(init_params(arch), arch, split.train_full.features, split.train_full.labels,
                 SgdConfig(0.05), 15, seed=5).params
    return arch, split, params


@pytest.fixture(scope="session")
def class_problem():
    """Trained model with class 1 forgotten and classes 4-7 held out as OOD."""
    train, test = make_synthetic_benchmark(8, 6, 40, 0.5, seed=9)
    spec = SplitSpec("class_wise", unlearn_classes=(1,), ood_classes=(4, 5, 6, 7), seed=9)
    split = split_for_unlearning(train, test, spec)
    arch = MlpArchitecture((6, 16, 16, 4), "relu", seed=9)
    params = fit(init_params(arch), arch, split.train_full.features, split.train_full.labels,
                 SgdConfig(0.05), 20, seed=9).params
    return arch, split, params
