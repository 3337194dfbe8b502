import numpy as np
import pytest

from blendlab.concepts import ConceptSpec, DenoiserRegistry
from blendlab.config import default_registry, default_run_config


@pytest.fixture(scope="session")
def two_concepts():
    return default_registry()


@pytest.fixture
def small_config():
    return default_run_config(chains=64, seed=7)


def gaussian(label, mean, cov=None):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.eye(len(mean)) if cov is None else np.asarray(cov, dtype=float)
    return ConceptSpec.build(label, [1.0], [mean], [cov])


@pytest.fixture
def make_gaussian():
    return gaussian
