import os

import numpy as np
import pytest

from sinkscale.core import (
    SparseNonnegMatrix,
    uniform_targets,
    validate_instance,
)
from sinkscale.oracles import GeneratorConfig, gen_scalable_instance
from sinkscale.tests import RESOURCES_DIR
from sinkscale.util.rng import make_rng


@pytest.fixture
def resource():
    """Path of a file under tests/resources."""

    def _path(name):
        return os.path.join(RESOURCES_DIR, name)

    return _path


@pytest.fixture
def rng():
    return make_rng(20240531)


@pytest.fixture
def rothblum_matrix():
    return SparseNonnegMatrix.from_dense([[1.0, 1.0], [1.0, 2.0]])


@pytest.fixture
def rothblum_instance(rothblum_matrix):
    return validate_instance(rothblum_matrix, uniform_targets(2, 2))


@pytest.fixture
def doubly_stochastic_instance():
    A = SparseNonnegMatrix.from_dense(np.full((2, 2), 0.5))
    return validate_instance(A, uniform_targets(2, 2))


@pytest.fixture
def generated():
    """A 12x12 instance with a known doubly stochastic scaling."""
    return gen_scalable_instance(
        GeneratorConfig(n=12, m=12, density=0.3, seed=7)
    )


@pytest.fixture
def generated_random_targets():
    return gen_scalable_instance(
        GeneratorConfig(n=9, m=14, density=0.4, seed=3, targets="random")
    )
