import math

import numpy as np
import pytest

from alphadrs import (
    OptimizerConfig,
    STUDENT_T,
    VariationalDist,
    fit,
    four_mode_gmm_spec,
    make_gmm_target,
)


@pytest.fixture(scope="session")
def gmm_target():
    return make_gmm_target(four_mode_gmm_spec())


@pytest.fixture(scope="session")
def fitted_gmm_q(gmm_target):
    """Stage-1 t(10) fits of the benchmark mixture, cached per alpha."""
    cache = {}

    def get(alpha):
        if alpha not in cache:
            init = VariationalDist(
                mu=[0.0], log_var=[math.log(25.0)], family=STUDENT_T, nu=10.0
            )
            config = OptimizerConfig(alpha=alpha, seed=1)
            cache[alpha] = fit(gmm_target, init, config).final
        return cache[alpha]

    return get


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
