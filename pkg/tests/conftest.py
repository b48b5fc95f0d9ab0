import numpy as np
import pytest

import quenchflow as qf


@pytest.fixture(scope="session")
def tasep_spec():
    """Homogeneous totally asymmetric exclusion, rate 1."""
    return qf.ModelSpec(
        family="misanthrope", K=1, c=1.0,
        rate=qf.RateFunction.exclusion(1),
        kernel=qf.JumpKernel([1], [1.0]),
        law=qf.IidLaw("point", value=1.0),
    )


@pytest.fixture(scope="session")
def disordered_spec():
    """Site-disordered exclusion, alpha iid uniform on [0.5, 2]."""
    return qf.ModelSpec(
        family="misanthrope", K=1, c=0.5,
        rate=qf.RateFunction.exclusion(1),
        kernel=qf.JumpKernel([1], [1.0]),
        law=qf.IidLaw("uniform", low=0.5, high=2.0),
    )


@pytest.fixture(scope="session")
def misanthrope_k2_spec():
    """K=2 misanthrope with a spread-out kernel; exercises general tables."""
    return qf.ModelSpec(
        family="misanthrope", K=2, c=0.5,
        rate=qf.RateFunction.product(2),
        kernel=qf.JumpKernel([-1, 1, 2], [0.3, 0.6, 0.1]),
        law=qf.IidLaw("uniform", low=0.5, high=2.0),
    )


@pytest.fixture(scope="session")
def generalized_spec():
    return qf.ModelSpec(
        family="generalized", K=1, c=0.5,
        rate=qf.RateFunction.exclusion(1),
        kernel=qf.JumpKernel([-1, 1], [0.5, 0.5]),
        law=qf.IidLaw("uniform", low=0.5, high=2.0),
        style="bond",
    )


@pytest.fixture(scope="session")
def kstep_spec():
    """3-step exclusion with per-site nearest-neighbour walk bias."""
    return qf.ModelSpec(
        family="kstep", K=1, c=0.3, k=3, style="site_walk",
        law=qf.IidLaw("uniform", low=0.3, high=0.7),
    )


@pytest.fixture(scope="session")
def traffic_spec():
    return qf.ModelSpec(
        family="traffic", K=1, c=0.3, k=2,
        law=qf.IidLaw("uniform", low=0.5, high=2.0),
        extra={"beta_law": {"kind": "iid_uniform", "low": 0.4, "high": 1.0}},
    )


@pytest.fixture(scope="session")
def lwr_table():
    """Analytic flux u(1-u) tabulated on a fine grid."""
    return qf.FluxTable.from_function(lambda u: u * (1 - u), np.linspace(0, 1, 101))
