import sys
from pathlib import Path

ROOT_DIR = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT_DIR))

import pytest  # noqa: E402

from src.problem.builder import spec_from_expressions  # noqa: E402
from src.problem.spec import StructuralConstants  # noqa: E402


@pytest.fixture
def constants():
    return StructuralConstants(lam=1.0, Lam=2.0, kappa=0.0, beta=0.0, rho=2.0, L=1.0)


@pytest.fixture
def make_spec(constants):
    def build(domain=((0.0, 1.0),), noise_dim=1, horizon=0.5, **coefficients):
        return spec_from_expressions(
            spatial_dim=len(domain),
            noise_dim=noise_dim,
            horizon=horizon,
            domain=[list(axis) for axis in domain],
            constants=coefficients.pop("constants", constants),
            **coefficients,
        )

    return build


@pytest.fixture
def obstacle_spec(make_spec):
    return make_spec(
        domain=((-1.0, 1.0),),
        G="pos(0.3 * cos(pi * x / 2) - 0.1)",
        xi="0.3 * cos(pi * x / 2) - 0.1",
        name="smooth-obstacle",
    )
