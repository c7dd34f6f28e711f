import os

import hypothesis
import numpy as np
import pytest

from viscowave_lab.functionals import FunctionalRecord
from viscowave_lab.kernel import KernelSpec
from viscowave_lab.mesh import ProblemSpec, RadialMesh
from viscowave_lab.wellpot import OptimizerParams, well_depth

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("default", max_examples=30, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def spec():
    """n = 3, R = 1, p = 3, σ = 1, k ≡ 1."""
    return ProblemSpec(n=3, R=1.0, p=3.0, sigma=1.0)


@pytest.fixture(scope="session")
def mesh32(spec):
    return RadialMesh(spec, 32)


@pytest.fixture(scope="session")
def mesh64(spec):
    return RadialMesh(spec, 64)


@pytest.fixture(scope="session")
def mesh256(spec):
    return RadialMesh(spec, 256)


@pytest.fixture(scope="session")
def exp_kernel():
    return KernelSpec.exponential(0.5, 1.0)


@pytest.fixture(scope="session")
def poly_kernel():
    return KernelSpec.polynomial_shift(1.5, 4.0)


@pytest.fixture(scope="session")
def blowup_kernel():
    """Mass 0.2, ℓ = 0.8."""
    return KernelSpec.exponential(0.2, 1.0)


@pytest.fixture(scope="session")
def quick_params():
    return OptimizerParams(max_iter=3000, tol=1e-10, window=50, restarts=3, seed=0)


@pytest.fixture(scope="session")
def well64(mesh64, exp_kernel, quick_params):
    return well_depth(mesh64, exp_kernel, quick_params)


@pytest.fixture(scope="session")
def well32_blowup(mesh32, blowup_kernel, quick_params):
    return well_depth(mesh32, blowup_kernel, quick_params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def smooth_field():
    """Random smooth radial field vanishing at r = R: Σ c_k cos((k+½)πr/R)."""
    def build(mesh, rng, modes=4):
        coeffs = rng.normal(size=modes) / (1.0 + np.arange(modes)) ** 2
        s = mesh.nodes / mesh.R
        return sum(c * np.cos((k + 0.5) * np.pi * s) for k, c in enumerate(coeffs))
    return build


@pytest.fixture
def make_record():
    """FunctionalRecord with every column zero except the given ones."""
    def build(**values):
        base = {name: 0.0 for name in FunctionalRecord.__dataclass_fields__}
        base.update(values)
        return FunctionalRecord(**base)
    return build
