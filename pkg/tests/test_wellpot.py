"""Tests for Nehari scaling, well depth, embedding constants and W/V classification."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viscowave_lab.exceptions import DegenerateFieldError, InfeasibleError, PreconditionError
from viscowave_lab.functionals import J_and_I
from viscowave_lab.kernel import KernelSpec
from viscowave_lab.mesh import ProblemSpec, RadialMesh, make_profile
from viscowave_lab.wellpot import (OptimizerParams, SobolevAscent, WellSet, classify, dirichlet_eigenvalue,
                                   estimate_B_r, initial_energy, lambda_star, minimizer_profile,
                                   mountain_pass_value, scale_into, small_energy_threshold, well_depth)


def test_nehari_sign_pattern(mesh64, exp_kernel, smooth_field):
    """I(λw) > 0 below λ*, < 0 above, and vanishes at λ* on 20 random fields."""
    rng = np.random.default_rng(7)
    ell = exp_kernel.ell
    for _ in range(20):
        w = smooth_field(mesh64, rng, modes=5)
        lam = lambda_star(mesh64, w, ell)
        A = mesh64.grad_sq_norm(w)
        assert J_and_I(mesh64, 0.5 * lam * w, ell)[1] > 0
        assert J_and_I(mesh64, 2.0 * lam * w, ell)[1] < 0
        assert abs(J_and_I(mesh64, lam * w, ell)[1]) / (ell * A * lam ** 2) <= 1e-8


@given(c=st.floats(min_value=0.05, max_value=20.0))
def test_mountain_pass_scale_invariant(c):
    mesh = RadialMesh(ProblemSpec(), 24)
    w = make_profile(mesh, "cosine")
    assert mountain_pass_value(mesh, c * w, 0.5) == pytest.approx(mountain_pass_value(mesh, w, 0.5), rel=1e-10)


def test_mountain_pass_is_J_at_lambda_star(mesh64, exp_kernel):
    w = make_profile(mesh64, "bump")
    lam = lambda_star(mesh64, w, exp_kernel.ell)
    J, _ = J_and_I(mesh64, lam * w, exp_kernel.ell)
    assert mountain_pass_value(mesh64, w, exp_kernel.ell) == pytest.approx(J, rel=1e-10)


def test_degenerate_fields(mesh32):
    with pytest.raises(DegenerateFieldError):
        lambda_star(mesh32, mesh32.zeros(), 0.5)
    with pytest.raises(DegenerateFieldError):
        mountain_pass_value(mesh32, mesh32.zeros(), 0.5)


def test_dirichlet_eigenvalue_oracle(mesh256):
    """Radial Dirichlet eigenvalue of the unit ball in ℝ³ is π²."""
    assert dirichlet_eigenvalue(mesh256) == pytest.approx(math.pi ** 2, rel=1e-2)


def test_B2_matches_inverse_eigenvalue(mesh256):
    """B₂ = 1/λ₁ = 1/π² within 1%."""
    B2 = estimate_B_r(mesh256, 2.0, OptimizerParams(max_iter=4000, tol=1e-12))
    assert B2 == pytest.approx(1.0 / math.pi ** 2, rel=1e-2)
    assert B2 == pytest.approx(1.0 / dirichlet_eigenvalue(mesh256), rel=1e-6)


def test_estimate_B_r_range(mesh32):
    with pytest.raises(PreconditionError):
        estimate_B_r(mesh32, 1.5)
    with pytest.raises(PreconditionError):
        estimate_B_r(mesh32, 6.5)


def test_ascent_is_monotone(mesh32):
    ascent = SobolevAscent(mesh32, 3.0, params=OptimizerParams(max_iter=50, window=5, tol=0.0))
    start = make_profile(mesh32, "gaussian", 0.3)
    first = ascent.value(ascent._normalize(start))
    result = ascent.maximize(start)
    assert result.value >= first
    assert mesh32.grad_sq_norm(result.field) == pytest.approx(1.0, rel=1e-10)


def test_well_depth_report(well64, mesh64, exp_kernel):
    assert well64.d > 0
    assert well64.converged
    assert well64.restart_spread <= 0.005
    assert well64.N == mesh64.N
    assert well64.ell == pytest.approx(exp_kernel.ell)
    # With k ≡ 1 the depth follows from B_p in closed form
    p = 3.0
    closed_form = (0.5 - 1.0 / p) * (exp_kernel.ell ** (-p / 2.0) * well64.Bp) ** (-2.0 / (p - 2.0))
    assert well64.d == pytest.approx(closed_form, rel=1e-2)
    assert well64.B2 > 0 and well64.B2p2 > 0


def test_well_depth_is_mountain_pass_minimum(well64, mesh64, exp_kernel):
    """d equals the mountain-pass value of the minimizer and bounds that of other fields."""
    ell = exp_kernel.ell
    assert mountain_pass_value(mesh64, well64.minimizer_field, ell) == pytest.approx(well64.d, rel=1e-6)
    for name in ("bump", "cosine", "gaussian"):
        assert mountain_pass_value(mesh64, make_profile(mesh64, name), ell) >= well64.d * (1 - 1e-8)


def test_well_depth_scales_with_ell(mesh64, well64, quick_params):
    """d ∝ ℓ^{p/(p-2)}; for p = 3 that is ℓ³."""
    other = well_depth(mesh64, KernelSpec.exponential(0.2, 1.0), quick_params)
    assert other.d / well64.d == pytest.approx((0.8 / 0.5) ** 3, rel=1e-3)


def test_well_depth_rejects_bad_kernel(mesh32):
    with pytest.raises(PreconditionError):
        well_depth(mesh32, KernelSpec.exponential(2.0, 1.0))


def test_small_energy_threshold():
    value = small_energy_threshold(3.0, 0.5, 1.0, 0.1)
    assert value == pytest.approx((1.0 / 6.0) * 0.5 * (0.5 / 0.2) ** 2)


def test_minimizer_profile_unit_sup(well64):
    profile = minimizer_profile(well64)
    assert np.max(np.abs(profile)) == pytest.approx(1.0)


def test_classify_zero_and_large_data(mesh64, exp_kernel, well64):
    zero = mesh64.zeros()
    assert classify(mesh64, zero, zero, exp_kernel, well64).set is WellSet.NEITHER
    big_velocity = 100.0 * make_profile(mesh64, "bump")
    result = classify(mesh64, 0.1 * make_profile(mesh64, "bump"), big_velocity, exp_kernel, well64)
    assert result.set is WellSet.NEITHER
    assert result.E0 >= well64.d


def test_classify_requires_matching_mesh(mesh32, exp_kernel, well64):
    with pytest.raises(PreconditionError):
        classify(mesh32, mesh32.zeros(), mesh32.zeros(), exp_kernel, well64)


def test_initial_energy(mesh32):
    u0 = make_profile(mesh32, "bump")
    v0 = 0.5 * u0
    expected = 0.5 * mesh32.l2_norm_sq(v0) + 0.5 * mesh32.grad_sq_norm(u0) - mesh32.weighted_lp_norm(u0, 3.0) / 3.0
    assert initial_energy(mesh32, u0, v0) == pytest.approx(expected)
    assert initial_energy(mesh32, u0) == pytest.approx(expected - 0.5 * mesh32.l2_norm_sq(v0))


def test_scale_into_W(mesh64, exp_kernel, well64):
    profile = make_profile(mesh64, "bump")
    amplitude, result = scale_into(WellSet.W, profile, mesh64, exp_kernel, well64, margin=0.5)
    assert result.set is WellSet.W
    assert result.I0 > 0
    assert result.E0 <= 0.5 * min(well64.d, well64.small_energy_threshold) * (1 + 1e-12)
    assert result.small_energy_ok
    assert amplitude <= 0.5 * lambda_star(mesh64, profile, exp_kernel.ell)


def test_scale_into_V(mesh64, exp_kernel, well64):
    profile = minimizer_profile(well64)
    v0 = 0.1 * profile
    amplitude, result = scale_into(WellSet.V, profile, mesh64, exp_kernel, well64, margin=0.5, v0=v0)
    assert result.set is WellSet.V
    assert result.I0 < 0
    assert result.E0 <= 0.5 * well64.d * (1 + 1e-12)
    assert amplitude >= 1.5 * lambda_star(mesh64, profile, exp_kernel.ell)
    assert 0.0 < result.theta < 1.0


def test_scale_into_errors(mesh64, exp_kernel, well64):
    profile = make_profile(mesh64, "bump")
    with pytest.raises(PreconditionError):
        scale_into(WellSet.W, profile, mesh64, exp_kernel, well64, margin=1.5)
    with pytest.raises(PreconditionError):
        scale_into(WellSet.NEITHER, profile, mesh64, exp_kernel, well64)
    with pytest.raises(DegenerateFieldError):
        scale_into(WellSet.W, mesh64.zeros(), mesh64, exp_kernel, well64)
    with pytest.raises(InfeasibleError):
        scale_into(WellSet.W, profile, mesh64, exp_kernel, well64, v0=50.0 * profile)


def test_optimizer_params_from_config():
    params = OptimizerParams.from_config({'max_iter': 10, 'restarts': 2}, seed=9)
    assert params.max_iter == 10 and params.restarts == 2 and params.seed == 9
    assert params.tol == OptimizerParams.tol
    assert OptimizerParams.from_config(None).window == 50


def test_B2_scales_with_radius():
    """B₂(R) = R²·B₂(1)."""
    params = OptimizerParams(max_iter=2000, tol=1e-12)
    unit = estimate_B_r(RadialMesh(ProblemSpec(R=1.0), 64), 2.0, params)
    double = estimate_B_r(RadialMesh(ProblemSpec(R=2.0), 64), 2.0, params)
    assert double == pytest.approx(4.0 * unit, rel=1e-6)
