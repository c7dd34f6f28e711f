"""Tests for history quadrature, energy functionals and record-level checks."""
import numpy as np
import pytest

from viscowave_lab.exceptions import PreconditionError
from viscowave_lab.functionals import (EXTRA_COLUMNS, RECORD_COLUMNS, FunctionalRecord,
                                       FunctionalTracker, HistoryBuffer, J_and_I, M_functional,
                                       WaveState, dissipation_rate, energy, energy_balance,
                                       energy_balance_defect, f_circ_grad, f_prime_circ_grad,
                                       lambda_accumulator, levine_G, lyapunov_equivalence, lyapunov_L,
                                       memory_displacement, monotonicity_check, phi_psi,
                                       trapezoid_weights)
from viscowave_lab.kernel import KernelSpec, eval_f
from viscowave_lab.mesh import make_profile


def _linear_history(mesh, field, times):
    """History of u(t) = t·field."""
    history = HistoryBuffer(mesh, capacity=2)
    for t in times:
        history.append(float(t), t * field)
    return history


def test_trapezoid_weights_nonuniform():
    times = np.array([0.0, 0.1, 0.3, 0.7])
    tau = trapezoid_weights(times)
    assert tau.sum() == pytest.approx(0.7)
    assert tau[0] == pytest.approx(0.05)
    assert tau[-1] == pytest.approx(0.2)
    assert np.allclose(trapezoid_weights(np.array([1.0])), 0.0)


def test_history_grows_and_keeps_order(mesh32):
    history = HistoryBuffer(mesh32, capacity=2)
    for i in range(10):
        history.append(0.1 * i, np.full(mesh32.N, float(i)))
    assert len(history) == 10
    assert history.snapshots.shape == (10, mesh32.N)
    assert history.gradients.shape == (10, mesh32.N + 1)
    assert history.snapshots[7, 0] == 7.0
    assert history.index_of(history.times[4]) == 4


def test_history_rejects_bad_input(mesh32):
    history = HistoryBuffer(mesh32)
    history.append(0.0, mesh32.zeros())
    with pytest.raises(PreconditionError):
        history.append(0.0, mesh32.zeros())
    with pytest.raises(PreconditionError):
        history.append(1.0, np.zeros(5))
    with pytest.raises(PreconditionError):
        history.index_of(0.5)


def test_static_history_has_no_memory(mesh32, exp_kernel):
    field = make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    for t in np.linspace(0.0, 2.0, 21):
        history.append(float(t), field)
    t_last = history.times[-1]
    assert f_circ_grad(history, exp_kernel, t_last) == pytest.approx(0.0, abs=1e-14)
    assert lambda_accumulator(history, t_last) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(memory_displacement(history, exp_kernel, len(history) - 1), 0.0)


def test_lambda_accumulator_linear_motion(mesh32):
    """u = t·w: Λ(t) = ‖∇w‖²·t³/3 up to O(dt²)."""
    field = make_profile(mesh32, "cosine")
    times = np.linspace(0.0, 1.0, 401)
    history = _linear_history(mesh32, field, times)
    A = mesh32.grad_sq_norm(field)
    assert lambda_accumulator(history, 1.0) == pytest.approx(A / 3.0, rel=1e-4)


def test_memory_integrals_linear_motion(mesh32):
    """u = t·w, f = e^{-s}: (f∘∇u)(1) = A∫₀¹ e^{-s}s² ds = A(2 - 5/e)."""
    kernel = KernelSpec.exponential(1.0, 1.0)
    field = make_profile(mesh32, "cosine")
    history = _linear_history(mesh32, field, np.linspace(0.0, 1.0, 801))
    A = mesh32.grad_sq_norm(field)
    expected = A * (2.0 - 5.0 / np.e)
    assert f_circ_grad(history, kernel, 1.0) == pytest.approx(expected, rel=1e-4)
    assert f_prime_circ_grad(history, kernel, 1.0) == pytest.approx(-expected, rel=1e-4)


def test_memory_at_first_time_is_zero(mesh32, exp_kernel):
    history = HistoryBuffer(mesh32)
    history.append(0.0, make_profile(mesh32, "bump"))
    assert f_circ_grad(history, exp_kernel, 0.0) == 0.0
    assert f_prime_circ_grad(history, exp_kernel, 0.0) == 0.0
    assert lambda_accumulator(history, 0.0) == 0.0


def test_energy_at_rest(mesh32, exp_kernel):
    u0 = 2.0 * make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    history.append(0.0, u0)
    state = WaveState(0.0, u0, mesh32.zeros())
    parts = energy(state, history, exp_kernel)
    A = mesh32.grad_sq_norm(u0)
    B = mesh32.weighted_lp_norm(u0, 3.0)
    assert parts.kinetic == 0.0
    assert parts.memory == 0.0
    assert parts.kernel_mass == 0.0
    assert parts.E == pytest.approx(0.5 * A - B / 3.0)
    assert M_functional(state, history, exp_kernel) == pytest.approx(A)


def test_dissipation_rate_is_nonpositive(mesh32, exp_kernel, rng):
    field = make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    for t in np.linspace(0.0, 1.0, 11):
        history.append(float(t), (1.0 + 0.3 * np.sin(5 * t)) * field)
    state = WaveState(1.0, history.snapshots[-1], rng.normal(size=mesh32.N))
    rate = dissipation_rate(state, history, exp_kernel)
    assert rate < 0.0
    expected_damping = mesh32.hardy_norm_sq(state.u_t, 1.0)
    assert rate <= -expected_damping + 1e-12


def test_J_and_I_relation(mesh32, exp_kernel):
    """J = I/p + (½ - 1/p)ℓA."""
    field = 3.0 * make_profile(mesh32, "cosine")
    ell = exp_kernel.ell
    J, I = J_and_I(mesh32, field, ell)
    A = mesh32.grad_sq_norm(field)
    assert J == pytest.approx(I / 3.0 + (0.5 - 1.0 / 3.0) * ell * A)


def test_phi_psi(mesh32, exp_kernel):
    field = make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    history.append(0.0, field)
    velocity = 0.5 * field
    phi, psi = phi_psi(WaveState(0.0, field, velocity), history, exp_kernel)
    assert phi == pytest.approx(0.5 * mesh32.l2_norm_sq(field))
    assert psi == 0.0

    history.append(0.5, 2.0 * field)
    _, psi = phi_psi(WaveState(0.5, 2.0 * field, velocity), history, exp_kernel)
    weights = 0.25 * eval_f(exp_kernel, np.array([0.5, 0.0]))
    expected = -mesh32.inner(velocity, weights[0] * field)
    assert psi == pytest.approx(expected)


def test_record_row_schema(make_record):
    record = make_record(t=1.5, E=0.25, hardy_cross_int=-3.0)
    row = record.row()
    assert len(row) == len(RECORD_COLUMNS) + len(EXTRA_COLUMNS)
    names = RECORD_COLUMNS + EXTRA_COLUMNS
    assert row[names.index("E")] == 0.25
    assert FunctionalRecord.from_row(dict(zip(names, row))) == record


def test_lyapunov_L(make_record):
    record = make_record(E=2.0, phi=1.0, psi=-4.0)
    assert lyapunov_L(record, 0.0, 0.0) == 2.0
    assert lyapunov_L(record, 0.1, 0.1) == pytest.approx(2.0 + 0.1 - 0.4)
    with pytest.raises(PreconditionError):
        lyapunov_L(record, -0.1, 0.0)


def test_lyapunov_equivalence(make_record):
    records = [make_record(E=1.0, phi=1.0), make_record(E=2.0, phi=-2.0), make_record(E=-1.0)]
    c1, c2 = lyapunov_equivalence(records, eps1=0.1, eps2=0.0)
    assert c1 == pytest.approx(0.9)
    assert c2 == pytest.approx(1.1)
    assert np.isnan(lyapunov_equivalence([make_record(E=-1.0)])[0])


def test_energy_balance_exact_series(make_record):
    """E = 1 - t with dissipation -1 balances exactly."""
    t = np.linspace(0.0, 0.9, 10)
    records = [make_record(t=ti, E=1.0 - ti, dissipation_rate=-1.0, cum_damping=ti) for ti in t]
    report = energy_balance(records)
    assert report.max_defect == pytest.approx(0.0, abs=1e-14)
    assert report.monotone_ok
    assert report.damping_balance_ok
    assert report.negative_energy_count == 0
    defects, local = energy_balance_defect(records)
    assert len(defects) == 10 and len(local) == 9
    assert monotonicity_check(records)


def test_energy_balance_reports_defect(make_record):
    """Energy rising with zero dissipation rate shows up as a cumulative defect."""
    records = [make_record(t=0.0, E=1.0, dissipation_rate=0.0),
               make_record(t=1.0, E=1.0, dissipation_rate=0.0),
               make_record(t=2.0, E=2.0, dissipation_rate=0.0)]
    report = energy_balance(records)
    assert np.allclose(report.defects, [0.0, 0.0, 1.0])
    assert report.max_defect == pytest.approx(1.0)
    assert energy_balance([records[0]]).max_defect == 0.0


def test_levine_G_formula(make_record):
    records = [make_record(t=0.0, l2_norm=2.0, hardy_u_sq=3.0, phi=0.5),
               make_record(t=1.0, l2_norm=1.0, hardy_u_sq=7.0, hardy_u_int=4.0, hardy_cross_int=0.25, phi=1.0)]
    t, G, Gp = levine_G(records, eta=2.0, mu=0.5, T=3.0)
    assert G[0] == pytest.approx(4.0 + 0.0 + 3.0 * 3.0 + 2.0 * 0.25)
    assert G[1] == pytest.approx(1.0 + 4.0 + 2.0 * 3.0 + 2.0 * 2.25)
    assert Gp[1] == pytest.approx(2.0 + 0.5 + 2.0 * 2.0 * 1.5)
    with pytest.raises(PreconditionError):
        levine_G(records, eta=0.0, mu=0.0, T=3.0)
    with pytest.raises(PreconditionError):
        levine_G(records, eta=0.0, mu=1.0, T=0.5)


def test_tracker_zero_data(mesh32, exp_kernel):
    history = HistoryBuffer(mesh32)
    tracker = FunctionalTracker(history, exp_kernel, eta=1.0, mu=2.0, T=5.0)
    records = []
    for t in (0.0, 0.5, 1.0):
        history.append(t, mesh32.zeros())
        state = WaveState(t, mesh32.zeros(), mesh32.zeros())
        tracker.advance(state)
        records.append(tracker.record(state))
    last = records[-1]
    assert last.E == 0.0 and last.cum_damping == 0.0
    assert last.G == pytest.approx((1.0 + 2.0) ** 2)
    assert last.Gp == pytest.approx(2.0 * 3.0)
    assert last.kernel_mass == pytest.approx(0.5 * (1.0 - np.exp(-1.0)))


def test_tracker_matches_levine_G(mesh32, exp_kernel):
    """G/G' columns equal levine_G rebuilt from the stored accumulators."""
    field = make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    tracker = FunctionalTracker(history, exp_kernel, eta=0.3, mu=0.7, T=2.0)
    records = []
    for t in np.linspace(0.0, 1.0, 6):
        u = (1.0 + t) * field
        history.append(float(t), u)
        state = WaveState(float(t), u, field)
        tracker.advance(state)
        records.append(tracker.record(state))
    _, G, Gp = levine_G(records, 0.3, 0.7, 2.0)
    assert np.allclose(G, [r.G for r in records])
    assert np.allclose(Gp, [r.Gp for r in records])
    assert records[-1].cum_damping == pytest.approx(mesh32.hardy_norm_sq(field, 1.0))


def _random_history(mesh, rng, count=8):
    field = make_profile(mesh, "bump")
    history = HistoryBuffer(mesh)
    for t in np.linspace(0.0, 1.4, count):
        history.append(float(t), (1.0 + 0.5 * np.sin(3.0 * t)) * field + 0.1 * rng.normal(size=mesh.N))
    return history


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_M_exceeds_twice_energy_by_source(mesh32, exp_kernel, seed):
    """M = 2E + (2/p)∫k|u|^p, hence M ≥ 2E."""
    rng = np.random.default_rng(seed)
    history = _random_history(mesh32, rng)
    state = WaveState(float(history.times[-1]), history.snapshots[-1], rng.normal(size=mesh32.N))
    parts = energy(state, history, exp_kernel)
    source_int = mesh32.weighted_lp_norm(state.u, 3.0)
    M = M_functional(state, history, exp_kernel)
    assert M == pytest.approx(2.0 * parts.E + (2.0 / 3.0) * source_int, rel=1e-12)
    assert M >= 2.0 * parts.E


def test_energy_dominates_J_once_kernel_mass_saturates(mesh32):
    """E - J = kinetic + memory + ½(1 - ℓ - ∫₀^t f)‖∇u‖² ≥ 0."""
    kernel = KernelSpec.exponential(0.5, 5.0)
    field = 2.0 * make_profile(mesh32, "bump")
    history = HistoryBuffer(mesh32)
    tracker = FunctionalTracker(history, kernel)
    saturated = []
    for t in np.linspace(0.0, 4.0, 41):
        u = (1.0 + 0.3 * np.cos(2.0 * t)) * field
        history.append(float(t), u)
        state = WaveState(float(t), u, -0.6 * np.sin(2.0 * t) * field)
        tracker.advance(state)
        record = tracker.record(state)
        if record.kernel_mass >= 1.0 - kernel.ell - 1e-6:
            saturated.append(record)
    assert saturated
    for record in saturated:
        assert record.E >= record.J_of_u


def test_tracker_record_matches_public_functionals(mesh32, exp_kernel, rng):
    history = _random_history(mesh32, rng)
    tracker = FunctionalTracker(history, exp_kernel)
    velocity = rng.normal(size=mesh32.N)
    for t, u in zip(history.times, history.snapshots):
        tracker.advance(WaveState(float(t), u, velocity))
    state = WaveState(float(history.times[-1]), history.snapshots[-1], velocity)
    record = tracker.record(state)
    parts = energy(state, history, exp_kernel)
    phi, psi = phi_psi(state, history, exp_kernel)
    J, I = J_and_I(mesh32, state.u, exp_kernel.ell)
    assert record.E == parts.E
    assert record.dissipation_rate == dissipation_rate(state, history, exp_kernel)
    assert (record.phi, record.psi) == (phi, psi)
    assert (record.J_of_u, record.I_of_u) == (J, I)
    assert record.M == M_functional(state, history, exp_kernel)
