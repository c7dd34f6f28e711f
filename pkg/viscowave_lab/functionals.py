"""
Functionals Module

Energy and auxiliary functionals along a discrete trajectory: the energy E
and its dissipation rate, the memory discrepancy f∘∇u, J and I, φ, ψ, the
Lyapunov combination L, M, the convexity functional G and its derivative,
Λ, and the cumulative damping integral.

All memory integrals use trapezoidal product quadrature over the recorded
history, on uniform or non-uniform time grids.
"""

import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import PreconditionError
from .kernel import KernelSpec, cumulative_mass, eval_df, eval_f
from .mesh import RadialField, RadialMesh

logger = logging.getLogger(__name__)

# CSV time-series schema, one row per record
RECORD_COLUMNS = (
    "t", "E", "kinetic", "elastic", "memory", "source", "dissipation_rate",
    "cum_damping", "phi", "psi", "M", "G", "Gp", "Lambda",
    "l2_norm", "grad_norm", "linf_norm",
)
# Extra columns needed to rebuild reports from a run directory
EXTRA_COLUMNS = (
    "I_of_u", "J_of_u", "kernel_mass", "hardy_u_sq", "hardy_u_int", "hardy_cross_int",
)


@dataclass(frozen=True)
class WaveState:
    """Solution snapshot: time, displacement and centered velocity."""

    t: float
    u: RadialField
    u_t: RadialField


class HistoryBuffer:
    """
    Growable store of every accepted snapshot U^j with its face gradients.

    Times are strictly increasing; snapshot count equals time count.
    """

    def __init__(self, mesh: RadialMesh, capacity: int = 256):
        self.mesh = mesh
        self._capacity = max(int(capacity), 2)
        self._times = np.empty(self._capacity)
        self._u = np.empty((self._capacity, mesh.N))
        self._grad = np.empty((self._capacity, mesh.N + 1))
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def times(self) -> np.ndarray:
        return self._times[:self._size]

    @property
    def snapshots(self) -> np.ndarray:
        return self._u[:self._size]

    @property
    def gradients(self) -> np.ndarray:
        return self._grad[:self._size]

    def _grow(self):
        self._capacity *= 2
        for name in ('_times', '_u', '_grad'):
            old = getattr(self, name)
            new = np.empty((self._capacity,) + old.shape[1:])
            new[:self._size] = old[:self._size]
            setattr(self, name, new)

    def append(self, t: float, u: RadialField):
        """Store snapshot U at time t (must exceed the last stored time)."""
        self.mesh.check(u)
        if self._size and not t > self._times[self._size - 1]:
            raise PreconditionError(f"History times must increase strictly: {t} after {self._times[self._size - 1]}")
        if self._size == self._capacity:
            self._grow()
        self._times[self._size] = t
        self._u[self._size] = u
        self._grad[self._size] = self.mesh.face_gradients(u)
        self._size += 1

    def index_of(self, t: float) -> int:
        """Index of a recorded time; raises if t was never recorded."""
        times = self.times
        idx = int(np.searchsorted(times, t))
        if idx >= len(times) or times[idx] != t:
            raise PreconditionError(f"Time {t} is not recorded in the history")
        return idx

    def trapezoid_weights(self, idx: int) -> np.ndarray:
        """Trapezoid weights τ_0..τ_idx over times t_0..t_idx."""
        return trapezoid_weights(self._times[:idx + 1])


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights on a (possibly non-uniform) grid."""
    tau = np.zeros(len(times))
    if len(times) < 2:
        return tau
    dt = np.diff(times)
    tau[:-1] += 0.5 * dt
    tau[1:] += 0.5 * dt
    return tau


# ========== Memory terms ==========

@dataclass(frozen=True)
class MemoryTerms:
    """History integrals at one recorded time."""

    f_circ: float
    f_prime_circ: float
    Lambda: float


def _memory_terms(history: HistoryBuffer, kernel: KernelSpec, idx: int) -> MemoryTerms:
    if idx == 0:
        return MemoryTerms(0.0, 0.0, 0.0)
    times = history.times[:idx + 1]
    tau = history.trapezoid_weights(idx)
    grads = history.gradients[:idx + 1]
    diff = grads[idx] - grads
    dist = (diff * diff) @ history.mesh.face_weights
    lag = times[idx] - times
    f_circ = float(np.dot(tau * eval_f(kernel, lag), dist))
    f_prime_circ = float(np.dot(tau * eval_df(kernel, lag), dist))
    Lambda = float(np.dot(tau, dist))
    return MemoryTerms(f_circ, f_prime_circ, Lambda)


def memory_weights(history: HistoryBuffer, kernel: KernelSpec, idx: int) -> np.ndarray:
    """Product-trapezoid weights τ_j·f(t_idx - t_j), j = 0..idx."""
    lag = history.times[idx] - history.times[:idx + 1]
    return history.trapezoid_weights(idx) * eval_f(kernel, lag)


def memory_displacement(history: HistoryBuffer, kernel: KernelSpec, idx: int) -> RadialField:
    """Field ∫₀^t f(t-s)(u(t) - u(s)) ds at t = t_idx."""
    weights = memory_weights(history, kernel, idx)
    snaps = history.snapshots[:idx + 1]
    return weights.sum() * snaps[idx] - weights @ snaps


def f_circ_grad(history: HistoryBuffer, kernel: KernelSpec, t_n: float) -> float:
    """(f∘∇u)(t_n) = ∫₀^t f(t-s)‖∇u(t) - ∇u(s)‖₂² ds by trapezoid over the history."""
    return _memory_terms(history, kernel, history.index_of(t_n)).f_circ


def f_prime_circ_grad(history: HistoryBuffer, kernel: KernelSpec, t_n: float) -> float:
    """(f'∘∇u)(t_n) with the analytic f'."""
    return _memory_terms(history, kernel, history.index_of(t_n)).f_prime_circ


def lambda_accumulator(history: HistoryBuffer, t_n: float) -> float:
    """Λ(t_n) = ∫₀^t ‖∇u(t) - ∇u(s)‖₂² ds."""
    idx = history.index_of(t_n)
    if idx == 0:
        return 0.0
    grads = history.gradients[:idx + 1]
    diff = grads[idx] - grads
    dist = (diff * diff) @ history.mesh.face_weights
    return float(np.dot(history.trapezoid_weights(idx), dist))


# ========== Energy ==========

@dataclass(frozen=True)
class EnergyParts:
    """Energy and its four components; E = kinetic + elastic + memory - source."""

    E: float
    kinetic: float
    elastic: float
    memory: float
    source: float
    grad_sq: float
    kernel_mass: float


def energy(state: WaveState, history: HistoryBuffer, kernel: KernelSpec,
           terms: Optional[MemoryTerms] = None) -> EnergyParts:
    """
    E(t) = ½‖u_t‖² + ½(1 - ∫₀^t f)‖∇u‖² + ½(f∘∇u) - (1/p)∫k|u|^p.

    Args:
        state: Snapshot whose time is recorded in the history
        history: Snapshot history
        kernel: Relaxation kernel
        terms: History integrals at state.t (computed when omitted)

    Returns:
        EnergyParts
    """
    mesh = history.mesh
    p = mesh.spec.p
    mass = cumulative_mass(kernel, state.t)
    grad_sq = float(mesh.grad_sq_norm(state.u))
    kinetic = 0.5 * mesh.l2_norm_sq(state.u_t)
    elastic = 0.5 * (1.0 - mass) * grad_sq
    if terms is None:
        terms = _memory_terms(history, kernel, history.index_of(state.t))
    memory = 0.5 * terms.f_circ
    source = mesh.weighted_lp_norm(state.u, p) / p
    return EnergyParts(
        E=kinetic + elastic + memory - source,
        kinetic=kinetic, elastic=elastic, memory=memory, source=source,
        grad_sq=grad_sq, kernel_mass=mass,
    )


def dissipation_rate(state: WaveState, history: HistoryBuffer, kernel: KernelSpec,
                     terms: Optional[MemoryTerms] = None) -> float:
    """dE/dt = ½(f'∘∇u) - (f(t)/2)‖∇u‖² - ‖u_t/|·|^{σ/2}‖²; ≤ 0 for admissible kernels."""
    mesh = history.mesh
    if terms is None:
        terms = _memory_terms(history, kernel, history.index_of(state.t))
    f_prime_circ = terms.f_prime_circ
    grad_sq = float(mesh.grad_sq_norm(state.u))
    damping = mesh.hardy_norm_sq(state.u_t, mesh.spec.sigma)
    return 0.5 * f_prime_circ - 0.5 * eval_f(kernel, state.t) * grad_sq - damping


def J_and_I(mesh: RadialMesh, field: RadialField, ell: float) -> Tuple[float, float]:
    """
    Potential-well functionals.

    J = (ℓ/2)‖∇w‖² - (1/p)∫k|w|^p,  I = ℓ‖∇w‖² - ∫k|w|^p.
    """
    p = mesh.spec.p
    A = float(mesh.grad_sq_norm(field))
    B = mesh.weighted_lp_norm(field, p)
    return 0.5 * ell * A - B / p, ell * A - B


def phi_psi(state: WaveState, history: HistoryBuffer, kernel: KernelSpec) -> Tuple[float, float]:
    """φ = (u_t, u) and ψ = -(u_t, ∫₀^t f(t-s)(u(t) - u(s)) ds)."""
    mesh = history.mesh
    phi = mesh.inner(state.u_t, state.u)
    idx = history.index_of(state.t)
    if idx == 0:
        return phi, 0.0
    psi = -mesh.inner(state.u_t, memory_displacement(history, kernel, idx))
    return phi, psi


def M_functional(state: WaveState, history: HistoryBuffer, kernel: KernelSpec,
                 terms: Optional[MemoryTerms] = None) -> float:
    """M = ‖u_t‖² + (1 - ∫₀^t f)‖∇u‖² + (f∘∇u); no source term, no ½ factors."""
    parts = energy(state, history, kernel, terms)
    return 2.0 * (parts.kinetic + parts.elastic + parts.memory)


# ========== Records ==========

@dataclass(frozen=True)
class FunctionalRecord:
    """All functionals at one recorded time."""

    t: float
    E: float
    kinetic: float
    elastic: float
    memory: float
    source: float
    dissipation_rate: float
    cum_damping: float
    phi: float
    psi: float
    M: float
    G: float
    Gp: float
    Lambda: float
    l2_norm: float
    grad_norm: float
    linf_norm: float
    I_of_u: float
    J_of_u: float
    kernel_mass: float
    hardy_u_sq: float
    hardy_u_int: float
    hardy_cross_int: float

    def row(self) -> List[float]:
        return [getattr(self, name) for name in RECORD_COLUMNS + EXTRA_COLUMNS]

    @classmethod
    def from_row(cls, row: Dict[str, float]) -> "FunctionalRecord":
        return cls(**{f.name: float(row[f.name]) for f in fields(cls)})


def lyapunov_L(record: FunctionalRecord, eps1: float = 1e-2, eps2: float = 1e-2) -> float:
    """L = E + ε₁φ + ε₂ψ."""
    if eps1 < 0 or eps2 < 0:
        raise PreconditionError("eps1 and eps2 must be nonnegative")
    return record.E + eps1 * record.phi + eps2 * record.psi


def lyapunov_equivalence(records: Sequence[FunctionalRecord], eps1: float = 1e-2,
                         eps2: float = 1e-2) -> Tuple[float, float]:
    """Fitted (c₁, c₂) with c₁E ≤ L ≤ c₂E over records where E > 0."""
    ratios = [lyapunov_L(r, eps1, eps2) / r.E for r in records if r.E > 0]
    if not ratios:
        return float('nan'), float('nan')
    return float(min(ratios)), float(max(ratios))


class FunctionalTracker:
    """
    Running accumulators along one trajectory.

    advance() must see every accepted state in order; record() turns the
    current state into a FunctionalRecord. The accumulators (cumulative
    damping and the two G integrals) are sequential per trajectory.
    """

    def __init__(self, history: HistoryBuffer, kernel: KernelSpec,
                 eta: float = 0.0, mu: float = 1.0, T: float = 1.0):
        """
        Initialize tracker.

        Args:
            history: Trajectory history (shared with the solver)
            kernel: Relaxation kernel
            eta, mu, T: Parameters for the G/G' columns of the records
        """
        self.history = history
        self.kernel = kernel
        self.mesh = history.mesh
        self.ell = kernel.ell
        self.eta = eta
        self.mu = mu
        self.T = T

        self.cum_damping = 0.0
        self.hardy_u_int = 0.0
        self.hardy_cross_int = 0.0
        self.hardy_u0_sq: Optional[float] = None
        self._last: Optional[Tuple[float, float, float, float]] = None

    def advance(self, state: WaveState):
        """Fold the state into the trapezoid accumulators."""
        sigma = self.mesh.spec.sigma
        damping = self.mesh.hardy_norm_sq(state.u_t, sigma)
        hardy_u = self.mesh.hardy_norm_sq(state.u, sigma)
        cross = self.mesh.inner_hardy(state.u, state.u_t, sigma)
        if self._last is None:
            self.hardy_u0_sq = hardy_u
        else:
            t_prev, damping_prev, hardy_prev, cross_prev = self._last
            half_dt = 0.5 * (state.t - t_prev)
            self.cum_damping += half_dt * (damping + damping_prev)
            self.hardy_u_int += half_dt * (hardy_u + hardy_prev)
            self.hardy_cross_int += half_dt * (cross + cross_prev)
        self._last = (state.t, damping, hardy_u, cross)

    def record(self, state: WaveState) -> FunctionalRecord:
        """Evaluate every functional at the current (already advanced) state."""
        mesh = self.mesh
        history = self.history
        kernel = self.kernel
        sigma = mesh.spec.sigma

        terms = _memory_terms(history, kernel, history.index_of(state.t))
        parts = energy(state, history, kernel, terms)
        rate = dissipation_rate(state, history, kernel, terms)
        phi, psi = phi_psi(state, history, kernel)
        J, I = J_and_I(mesh, state.u, self.ell)
        l2_sq = mesh.l2_norm_sq(state.u)

        hardy_u = mesh.hardy_norm_sq(state.u, sigma)
        hardy_u0 = self.hardy_u0_sq if self.hardy_u0_sq is not None else hardy_u
        shift = state.t + self.mu
        G = l2_sq + self.hardy_u_int + (self.T - state.t) * hardy_u0 + self.eta * shift ** 2
        Gp = 2.0 * phi + 2.0 * self.hardy_cross_int + 2.0 * self.eta * shift

        return FunctionalRecord(
            t=state.t,
            E=parts.E,
            kinetic=parts.kinetic, elastic=parts.elastic, memory=parts.memory, source=parts.source,
            dissipation_rate=rate,
            cum_damping=self.cum_damping,
            phi=phi, psi=psi,
            M=M_functional(state, history, kernel, terms),
            G=G, Gp=Gp,
            Lambda=terms.Lambda,
            l2_norm=float(np.sqrt(l2_sq)),
            grad_norm=float(np.sqrt(parts.grad_sq)),
            linf_norm=mesh.linf_norm(state.u),
            I_of_u=I,
            J_of_u=J,
            kernel_mass=parts.kernel_mass,
            hardy_u_sq=hardy_u,
            hardy_u_int=self.hardy_u_int,
            hardy_cross_int=self.hardy_cross_int,
        )


# ========== Trajectory-level checks ==========

def _records_of(trajectory_or_records) -> Sequence[FunctionalRecord]:
    return getattr(trajectory_or_records, 'records', trajectory_or_records)


def levine_G(trajectory, eta: float, mu: float, T: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Convexity functional G and G' along a trajectory.

    G(t)  = ‖u‖² + ∫₀^t‖u/|·|^{σ/2}‖² ds + (T-t)‖u⁰/|·|^{σ/2}‖² + η(t+μ)²
    G'(t) = 2(u, u_t) + 2∫₀^t (u, u_s)_σ ds + 2η(t+μ)

    Args:
        trajectory: Trajectory or sequence of FunctionalRecord (first at t = 0)
        eta: η ≥ 0
        mu: μ > 0
        T: Horizon, at least the last recorded time

    Returns:
        (times, G, G')
    """
    records = _records_of(trajectory)
    if eta < 0 or mu <= 0:
        raise PreconditionError(f"levine_G needs eta >= 0 and mu > 0, got eta={eta}, mu={mu}")
    t = np.array([r.t for r in records])
    if len(t) and T < t[-1]:
        raise PreconditionError(f"T={T} is before the last recorded time {t[-1]}")
    l2_sq = np.array([r.l2_norm ** 2 for r in records])
    hardy_int = np.array([r.hardy_u_int for r in records])
    cross_int = np.array([r.hardy_cross_int for r in records])
    phi = np.array([r.phi for r in records])
    hardy_u0 = records[0].hardy_u_sq if records else 0.0
    G = l2_sq + hardy_int + (T - t) * hardy_u0 + eta * (t + mu) ** 2
    Gp = 2.0 * phi + 2.0 * cross_int + 2.0 * eta * (t + mu)
    return t, G, Gp


@dataclass(frozen=True)
class BalanceReport:
    """Discrete energy-balance diagnostics over a record series."""

    defects: np.ndarray
    local_defects: np.ndarray
    max_defect: float
    monotone_ok: bool
    damping_balance_ok: bool
    negative_energy_count: int


def energy_balance(trajectory) -> BalanceReport:
    """
    Check the dissipation identity and its consequences on a record series.

    defect_n = E_n - E_0 - Σ_{m<n} Δt_m·(D_m + D_{m+1})/2, with D the
    dissipation rate. Monotonicity allows a slack of 10 local defects per
    step; the damping balance E + ∫‖u_t‖²_σ ≤ E(0) allows the cumulative
    defect.
    """
    records = _records_of(trajectory)
    t = np.array([r.t for r in records])
    E = np.array([r.E for r in records])
    D = np.array([r.dissipation_rate for r in records])
    cum = np.array([r.cum_damping for r in records])
    if len(records) < 2:
        zero = np.zeros(len(records))
        return BalanceReport(zero, zero, 0.0, True, True, int(np.sum(E < 0)))

    increments = np.diff(t) * 0.5 * (D[:-1] + D[1:])
    local = np.diff(E) - increments
    defects = np.concatenate(([0.0], np.cumsum(local)))
    floor = 1e-13 * max(abs(E[0]), np.max(np.abs(E)))

    monotone_ok = bool(np.all(np.diff(E) <= 10.0 * np.abs(local) + floor))
    damping_ok = bool(np.all(E + cum <= E[0] + np.abs(defects) + floor))
    negatives = int(np.sum(E < 0))
    if negatives:
        logger.warning(f"Energy is negative at {negatives} records")

    return BalanceReport(
        defects=defects, local_defects=local,
        max_defect=float(np.max(np.abs(defects))),
        monotone_ok=monotone_ok, damping_balance_ok=damping_ok,
        negative_energy_count=negatives,
    )


def energy_balance_defect(trajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative and per-step balance defects of a record series."""
    report = energy_balance(trajectory)
    return report.defects, report.local_defects


def monotonicity_check(trajectory) -> bool:
    """E non-increasing up to 10 local balance defects per step."""
    return energy_balance(trajectory).monotone_ok
