"""
Analysis Module

Post-processing of trajectories: decay-envelope fitting, blow-up time bounds
with (η, μ) optimization, the γ estimate along blow-up runs and the
convexity check of G.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, stats

from .exceptions import InfeasibleError, PreconditionError
from .functionals import FunctionalRecord, levine_G, monotonicity_check
from .kernel import (KernelSpec, blowup_mass_bound, check_improved_rate_condition,
                     mass_bound_is_degenerate, xi_power_integral)
from .mesh import RadialField, RadialMesh
from .wellpot import WellReport, initial_energy

logger = logging.getLogger(__name__)


class DecayBranch(str, Enum):
    """Envelope family selected by the kernel exponent q."""

    EXPONENTIAL = "exponential"
    POLYNOMIAL = "polynomial"
    IMPROVED = "improved"


class BlowupCase(str, Enum):
    """Sign of the initial energy."""

    NEGATIVE_E0 = "negative_E0"
    ZERO_E0 = "zero_E0"
    POSITIVE_E0 = "positive_E0"


def _records_of(trajectory) -> Sequence[FunctionalRecord]:
    return getattr(trajectory, 'records', trajectory)


# ========== Decay ==========

@dataclass(frozen=True)
class EnvelopeFit:
    """Log-log or semilog fit of E against one envelope regressor."""

    slope: float
    intercept: float
    r2: float
    envelope_slope: Optional[float]
    constant: float
    extrapolation_pass: bool
    envelope: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DecayReport:
    """Decay-envelope verdict for one trajectory."""

    t1: float
    q: float
    branch: DecayBranch
    fitted_slope: float
    fit_r2: float
    envelope_constant_C: float
    extrapolation_pass: bool
    monotone_pass: bool
    envelope_slope: Optional[float] = None
    improved: Optional[EnvelopeFit] = None
    non_decaying: bool = False
    flags: Tuple[str, ...] = ()
    times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    energies: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    envelope: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def summary(self) -> Dict:
        out = {
            't1': self.t1, 'q': self.q, 'branch': self.branch.value,
            'fitted_slope': self.fitted_slope, 'fit_r2': self.fit_r2,
            'envelope_slope': self.envelope_slope,
            'envelope_constant_C': self.envelope_constant_C,
            'extrapolation_pass': self.extrapolation_pass,
            'monotone_pass': self.monotone_pass,
            'non_decaying': self.non_decaying,
            'flags': list(self.flags),
        }
        if self.improved is not None:
            out['improved'] = {
                'fitted_slope': self.improved.slope, 'fit_r2': self.improved.r2,
                'envelope_slope': self.improved.envelope_slope,
                'envelope_constant_C': self.improved.constant,
                'extrapolation_pass': self.improved.extrapolation_pass,
            }
        return out

    def series(self) -> List[List[float]]:
        """Rows (t, E, envelope, ratio) over the fit window."""
        return [[t, E, env, E / env if env > 0 else math.nan]
                for t, E, env in zip(self.times, self.energies, self.envelope)]


def _fit_envelope(t: np.ndarray, E: np.ndarray, x: np.ndarray, env: Optional[np.ndarray],
                  envelope_slope: Optional[float]) -> EnvelopeFit:
    """
    Regress log E on x and test the half-window extrapolation.

    The envelope shape is env(t); with env None the fitted slope defines it
    as exp(slope·x). C = max of E/env on the first half-window; the second
    half must satisfy E ≤ 1.1·C·env.
    """
    y = np.log(E)
    fit = stats.linregress(x, y)
    slope = float(fit.slope)
    if env is None:
        env = np.exp(slope * x)
    half = len(t) // 2
    first = slice(0, max(half, 1))
    second = slice(max(half, 1), len(t))
    constant = float(np.max(E[first] / env[first]))
    extrapolation_pass = bool(np.all(E[second] <= 1.1 * constant * env[second]))
    return EnvelopeFit(
        slope=slope, intercept=float(fit.intercept), r2=float(fit.rvalue ** 2),
        envelope_slope=envelope_slope, constant=constant,
        extrapolation_pass=extrapolation_pass, envelope=constant * env,
    )


def fit_decay(trajectory, kernel: KernelSpec, t1: float,
              monotone_pass: Optional[bool] = None) -> DecayReport:
    """
    Fit the energy decay against the envelope the kernel exponent predicts.

    q = 1:        log E against ∫_{t1}^t ξ (semilog, envelope exp(slope·∫ξ))
    1 < q < 3/2:  log E against log(1 + ∫_{t1}^t ξ^{2q-1}), envelope slope -1/(2q-2);
                  the improved fit against log(1 + ∫ξ^q), slope -1/(q-1), is added
    q ≥ 3/2:      polynomial branch only, flagged

    Args:
        trajectory: Trajectory or record sequence
        kernel: Relaxation kernel
        t1: Window start (> 0)
        monotone_pass: Precomputed monotonicity verdict; computed from the records when omitted

    Returns:
        DecayReport
    """
    records = _records_of(trajectory)
    if t1 <= 0:
        raise PreconditionError(f"fit_decay needs t1 > 0, got {t1}")
    if getattr(trajectory, 'status', None) is not None and trajectory.status.value != "completed":
        raise PreconditionError(f"fit_decay needs a completed trajectory, got {trajectory.status.value}")

    t_all = np.array([r.t for r in records])
    E_all = np.array([r.E for r in records])
    window = t_all >= t1 - 1e-12
    t = t_all[window]
    E = E_all[window]
    q = kernel.q
    if monotone_pass is None:
        monotone_pass = monotonicity_check(records) if len(records) > 1 else True

    if q == 1.0:
        branch = DecayBranch.EXPONENTIAL
    elif check_improved_rate_condition(q):
        branch = DecayBranch.IMPROVED
    else:
        branch = DecayBranch.POLYNOMIAL

    flags: List[str] = []
    if len(t) < 4:
        flags.append("too_few_records")
    if len(t) and np.any(E <= 0):
        flags.append("nonpositive_energy")
    if flags:
        logger.warning(f"Decay fit skipped: {', '.join(flags)}")
        return DecayReport(t1=t1, q=q, branch=branch, fitted_slope=math.nan, fit_r2=math.nan,
                           envelope_constant_C=math.nan, extrapolation_pass=False,
                           monotone_pass=bool(monotone_pass), flags=tuple(flags),
                           times=t, energies=E, envelope=np.full(len(t), math.nan))

    t_start = float(t[0])
    if branch is DecayBranch.EXPONENTIAL:
        x = xi_power_integral(kernel, t_start, t, 1.0)
        primary = _fit_envelope(t, E, x, None, None)
        improved = None
    else:
        growth = xi_power_integral(kernel, t_start, t, 2.0 * q - 1.0)
        envelope_slope = -1.0 / (2.0 * q - 2.0)
        primary = _fit_envelope(t, E, np.log1p(growth), (1.0 + growth) ** envelope_slope,
                                envelope_slope)
        improved = None
        if branch is DecayBranch.IMPROVED:
            growth_q = xi_power_integral(kernel, t_start, t, q)
            improved_slope = -1.0 / (q - 1.0)
            improved = _fit_envelope(t, E, np.log1p(growth_q), (1.0 + growth_q) ** improved_slope,
                                     improved_slope)
        else:
            flags.append("q_at_least_three_halves")

    non_decaying = primary.slope >= 0.0
    if non_decaying:
        flags.append("non_decaying")
    report = DecayReport(
        t1=t1, q=q, branch=branch,
        fitted_slope=primary.slope, fit_r2=primary.r2,
        envelope_constant_C=primary.constant,
        extrapolation_pass=primary.extrapolation_pass,
        monotone_pass=bool(monotone_pass),
        envelope_slope=primary.envelope_slope,
        improved=improved, non_decaying=non_decaying, flags=tuple(flags),
        times=t, energies=E, envelope=primary.envelope,
    )
    logger.info(f"Decay fit ({branch.value}): slope {primary.slope:.6g}, R^2 {primary.r2:.6f}, "
                f"C {primary.constant:.6g}, extrapolation {'PASS' if primary.extrapolation_pass else 'FAIL'}")
    return report


# ========== Blow-up bounds ==========

def lower_bound_time(p: float, K: float, B: float, ell: float, M0: float) -> float:
    """T_* = ln(1 + ℓ^{p-1}·M0^{2-p})/((p-2)·K·B)."""
    if M0 <= 0:
        raise PreconditionError("The lower bound is undefined for M(0) = 0 (zero data does not blow up)")
    if p <= 2 or K <= 0 or B <= 0:
        raise PreconditionError(f"lower_bound_time needs p > 2, K > 0, B > 0 (got p={p}, K={K}, B={B})")
    return math.log1p(ell ** (p - 1.0) * M0 ** (2.0 - p)) / ((p - 2.0) * K * B)


def blowup_lower_bound(mesh: RadialMesh, u0: RadialField, v0: RadialField,
                       kernel: KernelSpec, B2p2: float) -> float:
    """
    Lower bound T_* on the blow-up time with M(0) = ‖u¹‖² + ‖∇u⁰‖².

    Args:
        mesh: Simulation mesh
        u0, v0: Initial data
        kernel: Relaxation kernel (supplies ℓ)
        B2p2: Discrete embedding constant B_{2(p-1)}
    """
    M0 = mesh.l2_norm_sq(v0) + float(mesh.grad_sq_norm(u0))
    return lower_bound_time(mesh.spec.p, mesh.spec.K, B2p2, kernel.ell, M0)


@dataclass(frozen=True)
class SearchBox:
    """(η, μ) search settings for the upper bound."""

    mu_min: float = 1e-3
    mu_max: float = 1e3
    grid: int = 41

    @classmethod
    def from_config(cls, config: Optional[Dict]) -> "SearchBox":
        config = config or {}
        return cls(mu_min=float(config.get('mu_min', cls.mu_min)),
                   mu_max=float(config.get('mu_max', cls.mu_max)),
                   grid=int(config.get('grid', cls.grid)))


@dataclass(frozen=True)
class UpperBound:
    """Optimized upper bound on the blow-up time."""

    T_upper: float
    eta_star: float
    mu_star: float
    case: BlowupCase
    in_proof_value: float


def initial_case(mesh: RadialMesh, u0: RadialField, v0: RadialField,
                 E0: Optional[float] = None) -> BlowupCase:
    """Sign case of E(0); |E0| ≤ 1e-14·max(‖u⁰‖² + |(u⁰,u¹)|, 1) counts as zero."""
    if E0 is None:
        E0 = initial_energy(mesh, u0, v0)
    scale = mesh.l2_norm_sq(u0) + abs(mesh.inner(u0, v0))
    if abs(E0) <= 1e-14 * max(scale, 1.0):
        return BlowupCase.ZERO_E0
    return BlowupCase.NEGATIVE_E0 if E0 < 0 else BlowupCase.POSITIVE_E0


def initial_gamma(mesh: RadialMesh, u0: RadialField, d: float) -> float:
    """γ at t = 0: ((p-2)/(2p))·‖∇u⁰‖² - d."""
    p = mesh.spec.p
    return (p - 2.0) / (2.0 * p) * float(mesh.grad_sq_norm(u0)) - d


def blowup_upper_bound(mesh: RadialMesh, u0: RadialField, v0: RadialField, well: WellReport,
                       E0: Optional[float] = None, gamma_est: Optional[float] = None,
                       box: Optional[SearchBox] = None) -> UpperBound:
    """
    Minimize (2‖u⁰‖² + 2ημ²)/((p-2)(u⁰,u¹) + ημ - 2‖u⁰/|·|^{σ/2}‖²) over admissible (η, μ).

    Admissible η: (0, -2E0) for E0 < 0; η = 0 for E0 = 0 (needs (u⁰,u¹) > 0);
    (0, 2θγ) for 0 < E0 < d with γ estimated at t = 0. μ ranges over the
    bounded box; the denominator and G'(0) = 2(u⁰,u¹) + 2ημ must be positive.
    A coarse log-grid is followed by a bounded Nelder-Mead refinement.

    Raises:
        InfeasibleError: empty feasible set
    """
    box = box or SearchBox()
    p = mesh.spec.p
    sigma = mesh.spec.sigma
    a = mesh.l2_norm_sq(u0)
    cross = mesh.inner(u0, v0)
    hardy = mesh.hardy_norm_sq(u0, sigma)
    if E0 is None:
        E0 = initial_energy(mesh, u0, v0)
    case = initial_case(mesh, u0, v0, E0)
    base = (p - 2.0) * cross - 2.0 * hardy

    if case is BlowupCase.ZERO_E0:
        if cross <= 0 or base <= 0:
            raise InfeasibleError("Zero-energy case needs (u0,u1) > 0 and a positive denominator")
        T = 2.0 * a / base
        return UpperBound(T, 0.0, box.mu_min, case, _in_proof(a, cross, hardy, 0.0, box.mu_min, T, p))

    if case is BlowupCase.NEGATIVE_E0:
        eta_max = -2.0 * E0
    else:
        if E0 >= well.d:
            raise InfeasibleError(f"E0 = {E0:.6g} is not below the well depth d = {well.d:.6g}")
        if gamma_est is None:
            gamma_est = initial_gamma(mesh, u0, well.d)
        if gamma_est <= 0:
            raise InfeasibleError(f"gamma estimate {gamma_est:.6g} is not positive; eta range is empty")
        eta_max = 2.0 * (E0 / well.d) * gamma_est

    def ratio(eta: float, mu: float) -> float:
        denominator = base + eta * mu
        if not (0.0 < eta < eta_max) or not (box.mu_min <= mu <= box.mu_max):
            return math.inf
        if denominator <= 0 or cross + eta * mu <= 0:
            return math.inf
        return (2.0 * a + 2.0 * eta * mu * mu) / denominator

    etas = eta_max * np.geomspace(1e-6, 1.0 - 1e-9, box.grid)
    mus = np.geomspace(box.mu_min, box.mu_max, box.grid)
    values = np.array([[ratio(e, m) for m in mus] for e in etas])
    if not np.any(np.isfinite(values)):
        raise InfeasibleError("Upper-bound denominator is never positive on the (eta, mu) box")
    i, j = np.unravel_index(np.argmin(values), values.shape)

    def objective(x: np.ndarray) -> float:
        return ratio(math.exp(x[0]), math.exp(x[1]))

    start = np.array([math.log(etas[i]), math.log(mus[j])])
    bounds = [(math.log(etas[0]), math.log(etas[-1])), (math.log(box.mu_min), math.log(box.mu_max))]
    result = optimize.minimize(objective, start, method='Nelder-Mead', bounds=bounds,
                               options={'xatol': 1e-10, 'fatol': 1e-12, 'maxiter': 4000})
    if np.isfinite(result.fun) and result.fun <= values[i, j]:
        eta_star, mu_star, T = math.exp(result.x[0]), math.exp(result.x[1]), float(result.fun)
    else:
        eta_star, mu_star, T = float(etas[i]), float(mus[j]), float(values[i, j])

    logger.info(f"Upper bound ({case.value}): T_upper={T:.6g} at eta={eta_star:.4g}, mu={mu_star:.4g}")
    return UpperBound(T, eta_star, mu_star, case, _in_proof(a, cross, hardy, eta_star, mu_star, T, p))


def _in_proof(a: float, cross: float, hardy: float, eta: float, mu: float, T: float, p: float) -> float:
    """4G(0)/((p-2)G'(0)) with the (T-t) term of G(0) kept."""
    G0 = a + T * hardy + eta * mu * mu
    Gp0 = 2.0 * cross + 2.0 * eta * mu
    return 4.0 * G0 / ((p - 2.0) * Gp0) if Gp0 > 0 else math.inf


def estimate_gamma(trajectory, well: WellReport, kernel: KernelSpec) -> Tuple[float, float]:
    """
    γ_run = min_t [((p-2)/(2p))·((1 - ∫₀^t f)‖∇u‖² + (f∘∇u)) - d].

    Returns:
        (γ_run, time of the minimum); a nonpositive value is flagged
    """
    records = _records_of(trajectory)
    if not records:
        raise PreconditionError("estimate_gamma needs at least one record")
    p = well.p
    values = np.array([(p - 2.0) / p * (r.elastic + r.memory) - well.d for r in records])
    idx = int(np.argmin(values))
    gamma_run = float(values[idx])
    if gamma_run <= 0:
        logger.warning(f"gamma_run = {gamma_run:.6g} <= 0 at t = {records[idx].t:.6g}")
    return gamma_run, float(records[idx].t)


@dataclass(frozen=True)
class ConvexityResult:
    """min of G·G'' - ((p+2)/4)·G'² over interior records."""

    min_value: float
    scale: float
    tol: float
    passed: bool
    eta: float
    mu: float
    T: float
    times: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    Gp: np.ndarray = field(repr=False)
    combination: np.ndarray = field(repr=False)

    def series(self) -> List[List[float]]:
        """Rows (t, G, Gp, convexity_combination)."""
        return [list(row) for row in zip(self.times, self.G, self.Gp, self.combination)]


def convexity_check(trajectory, eta: float, mu: float, T: float, p: Optional[float] = None) -> ConvexityResult:
    """
    Check G·G'' - ((p+2)/4)·G'² ≥ -tol·scale along a record series.

    G'' comes from differencing the G' series; tol = 5·max Δt and
    scale = max G·|G''|. The minimum runs over records 1..n-3: the two
    end records have one-sided stencils, and the last record sits at a
    shortened step (threshold crossing or T_end), so its neighbour's
    central stencil is lopsided.

    Args:
        trajectory: Trajectory (or records, then p is required)
        eta, mu, T: Parameters of G
        p: Source exponent; taken from the trajectory's mesh when omitted
    """
    records = _records_of(trajectory)
    if len(records) < 4:
        raise PreconditionError("convexity_check needs at least 4 records")
    if p is None:
        p = trajectory.history.mesh.spec.p
    t, G, Gp = levine_G(records, eta, mu, T)
    Gpp = np.gradient(Gp, t)
    combination = G * Gpp - 0.25 * (p + 2.0) * Gp ** 2
    window = slice(1, len(records) - 2)
    interior = combination[window]
    scale = float(np.max(np.abs(G[window] * Gpp[window])))
    tol = 5.0 * float(np.max(np.diff(t)))
    min_value = float(np.min(interior))
    return ConvexityResult(
        min_value=min_value, scale=scale, tol=tol, passed=bool(min_value >= -tol * scale),
        eta=eta, mu=mu, T=T, times=t, G=G, Gp=Gp, combination=combination,
    )


@dataclass(frozen=True)
class BlowupReport:
    """Observed blow-up time against the theoretical bounds."""

    T_obs: float
    T_lower: float
    T_upper: Optional[float]
    eta_star: Optional[float]
    mu_star: Optional[float]
    theta: float
    case: BlowupCase
    gamma_run: float
    gamma_time: float
    gamma_initial: float
    mass_condition_ok: bool
    mass_bound: float
    convexity_min: float
    convexity_scale: float
    convexity_tol: float
    convexity_pass: bool
    lower_ok: bool
    upper_ok: Optional[bool]
    upper_note: str = ""
    in_proof_bound: Optional[float] = None
    convexity: Optional[ConvexityResult] = field(default=None, repr=False)

    def summary(self) -> Dict:
        return {
            'T_obs': self.T_obs, 'T_lower': self.T_lower,
            'T_upper': self.T_upper if self.T_upper is not None else "not applicable",
            'eta_star': self.eta_star, 'mu_star': self.mu_star,
            'theta': self.theta, 'case': self.case.value,
            'gamma_run': self.gamma_run, 'gamma_time': self.gamma_time,
            'gamma_initial': self.gamma_initial,
            'mass_condition_ok': self.mass_condition_ok, 'mass_bound': self.mass_bound,
            'convexity_min': self.convexity_min, 'convexity_scale': self.convexity_scale,
            'convexity_tol': self.convexity_tol, 'convexity_pass': self.convexity_pass,
            'lower_ok': self.lower_ok, 'upper_ok': self.upper_ok,
            'upper_note': self.upper_note, 'in_proof_bound': self.in_proof_bound,
        }


def blowup_report(trajectory, mesh: RadialMesh, kernel: KernelSpec, well: WellReport,
                  u0: RadialField, v0: RadialField, box: Optional[SearchBox] = None) -> BlowupReport:
    """
    Assemble the blow-up verdicts for a trajectory that crossed the threshold.

    Args:
        trajectory: Trajectory with status 'blewup'
        mesh: Simulation mesh
        kernel: Relaxation kernel
        well: Well report on the same mesh
        u0, v0: Initial data of the run
        box: (η, μ) search box

    Returns:
        BlowupReport
    """
    status = getattr(trajectory, 'status', None)
    if status is None or status.value != "blewup" or trajectory.T_obs is None:
        raise PreconditionError("blowup_report needs a trajectory with status 'blewup'")
    records = _records_of(trajectory)
    p = mesh.spec.p
    T_obs = float(trajectory.T_obs)

    E0 = initial_energy(mesh, u0, v0)
    theta = E0 / well.d
    case = initial_case(mesh, u0, v0, E0)
    gamma_run, gamma_time = estimate_gamma(records, well, kernel)
    gamma0 = initial_gamma(mesh, u0, well.d)
    if (gamma_run > 0) != (gamma0 > 0):
        logger.warning(f"gamma at t=0 ({gamma0:.4g}) and gamma_run ({gamma_run:.4g}) disagree in sign")

    T_lower = blowup_lower_bound(mesh, u0, v0, kernel, well.B2p2)

    if theta <= 1.0:
        mass_bound = blowup_mass_bound(p, theta)
        condition_ok = (1.0 - kernel.ell) < mass_bound
        if mass_bound_is_degenerate(theta):
            logger.warning("theta_+ = 1: the mass condition is degenerate")
    else:
        mass_bound = math.nan
        condition_ok = False

    I0 = kernel.ell * float(mesh.grad_sq_norm(u0)) - mesh.weighted_lp_norm(u0, p)
    T_upper = eta_star = mu_star = in_proof = None
    note = ""
    if not condition_ok:
        note = "upper bound not applicable: kernel mass condition fails"
    elif not (I0 < 0 and E0 < well.d):
        note = "upper bound not applicable: initial data not in V"
    else:
        try:
            bound = blowup_upper_bound(mesh, u0, v0, well, E0, gamma0, box)
            T_upper, eta_star, mu_star, in_proof = bound.T_upper, bound.eta_star, bound.mu_star, bound.in_proof_value
        except InfeasibleError as e:
            note = f"upper bound not applicable: {e}"
    if note:
        logger.warning(note)

    T_last = records[-1].t
    if T_upper is not None:
        convexity = convexity_check(records, eta_star, mu_star, max(T_upper, T_last), p)
    else:
        convexity = convexity_check(records, 0.0, 1.0, T_last, p)

    lower_ok = T_obs >= T_lower * (1.0 - 0.02)
    upper_ok = None if T_upper is None or not math.isfinite(T_upper) else bool(T_obs <= T_upper)

    report = BlowupReport(
        T_obs=T_obs, T_lower=T_lower, T_upper=T_upper,
        eta_star=eta_star, mu_star=mu_star, theta=theta, case=case,
        gamma_run=gamma_run, gamma_time=gamma_time, gamma_initial=gamma0,
        mass_condition_ok=bool(condition_ok), mass_bound=mass_bound,
        convexity_min=convexity.min_value, convexity_scale=convexity.scale,
        convexity_tol=convexity.tol, convexity_pass=convexity.passed,
        lower_ok=bool(lower_ok), upper_ok=upper_ok, upper_note=note,
        in_proof_bound=in_proof, convexity=convexity,
    )
    logger.info(f"Blow-up report: T_obs={T_obs:.6g}, T_lower={T_lower:.6g}, "
                f"T_upper={'n/a' if T_upper is None else f'{T_upper:.6g}'}, case={case.value}")
    return report
