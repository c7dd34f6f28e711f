"""
Relaxation Kernel Module

Analytic relaxation-kernel families, their closed-form integrals, and numerical
certification of the kernel assumptions used by the decay and blow-up results.

Two families are supported:

- exponential(b, λ):      f(t) = b·exp(-λt)
- polynomial_shift(b, ν): f(t) = b·(1+t)^(-ν),  ν > 1

Both satisfy f' = -ξ₀·f^q exactly with a constant ξ₀, so every downstream
formula (mass, ℓ, envelopes) is evaluable in closed form.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Union

import numpy as np

from .exceptions import ConfigError, PreconditionError
from .utils import log_spaced_grid

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# f'(t) + ξ₀ f(t)^q is analytically zero; this absorbs roundoff
DECAY_TOLERANCE = 1e-10


class KernelFamily(str, Enum):
    """Supported relaxation-kernel families."""

    EXPONENTIAL = "exponential"
    POLYNOMIAL_SHIFT = "polynomial_shift"


@dataclass(frozen=True)
class KernelSpec:
    """
    Relaxation kernel description.

    Attributes:
        family: Kernel family
        b: Kernel value at t = 0
        rate: λ for the exponential family, ν for the polynomial family
    """

    family: KernelFamily
    b: float
    rate: float

    def __post_init__(self):
        if not (self.b > 0 and self.rate > 0):
            raise ConfigError(f"Kernel parameters must be positive, got b={self.b}, rate={self.rate}")

    @classmethod
    def exponential(cls, b: float, lam: float) -> "KernelSpec":
        return cls(KernelFamily.EXPONENTIAL, float(b), float(lam))

    @classmethod
    def polynomial_shift(cls, b: float, nu: float) -> "KernelSpec":
        return cls(KernelFamily.POLYNOMIAL_SHIFT, float(b), float(nu))

    @classmethod
    def from_config(cls, config: Dict) -> "KernelSpec":
        """
        Build a kernel from its config section.

        Args:
            config: {"family": ..., "b": ..., "lambda" | "nu": ...}

        Returns:
            KernelSpec
        """
        family = config.get('family')
        if family == KernelFamily.EXPONENTIAL.value:
            return cls.exponential(config['b'], config['lambda'])
        if family == KernelFamily.POLYNOMIAL_SHIFT.value:
            return cls.polynomial_shift(config['b'], config['nu'])
        raise ConfigError(f"Unknown kernel family: {family}. "
                          f"Supported families: {[f.value for f in KernelFamily]}")

    @property
    def q(self) -> float:
        """Exponent q in f' = -ξ f^q."""
        if self.family is KernelFamily.EXPONENTIAL:
            return 1.0
        return (self.rate + 1.0) / self.rate

    @property
    def xi0(self) -> float:
        """Constant ξ₀ in f' = -ξ₀ f^q."""
        if self.family is KernelFamily.EXPONENTIAL:
            return self.rate
        return self.rate * self.b ** (-1.0 / self.rate)

    @property
    def total_mass(self) -> float:
        """∫₀^∞ f(s) ds."""
        return cumulative_mass(self, math.inf)

    @property
    def ell(self) -> float:
        """Residual elastic fraction ℓ = 1 - ∫₀^∞ f."""
        return 1.0 - self.total_mass

    def to_config(self) -> Dict:
        key = 'lambda' if self.family is KernelFamily.EXPONENTIAL else 'nu'
        return {'family': self.family.value, 'b': self.b, key: self.rate}


@dataclass(frozen=True)
class KernelCertificate:
    """Outcome of certify(); failures are reported through the flags."""

    ell: float
    q: float
    xi0: float
    shape_ok: bool
    decay_ok: bool
    sample_grid_max_violation: float
    q_warning: bool = False

    @property
    def ok(self) -> bool:
        return self.shape_ok and self.decay_ok


def eval_f(spec: KernelSpec, t: ArrayLike) -> ArrayLike:
    """Closed-form kernel value f(t), t ≥ 0."""
    t = np.asarray(t, dtype=np.float64)
    if spec.family is KernelFamily.EXPONENTIAL:
        value = spec.b * np.exp(-spec.rate * t)
    else:
        value = spec.b * np.power(1.0 + t, -spec.rate)
    return value if value.ndim else float(value)


def eval_df(spec: KernelSpec, t: ArrayLike) -> ArrayLike:
    """Closed-form derivative f'(t)."""
    t = np.asarray(t, dtype=np.float64)
    if spec.family is KernelFamily.EXPONENTIAL:
        value = -spec.rate * spec.b * np.exp(-spec.rate * t)
    else:
        value = -spec.rate * spec.b * np.power(1.0 + t, -spec.rate - 1.0)
    return value if value.ndim else float(value)


def xi(spec: KernelSpec, t: ArrayLike) -> ArrayLike:
    """ξ(t); constant ξ₀ for both supported families."""
    t = np.asarray(t, dtype=np.float64)
    value = np.full_like(t, spec.xi0)
    return value if value.ndim else float(value)


def cumulative_mass(spec: KernelSpec, t: ArrayLike) -> ArrayLike:
    """
    ∫₀^t f(s) ds in closed form.

    Args:
        spec: Kernel
        t: Upper limit (math.inf allowed)

    Returns:
        The integral; at t = ∞ it equals 1 - ℓ

    Raises:
        PreconditionError: polynomial kernel with ν ≤ 1 (divergent mass)
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise PreconditionError("cumulative_mass requires t >= 0")
    if spec.family is KernelFamily.EXPONENTIAL:
        value = (spec.b / spec.rate) * -np.expm1(-spec.rate * t)
    else:
        nu = spec.rate
        if nu <= 1.0:
            raise PreconditionError(f"polynomial_shift kernel needs nu > 1 for finite mass, got nu={nu}")
        value = (spec.b / (nu - 1.0)) * (1.0 - np.power(1.0 + t, 1.0 - nu))
    return value if value.ndim else float(value)


def _log_f(spec: KernelSpec, t: np.ndarray) -> np.ndarray:
    """log f(t) in closed form; stays finite where f itself underflows."""
    if spec.family is KernelFamily.EXPONENTIAL:
        return math.log(spec.b) - spec.rate * t
    return math.log(spec.b) - spec.rate * np.log1p(t)


def certify(spec: KernelSpec, sample_count: int = 2000, horizon: float = 1000.0) -> KernelCertificate:
    """
    Certify the kernel assumptions on a log-spaced sample grid.

    Args:
        spec: Kernel to certify
        sample_count: Number of sample points (≥ 2)
        horizon: Right end of the sample interval

    Returns:
        KernelCertificate with ℓ, q, ξ₀ and the pass/fail flags
    """
    if sample_count < 2:
        raise PreconditionError("certify needs sample_count >= 2")

    q = spec.q
    xi0 = spec.xi0
    try:
        ell = spec.ell
    except PreconditionError:
        ell = -math.inf

    grid = log_spaced_grid(horizon, sample_count)
    f = eval_f(spec, grid)
    df = eval_df(spec, grid)
    violation = float(np.max(df + xi0 * np.power(f, q)))

    f0 = spec.b
    # Sampled values below the float floor are underflow, not sign changes
    representable = _log_f(spec, grid) > math.log(np.finfo(np.float64).tiny)
    positive_ok = bool(f0 > 0 and spec.rate > 0 and np.all(f[representable] > 0))
    nonincreasing_ok = bool(np.all(df <= 0))
    mass_ok = bool(0.0 < ell < 1.0)
    shape_ok = positive_ok and nonincreasing_ok and mass_ok
    decay_ok = bool(violation <= DECAY_TOLERANCE * f0)
    q_warning = q >= 1.5

    cert = KernelCertificate(
        ell=ell, q=q, xi0=xi0, shape_ok=shape_ok, decay_ok=decay_ok,
        sample_grid_max_violation=violation, q_warning=q_warning,
    )
    logger.info(f"Kernel {spec.family.value}(b={spec.b}, rate={spec.rate}): "
                f"ell={ell:.6g}, q={q:.6g}, xi0={xi0:.6g}, shape_ok={shape_ok}, decay_ok={decay_ok}")
    if not positive_ok:
        logger.warning(f"Kernel shape check failed: f must be positive (b={spec.b}, rate={spec.rate})")
    if not nonincreasing_ok:
        logger.warning("Kernel shape check failed: f' > 0 at a sample point")
    if not mass_ok:
        logger.warning(f"Kernel shape check failed: total mass {1.0 - ell:.6g} must lie in (0, 1)")
    if q_warning:
        logger.warning(f"q = {q:.4g} >= 3/2: the polynomial envelope is only stated for q < 3/2")
    return cert


def mass_bound_is_degenerate(theta: float) -> bool:
    """True when θ₊ = 1, where the blow-up mass bound degenerates to its limit 1."""
    return max(0.0, theta) >= 1.0


def blowup_mass_bound(p: float, theta: float) -> float:
    """
    Upper bound on the kernel mass admitted by the blow-up result.

    Args:
        p: Source exponent, p > 2
        theta: E(0)/d, θ ≤ 1

    Returns:
        (p-2)/(p-2 + ((1-θ₊)²p + 2θ₊(1-θ₊))^{-1}), θ₊ = max{0, θ};
        1.0 in the degenerate limit θ₊ = 1
    """
    if p <= 2:
        raise PreconditionError(f"blowup_mass_bound requires p > 2, got {p}")
    if theta > 1:
        raise PreconditionError(f"blowup_mass_bound requires theta <= 1, got {theta}")

    theta_plus = max(0.0, theta)
    inner = (1.0 - theta_plus) ** 2 * p + 2.0 * theta_plus * (1.0 - theta_plus)
    if inner <= 0.0:
        logger.warning("theta_+ = 1: mass bound degenerates, returning the limit value 1")
        return 1.0
    return (p - 2.0) / (p - 2.0 + 1.0 / inner)


def xi_power_integral(spec: KernelSpec, t1: float, t: ArrayLike, power: float) -> ArrayLike:
    """∫_{t1}^t ξ(s)^power ds = ξ₀^power·(t - t1) for constant ξ."""
    t_arr = np.asarray(t, dtype=np.float64)
    if t1 <= 0 or np.any(t_arr < t1):
        raise PreconditionError("xi_power_integral requires 0 < t1 <= t")
    value = spec.xi0 ** power * (t_arr - t1)
    return value if value.ndim else float(value)


def check_improved_rate_condition(spec: Union[KernelSpec, float]) -> bool:
    """
    Decide convergence of ∫₀^∞ (1 + ∫₀^t ξ^{2q-1})^{-1/(2q-2)} dt.

    For constant ξ the integrand decays like t^{-1/(2q-2)}, so the integral
    converges iff 1/(2q-2) > 1, i.e. q < 3/2.

    Args:
        spec: Kernel, or the exponent q directly

    Returns:
        True iff the integral converges
    """
    q = spec.q if isinstance(spec, KernelSpec) else float(spec)
    if q <= 1.0:
        raise PreconditionError("improved-rate condition needs q > 1")
    return 1.0 / (2.0 * q - 2.0) > 1.0
