"""
Potential Well Module

Nehari scaling, mountain-pass value and potential-well depth d, optimal
embedding constants B_r, W/V classification of initial data and the inverse
problem of scaling a profile into W or V.

Extremal problems are solved on the simulation mesh with a normalized
Sobolev-gradient ascent: the Euclidean gradient of the source functional is
mapped through the inverse stiffness matrix (the H¹₀ Riesz representative),
projected onto the constraint sphere ‖∇w‖ = 1 and accepted with a
backtracking line search.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import factorized

from .exceptions import DegenerateFieldError, InfeasibleError, PreconditionError
from .kernel import KernelSpec
from .mesh import RadialField, RadialMesh

logger = logging.getLogger(__name__)


class WellSet(str, Enum):
    """Membership of initial data relative to the potential well."""

    W = "W"
    V = "V"
    BOUNDARY = "boundary"
    NEITHER = "neither"


@dataclass(frozen=True)
class OptimizerParams:
    """Settings of the projected Sobolev-gradient ascent."""

    max_iter: int = 5000
    tol: float = 1e-8
    window: int = 50
    restarts: int = 5
    seed: int = 0

    @classmethod
    def from_config(cls, config: Optional[Dict], seed: int = 0) -> "OptimizerParams":
        config = config or {}
        return cls(
            max_iter=int(config.get('max_iter', cls.max_iter)),
            tol=float(config.get('tol', cls.tol)),
            window=int(config.get('window', cls.window)),
            restarts=int(config.get('restarts', cls.restarts)),
            seed=int(seed),
        )


@dataclass(frozen=True)
class OptimizerResult:
    """Maximizer of Σ w_i k_i |w_i|^r on the sphere ‖∇w‖ = 1."""

    value: float
    field: RadialField
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class WellReport:
    """Potential-well depth and the embedding constants computed with it."""

    d: float
    B2: float
    Bp: float
    B2p2: float
    lambda_star_of_minimizer: float
    minimizer_field: RadialField
    iterations: int
    residual: float
    small_energy_threshold: float
    converged: bool
    restart_values: Tuple[float, ...]
    restart_spread: float
    ell: float
    p: float
    N: int

    def summary(self) -> Dict:
        """JSON-ready summary (the minimizer field is dumped separately)."""
        return {
            'd': self.d, 'B2': self.B2, 'Bp': self.Bp, 'B2p2': self.B2p2,
            'lambda_star_of_minimizer': self.lambda_star_of_minimizer,
            'iterations': self.iterations, 'residual': self.residual,
            'small_energy_threshold': self.small_energy_threshold,
            'converged': self.converged,
            'restart_values': list(self.restart_values),
            'restart_spread': self.restart_spread,
            'ell': self.ell, 'p': self.p, 'N': self.N,
        }


@dataclass(frozen=True)
class Classification:
    """Position of (u⁰, u¹) relative to the well."""

    E0: float
    I0: float
    set: WellSet
    small_energy_ok: bool
    theta: float

    def summary(self) -> Dict:
        return {'E0': self.E0, 'I0': self.I0, 'set': self.set.value,
                'small_energy_ok': self.small_energy_ok, 'theta': self.theta}


# ========== Nehari scaling ==========

def _gradient_and_source(mesh: RadialMesh, field: RadialField) -> Tuple[float, float]:
    A = float(mesh.grad_sq_norm(field))
    B = mesh.weighted_lp_norm(field, mesh.spec.p)
    if not (A > 0 and B > 0):
        raise DegenerateFieldError("Field has zero gradient or zero source integral; no finite Nehari scaling")
    return A, B


def lambda_star(mesh: RadialMesh, field: RadialField, ell: float) -> float:
    """
    Nehari scaling λ* = (ℓ‖∇w‖²/∫k|w|^p)^{1/(p-2)}, where J(λw) peaks and I(λ*w) = 0.

    Raises:
        DegenerateFieldError: zero field or zero source integral
    """
    A, B = _gradient_and_source(mesh, field)
    p = mesh.spec.p
    lam = (ell * A / B) ** (1.0 / (p - 2.0))

    on_manifold = ell * A * lam ** 2 - B * lam ** p
    if abs(on_manifold) > 1e-10 * ell * A * lam ** 2:
        logger.warning(f"I(lambda* w) = {on_manifold:.3e} exceeds relative 1e-10")
    return lam


def mountain_pass_value(mesh: RadialMesh, field: RadialField, ell: float) -> float:
    """sup_λ J(λw) = (½ - 1/p)·ℓA·(ℓA/B)^{2/(p-2)}; invariant under w → c·w."""
    A, B = _gradient_and_source(mesh, field)
    p = mesh.spec.p
    return (0.5 - 1.0 / p) * ell * A * (ell * A / B) ** (2.0 / (p - 2.0))


# ========== Sobolev-gradient ascent ==========

class SobolevAscent:
    """
    Maximize S(w) = Σ w_i k_i |w_i|^r subject to ‖∇w‖₂ = 1.

    One stiffness factorization is shared by every start on the mesh.
    """

    def __init__(self, mesh: RadialMesh, r: float, k_values: Optional[np.ndarray] = None,
                 params: Optional[OptimizerParams] = None):
        self.mesh = mesh
        self.r = float(r)
        self.k = mesh.k_values if k_values is None else np.asarray(k_values, dtype=np.float64)
        self.params = params or OptimizerParams()
        self._stiffness = mesh.stiffness_matrix()
        self._solve = factorized(self._stiffness)
        self._wk = mesh.weights * self.k

    def value(self, w: np.ndarray) -> float:
        return float(np.dot(self._wk, np.abs(w) ** self.r))

    def _normalize(self, w: np.ndarray) -> np.ndarray:
        return w / math.sqrt(float(w @ (self._stiffness @ w)))

    def _riesz_gradient(self, w: np.ndarray) -> np.ndarray:
        euclid = self.r * self._wk * np.abs(w) ** (self.r - 2.0) * w
        return self._solve(euclid)

    def residual(self, w: np.ndarray) -> float:
        """Relative H¹₀ norm of the tangential gradient; zero at critical points."""
        S = self.value(w)
        tangent = self._riesz_gradient(w) / (self.r * S) - w
        return math.sqrt(max(float(tangent @ (self._stiffness @ tangent)), 0.0))

    def maximize(self, w0: np.ndarray) -> OptimizerResult:
        """
        Run the ascent from w0.

        Args:
            w0: Nonzero starting field

        Returns:
            OptimizerResult with the max value and the normalized maximizer
        """
        params = self.params
        w = self._normalize(np.asarray(w0, dtype=np.float64))
        S = self.value(w)
        values = [S]
        step = 1.0
        converged = False
        iteration = 0

        for iteration in range(1, params.max_iter + 1):
            # τ = 1 is the normalized fixed-point (inverse power) step
            direction = self._riesz_gradient(w) / (self.r * S) - w
            while True:
                candidate = self._normalize(w + step * direction)
                S_new = self.value(candidate)
                if S_new >= S or step < 1e-12:
                    break
                step *= 0.5
            w, S = candidate, S_new
            step = min(1.0, 1.5 * step)
            values.append(S)

            if iteration >= params.window:
                old = values[-1 - params.window]
                if abs(S - old) <= params.tol * abs(S):
                    converged = True
                    break
            if iteration % 500 == 0:
                logger.debug(f"Ascent r={self.r:g}: iteration {iteration}, value {S:.12g}")

        if not converged:
            logger.warning(f"Sobolev ascent (r={self.r:g}) did not converge in {params.max_iter} iterations")
        return OptimizerResult(value=S, field=w, iterations=iteration,
                               residual=self.residual(w), converged=converged)


def _bump_start(mesh: RadialMesh) -> np.ndarray:
    return 1.0 - (mesh.nodes / mesh.R) ** 2


def _random_start(mesh: RadialMesh, rng: np.random.Generator) -> np.ndarray:
    return _bump_start(mesh) * (0.5 + rng.random(mesh.N))


def estimate_B_r(mesh: RadialMesh, r: float, params: Optional[OptimizerParams] = None) -> float:
    """
    Optimal constant B_r in ‖w‖_r^r ≤ B_r‖∇w‖₂^r on the mesh.

    The discrete value bounds the continuum constant from below and
    converges as N grows.

    Args:
        mesh: Mesh (the ball and dimension come from its spec)
        r: Exponent, 2 ≤ r ≤ 2n/(n-2)

    Returns:
        max ‖w‖_r^r over ‖∇w‖₂ = 1
    """
    n = mesh.n
    r_max = 2.0 * n / (n - 2.0)
    if not 2.0 <= r <= r_max:
        raise PreconditionError(f"estimate_B_r needs 2 <= r <= 2n/(n-2) = {r_max:g}, got r={r}")
    ascent = SobolevAscent(mesh, r, k_values=np.ones(mesh.N), params=params)
    result = ascent.maximize(_bump_start(mesh))
    logger.debug(f"B_{r:g} = {result.value:.10g} after {result.iterations} iterations")
    return result.value


def dirichlet_eigenvalue(mesh: RadialMesh) -> float:
    """Smallest eigenvalue of the discrete radial Dirichlet Laplacian."""
    weights = mesh.weights
    kappa = mesh.omega * mesh.faces ** (mesh.n - 1) / mesh.h
    kappa[0] = 0.0
    kappa[-1] *= 2.0
    diag = (kappa[:-1] + kappa[1:]) / weights
    off = -kappa[1:-1] / np.sqrt(weights[:-1] * weights[1:])
    eigenvalues = eigh_tridiagonal(diag, off, eigvals_only=True, select='i', select_range=(0, 0))
    return float(eigenvalues[0])


# ========== Well depth ==========

def small_energy_threshold(p: float, ell: float, K: float, Bp: float) -> float:
    """((p-2)ℓ/(2p))·(ℓ/(2K·B_p))^{2/(p-2)}."""
    return (p - 2.0) * ell / (2.0 * p) * (ell / (2.0 * K * Bp)) ** (2.0 / (p - 2.0))


def well_depth(mesh: RadialMesh, kernel: KernelSpec, params: Optional[OptimizerParams] = None) -> WellReport:
    """
    Compute the potential-well depth d on the simulation mesh.

    Maximizes B = ∫k|w|^p on ℓ‖∇w‖² = 1 from the bump (1 - (r/R)²), then
    d = (½ - 1/p)·B_max^{-2/(p-2)}. Random positive restarts must agree
    within 0.5%.

    Args:
        mesh: Simulation mesh
        kernel: Relaxation kernel (supplies ℓ)
        params: Optimizer settings

    Returns:
        WellReport
    """
    params = params or OptimizerParams()
    spec = mesh.spec
    p = spec.p
    ell = kernel.ell
    if not 0.0 < ell < 1.0:
        raise PreconditionError(f"well_depth needs a kernel with ell in (0, 1), got {ell}")

    logger.info(f"Computing well depth: n={spec.n}, p={p}, N={mesh.N}, ell={ell:.6g}")
    ascent = SobolevAscent(mesh, p, params=params)
    main = ascent.maximize(_bump_start(mesh))

    # Max on ℓA = 1 is ℓ^{-p/2} times the max on A = 1
    def depth(value: float) -> float:
        return (0.5 - 1.0 / p) * (ell ** (-0.5 * p) * value) ** (-2.0 / (p - 2.0))

    d = depth(main.value)
    rng = np.random.default_rng(params.seed)
    restart_values = tuple(depth(ascent.maximize(_random_start(mesh, rng)).value)
                           for _ in range(params.restarts))
    all_values = (d,) + restart_values
    spread = (max(all_values) - min(all_values)) / min(all_values)
    if spread > 0.005:
        logger.warning(f"Well-depth restarts disagree: spread {spread:.3%}")

    B2 = estimate_B_r(mesh, 2.0, params)
    Bp = estimate_B_r(mesh, p, params)
    B2p2 = estimate_B_r(mesh, 2.0 * (p - 1.0), params)

    minimizer = main.field / math.sqrt(ell)
    report = WellReport(
        d=d, B2=B2, Bp=Bp, B2p2=B2p2,
        lambda_star_of_minimizer=lambda_star(mesh, minimizer, ell),
        minimizer_field=minimizer,
        iterations=main.iterations,
        residual=main.residual,
        small_energy_threshold=small_energy_threshold(p, ell, spec.K, Bp),
        converged=main.converged,
        restart_values=restart_values,
        restart_spread=spread,
        ell=ell, p=p, N=mesh.N,
    )
    logger.info(f"Well depth d = {d:.10g} (iterations {main.iterations}, residual {main.residual:.2e}, "
                f"restart spread {spread:.2e})")
    return report


def minimizer_profile(well: WellReport) -> RadialField:
    """Well-depth minimizer normalized to unit sup norm."""
    field = well.minimizer_field
    return field / np.max(np.abs(field))


# ========== Classification ==========

def initial_energy(mesh: RadialMesh, u0: RadialField, v0: Optional[RadialField] = None) -> float:
    """E(0) = ½‖u¹‖² + ½‖∇u⁰‖² - (1/p)∫k|u⁰|^p (no kernel mass at t = 0)."""
    p = mesh.spec.p
    kinetic = 0.0 if v0 is None else 0.5 * mesh.l2_norm_sq(v0)
    return kinetic + 0.5 * float(mesh.grad_sq_norm(u0)) - mesh.weighted_lp_norm(u0, p) / p


def classify(mesh: RadialMesh, u0: RadialField, v0: Optional[RadialField],
             kernel: KernelSpec, well: WellReport) -> Classification:
    """
    Place initial data relative to the potential well.

    W = {E(0) < d, I(u⁰) > 0}, V = {E(0) < d, I(u⁰) < 0}; both require
    u⁰ ≠ 0. Data with E(0) < d on the Nehari manifold is 'boundary'.

    Args:
        mesh: Simulation mesh (the one the well was computed on)
        u0, v0: Initial displacement and velocity
        kernel: Relaxation kernel (supplies ℓ)
        well: Well report

    Returns:
        Classification
    """
    if well.N != mesh.N:
        raise PreconditionError(f"Well computed on N={well.N}, data lives on N={mesh.N}")
    ell = kernel.ell
    E0 = initial_energy(mesh, u0, v0)
    A = float(mesh.grad_sq_norm(u0))
    I0 = ell * A - mesh.weighted_lp_norm(u0, mesh.spec.p)

    if not np.any(u0) or E0 >= well.d:
        membership = WellSet.NEITHER
    elif abs(I0) <= 1e-12 * ell * A:
        membership = WellSet.BOUNDARY
    elif I0 > 0:
        membership = WellSet.W
    else:
        membership = WellSet.V

    return Classification(
        E0=E0, I0=I0, set=membership,
        small_energy_ok=bool(E0 < min(well.d, well.small_energy_threshold)),
        theta=E0 / well.d,
    )


def _bisect(func, lo: float, hi: float, iterations: int = 200) -> Tuple[float, float]:
    """Shrink [lo, hi] around the sign change of func (func(lo) ≤ 0 < func(hi) or reverse)."""
    f_lo = func(lo)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if (func(mid) <= 0) == (f_lo <= 0):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(abs(hi), 1.0):
            break
    return lo, hi


def scale_into(target: WellSet, profile: RadialField, mesh: RadialMesh, kernel: KernelSpec,
               well: WellReport, margin: float = 0.5,
               v0: Optional[RadialField] = None) -> Tuple[float, Classification]:
    """
    Find an amplitude c that puts (c·profile, v0) into W or V.

    W: the largest c ≤ (1-m)λ* with E(0) ≤ (1-m)·min{d, threshold}.
    V: the smallest c ≥ (1+m)λ* with E(0) ≤ (1-m)·d.

    Args:
        target: WellSet.W or WellSet.V
        profile: Nonzero shape
        mesh, kernel, well: Problem context
        margin: Relative safety margin m ∈ (0, 1)
        v0: Initial velocity (zero when omitted)

    Returns:
        (amplitude, re-verified Classification)

    Raises:
        InfeasibleError: no amplitude meets the request
    """
    if target not in (WellSet.W, WellSet.V):
        raise PreconditionError(f"scale_into targets W or V, got {target}")
    if not 0.0 < margin < 1.0:
        raise PreconditionError(f"margin must lie in (0, 1), got {margin}")
    if not np.any(profile):
        raise DegenerateFieldError("scale_into needs a nonzero profile")

    ell = kernel.ell
    p = mesh.spec.p
    lam = lambda_star(mesh, profile, ell)
    A, B = _gradient_and_source(mesh, profile)
    kinetic = 0.0 if v0 is None else 0.5 * mesh.l2_norm_sq(v0)

    def energy_at(c: float) -> float:
        return kinetic + 0.5 * c * c * A - c ** p * B / p

    if target is WellSet.W:
        level = (1.0 - margin) * min(well.d, well.small_energy_threshold)
        if kinetic > level:
            raise InfeasibleError(f"Kinetic energy {kinetic:.6g} alone exceeds the W target level {level:.6g}")
        hi = (1.0 - margin) * lam
        # E increases on [0, λ*] since its peak sits at λ*·ℓ^{-1/(p-2)}
        if energy_at(hi) <= level:
            amplitude = hi
        else:
            amplitude, _ = _bisect(lambda c: energy_at(c) - level, 0.0, hi)
    else:
        level = (1.0 - margin) * well.d
        lo = (1.0 + margin) * lam
        if energy_at(lo) <= level:
            amplitude = lo
        else:
            peak = max(lo, (A / B) ** (1.0 / (p - 2.0)))
            hi = 2.0 * peak
            for _ in range(200):
                if energy_at(hi) <= level:
                    break
                hi *= 2.0
            else:
                raise InfeasibleError("Could not reach E(0) below the V target level")
            _, amplitude = _bisect(lambda c: energy_at(c) - level, peak, hi)

    u0 = amplitude * profile
    result = classify(mesh, u0, v0, kernel, well)
    if result.set is not target:
        raise InfeasibleError(f"Scaled data classified as {result.set.value}, requested {target.value}")
    if target is WellSet.W and result.E0 > level:
        raise InfeasibleError(f"Scaled W data has E(0) = {result.E0:.6g} above level {level:.6g}")
    logger.info(f"Scaled profile into {target.value}: amplitude {amplitude:.10g} "
                f"(lambda* {lam:.6g}), E0 {result.E0:.6g}, theta {result.theta:.4g}")
    return amplitude, result
