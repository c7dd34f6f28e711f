"""
Radial Mesh Module

Cell-centered discretization of the ball B_R ⊂ ℝⁿ (n ≥ 3) for radial fields
u(x) = U(|x|): grid, conservative radial Laplacian, face gradients, and the
weighted norms and inner products the energy functionals are built from.

Every integral carries the full sphere-area factor ω_{n-1}, so computed
constants refer to the genuine n-dimensional ball.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Union

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.special import gamma

from .exceptions import ConfigError, PreconditionError

logger = logging.getLogger(__name__)

# Node values of U(r); a 2-D array holds one field per row
RadialField = npt.NDArray[np.float64]


def sphere_area(n: int) -> float:
    """Surface area ω_{n-1} of the unit sphere in ℝⁿ."""
    return float(2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0))


@dataclass(frozen=True)
class SourceWeight:
    """
    Radial source coefficient k(r) ≥ 0.

    Attributes:
        name: 'constant' (k = c) or 'bump' (k = c·(1 - (r/R)²))
        c: Positive amplitude
    """

    name: str = "constant"
    c: float = 1.0

    PROFILES = ("constant", "bump")

    def __post_init__(self):
        if self.name not in self.PROFILES:
            raise ConfigError(f"Unknown k profile: {self.name}. Supported: {list(self.PROFILES)}")
        if not self.c > 0:
            raise ConfigError(f"k amplitude must be positive (k with zero integral has no Nehari manifold), got {self.c}")

    def __call__(self, r: np.ndarray, R: float) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if self.name == "constant":
            return np.full_like(r, self.c)
        return self.c * (1.0 - (r / R) ** 2)

    @property
    def sup(self) -> float:
        """K = ‖k‖_∞ (attained at r = 0 for both profiles)."""
        return self.c

    def scaled(self, factor: float) -> "SourceWeight":
        return SourceWeight(self.name, self.c * factor)


@dataclass(frozen=True)
class ProblemSpec:
    """
    Problem parameters for the radial viscoelastic wave equation.

    Attributes:
        n: Space dimension (≥ 3)
        R: Ball radius
        p: Source exponent, 2 < p < (2n-2)/(n-2)
        sigma: Damping singularity power, a(r) = r^{-σ}, σ ∈ [0, 2]
        k_profile: Source weight k(r)
    """

    n: int = 3
    R: float = 1.0
    p: float = 3.0
    sigma: float = 1.0
    k_profile: SourceWeight = SourceWeight()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"Dimension n must be an integer >= 3, got {self.n}")
        if not self.R > 0:
            raise ConfigError(f"Ball radius R must be positive, got {self.R}")
        p_max = self.p_upper
        if not 2.0 < self.p < p_max:
            raise ConfigError(f"Exponent p={self.p} must satisfy 2 < p < (2n-2)/(n-2) = {p_max:g} for n={self.n}")
        if not 0.0 <= self.sigma <= 2.0:
            raise ConfigError(f"Damping power sigma={self.sigma} must lie in [0, 2]")

    @property
    def p_upper(self) -> float:
        return (2.0 * self.n - 2.0) / (self.n - 2.0)

    @property
    def K(self) -> float:
        return self.k_profile.sup

    @classmethod
    def from_config(cls, config: Dict) -> "ProblemSpec":
        k = config.get('k', {}) or {}
        return cls(
            n=int(config.get('n', 3)),
            R=float(config.get('R', 1.0)),
            p=float(config.get('p', 3.0)),
            sigma=float(config.get('sigma', 1.0)),
            k_profile=SourceWeight(k.get('profile', 'constant'), float(k.get('c', 1.0))),
        )

    def with_k(self, k_profile: SourceWeight) -> "ProblemSpec":
        return ProblemSpec(self.n, self.R, self.p, self.sigma, k_profile)


class RadialMesh:
    """
    Cell-centered radial grid on [0, R].

    Nodes r_i = (i+½)h avoid the origin, so a(r_i) = r_i^{-σ} and the
    (n-1)/r term stay finite without regularization. The Laplacian is in
    conservative flux form with zero flux at the center and a half-cell
    Dirichlet flux at r = R; it is symmetric with respect to the quadrature
    weights, so inner(ΔU, V) = -(∇U, ∇V) holds to roundoff.
    """

    def __init__(self, spec: ProblemSpec, N: int):
        """
        Initialize mesh.

        Args:
            spec: Problem parameters (dimension, radius, source weight)
            N: Number of cells
        """
        if N < 2:
            raise ConfigError(f"Mesh needs at least 2 cells, got N={N}")
        self.spec = spec
        self.N = int(N)
        self.n = spec.n
        self.R = spec.R
        self.h = spec.R / N
        self.omega = sphere_area(spec.n)

        self.nodes = (np.arange(N) + 0.5) * self.h
        self.faces = np.arange(N + 1) * self.h

        m = self.n - 1
        self._node_pow = self.nodes ** m
        self._face_pow = self.faces ** m
        self.weights = self.omega * self._node_pow * self.h

        # Gradient quadrature over faces; the boundary face gets a half cell
        self.face_weights = self.omega * self._face_pow * self.h
        self.face_weights[0] = 0.0
        self.face_weights[-1] *= 0.5

        self.k_values = spec.k_profile(self.nodes, spec.R)
        self.damping = self.nodes ** (-spec.sigma)

        logger.debug(f"RadialMesh n={self.n} R={self.R} N={self.N} h={self.h:.3e}")

    # ========== Field helpers ==========

    def check(self, *fields: RadialField):
        """Raise if a field does not live on this mesh."""
        for field in fields:
            if np.shape(field)[-1:] != (self.N,):
                raise PreconditionError(f"Field of shape {np.shape(field)} does not match mesh with N={self.N}")

    def zeros(self) -> RadialField:
        return np.zeros(self.N)

    def evaluate(self, func: Callable[[np.ndarray], np.ndarray]) -> RadialField:
        """Sample an analytic radial function at the nodes."""
        return np.asarray(func(self.nodes), dtype=np.float64) * np.ones(self.N)

    def hardy_weights(self, sigma: float) -> np.ndarray:
        """Quadrature weights times r^{-σ}."""
        return self.weights * self.nodes ** (-sigma)

    # ========== Differential operators ==========

    def face_gradients(self, field: RadialField) -> np.ndarray:
        """
        Gradients at the N+1 faces.

        g_0 = 0 (symmetry), g_i = (U_i - U_{i-1})/h, g_N = -U_{N-1}/(h/2).
        Works row-wise on 2-D arrays.
        """
        self.check(field)
        field = np.asarray(field, dtype=np.float64)
        g = np.zeros(field.shape[:-1] + (self.N + 1,))
        g[..., 1:self.N] = np.diff(field, axis=-1) / self.h
        g[..., self.N] = -field[..., -1] / (0.5 * self.h)
        return g

    def laplacian(self, field: RadialField) -> RadialField:
        """Conservative radial Laplacian (ρ_{i+1}^{n-1} g_{i+1} - ρ_i^{n-1} g_i)/(r_i^{n-1} h)."""
        flux = self._face_pow * self.face_gradients(field)
        return np.diff(flux, axis=-1) / (self._node_pow * self.h)

    def laplacian_matrix(self) -> sparse.csr_matrix:
        """Sparse tridiagonal matrix L with L @ U == laplacian(U)."""
        h = self.h
        kappa = self._face_pow / h
        kappa[0] = 0.0
        kappa[-1] = 2.0 * self._face_pow[-1] / h
        volume = self._node_pow * h
        diag = -(kappa[:-1] + kappa[1:]) / volume
        upper = kappa[1:-1] / volume[:-1]
        lower = kappa[1:-1] / volume[1:]
        return sparse.diags([lower, diag, upper], [-1, 0, 1], format='csr')

    def stiffness_matrix(self) -> sparse.csc_matrix:
        """Symmetric positive definite K = -W·L, so U·K·V = (∇U, ∇V)."""
        return (-sparse.diags(self.weights) @ self.laplacian_matrix()).tocsc()

    # ========== Norms and inner products ==========

    def grad_sq_norm(self, field: RadialField) -> Union[float, np.ndarray]:
        """‖∇u‖₂² by face quadrature; row-wise on 2-D arrays."""
        g = self.face_gradients(field)
        return (g * g) @ self.face_weights

    def grad_inner(self, field_a: RadialField, field_b: RadialField) -> float:
        """(∇u, ∇v) by face quadrature."""
        return float((self.face_gradients(field_a) * self.face_gradients(field_b)) @ self.face_weights)

    def weighted_lp_norm(self, field: RadialField, p: float, weight: Optional[Union[SourceWeight, np.ndarray, float]] = None) -> float:
        """
        ∫ k|u|^p dx by midpoint quadrature.

        Args:
            field: Node values
            p: Exponent (≥ 1)
            weight: k profile; defaults to the problem's k, a scalar means constant k
        """
        self.check(field)
        if p < 1:
            raise PreconditionError(f"weighted_lp_norm needs p >= 1, got {p}")
        if weight is None:
            k = self.k_values
        elif isinstance(weight, SourceWeight):
            k = weight(self.nodes, self.R)
        else:
            k = weight
        return float(np.dot(self.weights * k, np.abs(field) ** p))

    def inner(self, field_a: RadialField, field_b: RadialField) -> float:
        """L² inner product Σ w_i A_i B_i."""
        self.check(field_a, field_b)
        return float(np.dot(self.weights, field_a * field_b))

    def inner_hardy(self, field_a: RadialField, field_b: RadialField, sigma: float) -> float:
        """Weighted inner product Σ w_i r_i^{-σ} A_i B_i."""
        self.check(field_a, field_b)
        return float(np.dot(self.hardy_weights(sigma), field_a * field_b))

    def l2_norm_sq(self, field: RadialField) -> float:
        return self.inner(field, field)

    def hardy_norm_sq(self, field: RadialField, sigma: float) -> float:
        """‖u/|·|^{σ/2}‖₂²; finite because nodes avoid r = 0."""
        if not 0.0 <= sigma <= 2.0:
            raise PreconditionError(f"hardy_norm_sq needs sigma in [0, 2], got {sigma}")
        return self.inner_hardy(field, field, sigma)

    def linf_norm(self, field: RadialField) -> float:
        return float(np.max(np.abs(field))) if len(field) else 0.0

    def volume(self) -> float:
        """Σ w_i, the discrete volume of B_R."""
        return float(np.sum(self.weights))


# ========== Initial profiles ==========

def make_profile(mesh: RadialMesh, name: str, width: float = 0.5) -> RadialField:
    """
    Builtin radial profile families, all vanishing at r = R.

    Args:
        mesh: Target mesh
        name: 'bump', 'cosine', 'gaussian' or 'zero'
        width: Relative width for the gaussian profile

    Returns:
        Node values
    """
    s = mesh.nodes / mesh.R
    if name == "bump":
        return 1.0 - s ** 2
    if name == "cosine":
        return np.cos(0.5 * np.pi * s)
    if name == "gaussian":
        return np.exp(-(s / width) ** 2) - math.exp(-1.0 / width ** 2)
    if name == "zero":
        return mesh.zeros()
    raise ConfigError(f"Unknown profile: {name}. Supported: bump, cosine, gaussian, zero, ground_state")
