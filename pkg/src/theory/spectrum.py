"""
Limiting spectral law of D^2 and its free-probability transforms.

Features:
- Atomic SpectralLaw with d*, support endpoints, variance and half-width
- Cauchy transform G(z) = E[1/(z + D^2)], its derivative and functional inverse
- R-transform R(z) = G^{-1}(z) - 1/z, its derivative and antiderivative
- Free cumulants of -D^2 by power-series coefficient matching
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, root_validator, validator
from scipy.integrate import quad as integrate
from scipy.optimize import bisect, brentq

from src.utils.errors import DomainError

logger = logging.getLogger(__name__)


class SpectralLaw(BaseModel):
    """
    Compactly supported law of D^2 given by atoms (dsq, weight).

    A single-atom law is accepted and flagged as degenerate (kappa2 = 0); the
    transforms then reduce to their closed forms.
    """
    atoms: List[Tuple[float, float]] = Field(..., description="(dsq, weight) pairs")
    d_star: float = 0.0
    d_minus: float = 0.0
    d_plus: float = 0.0
    kappa2: float = 0.0
    eps: float = 0.0

    _dsq: np.ndarray = PrivateAttr()
    _weights: np.ndarray = PrivateAttr()
    _centered: np.ndarray = PrivateAttr()

    class Config:
        allow_mutation = False

    @validator("atoms")
    def normalize(cls, atoms):
        if not atoms:
            raise ValueError("a spectral law needs at least one atom")
        dsq = np.array([float(d) for d, _ in atoms])
        weights = np.array([float(w) for _, w in atoms])
        if not np.all(np.isfinite(dsq)) or np.any(dsq < 0):
            raise ValueError("D^2 atoms must be finite and nonnegative")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("atom weights must be strictly positive")
        weights = weights / weights.sum()
        return [(float(d), float(w)) for d, w in zip(dsq, weights)]

    @root_validator(skip_on_failure=True)
    def derive_summary(cls, values):
        dsq = np.array([d for d, _ in values["atoms"]])
        weights = np.array([w for _, w in values["atoms"]])
        d_star = float(weights @ dsq)
        if d_star <= 0:
            raise ValueError("the mean of D^2 must be strictly positive")
        values["d_star"] = d_star
        values["d_minus"] = float(dsq.min())
        values["d_plus"] = float(dsq.max())
        values["kappa2"] = float(weights @ (dsq - d_star) ** 2)
        values["eps"] = max(d_star - values["d_minus"], values["d_plus"] - d_star)
        return values

    def __init__(self, **data):
        super().__init__(**data)
        self._dsq = np.array([d for d, _ in self.atoms])
        self._weights = np.array([w for _, w in self.atoms])
        self._centered = self._dsq - self.d_star

    @property
    def dsq(self) -> np.ndarray:
        return self._dsq

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def centered(self) -> np.ndarray:
        """Atoms minus d*."""
        return self._centered

    @property
    def degenerate(self) -> bool:
        """True for a point mass (kappa2 = 0)."""
        return self.d_minus == self.d_plus

    @property
    def g_at_lower_edge(self) -> float:
        # d_minus is always an atom, so G has a pole there
        return math.inf

    def expect(self, values: np.ndarray) -> float:
        """E over the law of an array evaluated at the atoms."""
        return float(self._weights @ values)


class LawSpec(BaseModel):
    """Spectral-law section of an experiment configuration."""
    kind: str = Field("two_point", description="point_mass | two_point | uniform_grid | atoms")
    d_star: float = Field(1.0, gt=0)
    e: float = Field(0.05, ge=0)
    k: int = Field(5, ge=1)
    atoms: Optional[List[Tuple[float, float]]] = None

    class Config:
        extra = "forbid"

    @validator("kind")
    def known_kind(cls, kind):
        if kind not in ("point_mass", "two_point", "uniform_grid", "atoms"):
            raise ValueError(f"unknown spectral law kind '{kind}'")
        return kind

    @root_validator(skip_on_failure=True)
    def kind_parameters(cls, values):
        if values["kind"] in ("two_point", "uniform_grid") and values["e"] >= values["d_star"]:
            raise ValueError("the window half-width e must be below d_star (D^2 >= 0)")
        if values["kind"] == "atoms" and not values.get("atoms"):
            raise ValueError("kind 'atoms' needs a non-empty atoms list")
        return values


def point_mass(d_star: float) -> SpectralLaw:
    return SpectralLaw(atoms=[(d_star, 1.0)])


def two_point(d_star: float, e: float) -> SpectralLaw:
    """Equal mass at d* - e and d* + e."""
    if e == 0:
        return point_mass(d_star)
    return SpectralLaw(atoms=[(d_star - e, 0.5), (d_star + e, 0.5)])


def uniform_grid(d_star: float, e: float, k: int) -> SpectralLaw:
    """k equally weighted atoms evenly spaced on [d* - e, d* + e]."""
    if k == 1 or e == 0:
        return point_mass(d_star)
    grid = np.linspace(d_star - e, d_star + e, k)
    return SpectralLaw(atoms=[(float(d), 1.0 / k) for d in grid])


def law_from_spec(spec: LawSpec) -> SpectralLaw:
    """Build the law described by a configuration section."""
    if spec.kind == "point_mass":
        return point_mass(spec.d_star)
    if spec.kind == "two_point":
        return two_point(spec.d_star, spec.e)
    if spec.kind == "uniform_grid":
        return uniform_grid(spec.d_star, spec.e, spec.k)
    return SpectralLaw(atoms=spec.atoms)


def _check_pole(law: SpectralLaw, z) -> np.ndarray:
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr <= -law.d_minus):
        raise DomainError(f"Cauchy transform needs z > -d_minus = {-law.d_minus}, got {z}")
    return z_arr


def cauchy_g(law: SpectralLaw, z):
    """G(z) = E[1/(z + D^2)] for z > -d_minus."""
    z_arr = _check_pole(law, z)
    out = (1.0 / (z_arr[..., None] + law.dsq)) @ law.weights
    return float(out) if np.ndim(out) == 0 else out


def cauchy_g_prime(law: SpectralLaw, z):
    """G'(z) = -E[1/(z + D^2)^2]."""
    z_arr = _check_pole(law, z)
    out = -((1.0 / (z_arr[..., None] + law.dsq) ** 2) @ law.weights)
    return float(out) if np.ndim(out) == 0 else out


def cauchy_g_inverse(law: SpectralLaw, y: float) -> float:
    """
    Functional inverse of G on (0, G(-d_minus)) = (0, inf).

    Brackets the root just right of the pole, bisects to 1e-13 and polishes with
    two Newton steps using the closed-form derivative.
    """
    if not (math.isfinite(y) and y > 0):
        raise DomainError(f"G^{{-1}} is defined on (0, inf), got {y}")
    if law.degenerate:
        return 1.0 / y - law.d_star

    def excess(z: float) -> float:
        return cauchy_g(law, z) - y

    offset = 1e-9 * max(1.0, law.d_plus)
    lo = -law.d_minus + offset
    while excess(lo) <= 0:
        offset *= 1e-3
        if offset < 1e-300:
            raise DomainError(f"G^{{-1}}({y}) lies too close to the pole at {-law.d_minus}")
        lo = -law.d_minus + offset

    # G(z) <= 1/(z + d_minus), so this already satisfies G(hi) <= y
    hi = max(lo + offset, 1.0 / y - law.d_minus)
    while excess(hi) >= 0:
        hi = lo + 2.0 * (hi - lo)

    z = bisect(excess, lo, hi, xtol=1e-13, maxiter=400)
    for _ in range(2):
        step = excess(z) / cauchy_g_prime(law, z)
        candidate = z - step
        if candidate > -law.d_minus and abs(excess(candidate)) <= abs(excess(z)):
            z = candidate
    return float(z)


def _r_shift(law: SpectralLaw, z: float) -> float:
    """
    t = R(z) + d* for z > 0.

    Solves E[1/(1 + z(w + D^2))] = 1 for w = R(z), rewritten in t = w + d* so the
    small-z regime carries no cancellation against 1/z.
    """
    u = law.centered

    def psi(t: float) -> float:
        s = t + u
        return -float(law.weights @ (s / (1.0 + z * s)))

    # denominators stay positive for t > -1/z - min(u)
    t_floor = -1.0 / z - float(u.min())
    if t_floor < 0:
        lo = 0.0
    else:
        lo = t_floor + 1e-12 * max(1.0, abs(t_floor))
    if psi(lo) <= 0:
        return lo
    return float(brentq(psi, lo, law.d_star, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500))


def r_transform(law: SpectralLaw, z: float) -> float:
    """R(z) = G^{-1}(z) - 1/z, continued to R(0) = -d*."""
    if not math.isfinite(z) or z < 0:
        raise DomainError(f"R-transform is defined on [0, inf), got {z}")
    if z == 0 or law.degenerate:
        return -law.d_star
    return _r_shift(law, z) - law.d_star


def r_transform_prime(law: SpectralLaw, z: float) -> float:
    """R'(z) by implicit differentiation; R'(0) = kappa2."""
    if not math.isfinite(z) or z < 0:
        raise DomainError(f"R-transform is defined on [0, inf), got {z}")
    if law.degenerate:
        return 0.0
    if z == 0:
        return law.kappa2
    s = _r_shift(law, z) + law.centered
    q2 = (1.0 + z * s) ** 2
    return float((law.weights @ (s * s / q2)) / (law.weights @ (1.0 / q2)))


def r_integral(law: SpectralLaw, x: float) -> float:
    """Integral of R over [0, x]."""
    if not math.isfinite(x) or x < 0:
        raise DomainError(f"R-transform integral needs x in [0, inf), got {x}")
    if x == 0:
        return 0.0
    if law.degenerate:
        return -law.d_star * x
    shift, _ = integrate(lambda z: _r_shift(law, z) if z > 0 else 0.0, 0.0, x,
                         epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(shift - law.d_star * x)


def spectral_moments(law: SpectralLaw, K: int) -> np.ndarray:
    """Central moments mu_1..mu_K of -D^2."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    x = -law.centered
    return np.array([law.expect(x ** k) for k in range(1, K + 1)])


def free_cumulants(law: SpectralLaw, K: int) -> List[float]:
    """
    Free cumulants kappa_1..kappa_K of -D^2.

    Coefficient matching in M(z) = 1 + sum_s kappa_s z^s M(z)^s, with M the moment
    series of the centered variable; kappa_1 is then shifted to -d*.
    """
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    series = np.zeros(K + 1)
    series[0] = 1.0
    series[1:] = spectral_moments(law, K)

    # powers[s] = M(z)^s truncated at degree K
    powers = [np.zeros(K + 1) for _ in range(K + 1)]
    powers[0][0] = 1.0
    for s in range(1, K + 1):
        powers[s] = np.convolve(powers[s - 1], series)[: K + 1]

    cumulants = np.zeros(K + 1)
    for n in range(1, K + 1):
        cumulants[n] = series[n] - sum(cumulants[s] * powers[s][n - s] for s in range(1, n))
    cumulants[1] = -law.d_star
    return [float(c) for c in cumulants[1:]]


def r_series(cumulants: List[float], z: float) -> float:
    """Truncated series sum_k kappa_k z^(k-1)."""
    return float(sum(c * z ** k for k, c in enumerate(cumulants)))
