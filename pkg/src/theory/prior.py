"""
Signal priors and the scalar Gaussian channel Y = X* + Z/sqrt(gamma).

Features:
- Finite-support AtomPrior (centered at construction) and a GaussianPrior reference
- Posterior-mean denoiser and its derivative, evaluated with max-shifted log-weights
- mmse, its derivative, the channel mutual information and log c_pi
- The stationary-VAMP nonlinearity F(p, beta) built from a solved fixed point
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, List, Optional, Tuple, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from pydantic import BaseModel, Field, PrivateAttr, root_validator, validator
from scipy.special import logsumexp

from src.utils.config import QUAD_ORDER
from src.utils.errors import DomainError

if TYPE_CHECKING:
    from src.theory.replica import FixedPoint

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True, eq=False)
class Quadrature:
    """
    Gauss-Hermite rule for expectations over Z ~ N(0, 1).

    E[g(Z)] ~= sum_j weights[j] * g(nodes[j]), with weights summing to one.
    """
    nodes: np.ndarray
    weights: np.ndarray
    order: int = field(default=0)

    @classmethod
    def gauss_hermite(cls, order: int) -> "Quadrature":
        if order < 2:
            raise DomainError(f"quadrature order must be at least 2, got {order}")
        nodes, weights = hermegauss(order)
        # hermegauss weights sum to sqrt(2*pi)
        weights = weights / weights.sum()
        return cls(nodes=nodes, weights=weights, order=order)

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Contract the last axis of values (evaluated at the nodes) with the weights."""
        return np.asarray(values) @ self.weights


@lru_cache(maxsize=8)
def default_quadrature(order: Optional[int] = None) -> Quadrature:
    """Cached Gauss-Hermite rule (order QUAD_ORDER unless given)."""
    return Quadrature.gauss_hermite(order or QUAD_ORDER)


class AtomPrior(BaseModel):
    """
    Finite-support prior: a list of (value, weight) atoms.

    Weights are normalized and the values centered at construction, so the prior
    always has mean zero; rho_star is its second moment.
    """
    atoms: List[Tuple[float, float]] = Field(..., description="(value, weight) pairs")
    rho_star: float = Field(0.0, description="Second moment, computed")
    c_bound: float = Field(0.0, description="Support bound: |value| <= sqrt(c_bound)")

    _values: np.ndarray = PrivateAttr()
    _weights: np.ndarray = PrivateAttr()
    _log_weights: np.ndarray = PrivateAttr()

    class Config:
        allow_mutation = False

    @validator("atoms")
    def normalize_and_center(cls, atoms):
        if not atoms:
            raise ValueError("a prior needs at least one atom")
        values = np.array([float(v) for v, _ in atoms])
        weights = np.array([float(w) for _, w in atoms])
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(weights)):
            raise ValueError("atom values and weights must be finite")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be strictly positive")
        weights = weights / weights.sum()
        values = values - float(weights @ values)
        if np.unique(values).size < 2:
            raise ValueError("a prior needs at least two distinct atoms (zero variance otherwise)")
        return [(float(v), float(w)) for v, w in zip(values, weights)]

    @root_validator(skip_on_failure=True)
    def derive_moments(cls, values):
        atoms = values["atoms"]
        xs = np.array([v for v, _ in atoms])
        ws = np.array([w for _, w in atoms])
        values["rho_star"] = float(ws @ xs ** 2)
        values["c_bound"] = max(float(values.get("c_bound") or 0.0), float(np.max(xs ** 2)))
        return values

    def __init__(self, **data):
        super().__init__(**data)
        self._values = np.array([v for v, _ in self.atoms])
        self._weights = np.array([w for _, w in self.atoms])
        self._log_weights = np.log(self._weights)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def log_weights(self) -> np.ndarray:
        return self._log_weights

    @property
    def entropy(self) -> float:
        """Shannon entropy of the atom distribution (nats)."""
        return float(-(self._weights @ self._log_weights))

    @property
    def size(self) -> int:
        return int(self._values.size)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self._values, size=n, p=self._weights)


class GaussianPrior(BaseModel):
    """N(0, rho_star) reference prior; every scalar-channel quantity has a closed form."""
    rho_star: float = Field(1.0, gt=0)

    class Config:
        allow_mutation = False

    @property
    def c_bound(self) -> float:
        return math.inf

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(self.rho_star), size=n)


Prior = Union[AtomPrior, GaussianPrior]


class PriorSpec(BaseModel):
    """Prior section of an experiment configuration."""
    kind: str = Field("rademacher", description="rademacher | three_point | atoms | gaussian")
    p0: Optional[float] = Field(None, description="Mass at zero for three_point")
    atoms: Optional[List[Tuple[float, float]]] = None
    rho_star: float = Field(1.0, gt=0, description="Variance of the gaussian reference")

    class Config:
        extra = "forbid"

    @validator("kind")
    def known_kind(cls, kind):
        if kind not in ("rademacher", "three_point", "atoms", "gaussian"):
            raise ValueError(f"unknown prior kind '{kind}'")
        return kind

    @root_validator(skip_on_failure=True)
    def kind_parameters(cls, values):
        kind = values["kind"]
        if kind == "three_point":
            p0 = values.get("p0")
            if p0 is None or not 0.0 <= p0 < 1.0:
                raise ValueError("three_point needs p0 in [0, 1)")
        if kind == "atoms" and not values.get("atoms"):
            raise ValueError("kind 'atoms' needs a non-empty atoms list")
        return values


def rademacher() -> AtomPrior:
    """Uniform prior on {-1, +1}."""
    return AtomPrior(atoms=[(-1.0, 0.5), (1.0, 0.5)])


def three_point(p0: float) -> AtomPrior:
    """Mass p0 at zero and (1-p0)/2 at +-1/sqrt(1-p0); unit variance."""
    if not 0.0 <= p0 < 1.0:
        raise DomainError(f"three_point needs p0 in [0, 1), got {p0}")
    a = 1.0 / math.sqrt(1.0 - p0)
    atoms = [(-a, (1.0 - p0) / 2), (a, (1.0 - p0) / 2)]
    if p0 > 0:
        atoms.insert(1, (0.0, p0))
    return AtomPrior(atoms=atoms)


def prior_from_spec(spec: PriorSpec) -> Prior:
    """Build the prior described by a configuration section."""
    if spec.kind == "rademacher":
        return rademacher()
    if spec.kind == "three_point":
        return three_point(spec.p0)
    if spec.kind == "gaussian":
        return GaussianPrior(rho_star=spec.rho_star)
    return AtomPrior(atoms=spec.atoms)


def _check_gamma(gamma: float, allow_zero: bool = False) -> None:
    if not math.isfinite(gamma) or gamma < 0 or (gamma == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise DomainError(f"gamma must be {bound}, got {gamma}")


def _posterior_moments(prior: AtomPrior, y: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of X* given Y = y, broadcast over y."""
    x = prior.values
    logits = prior.log_weights - 0.5 * gamma * (y[..., None] - x) ** 2
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ x
    var = np.maximum(p @ (x * x) - mean * mean, 0.0)
    return mean, var


def denoise(prior: Prior, y: ArrayLike, gamma: float) -> Tuple[ArrayLike, ArrayLike]:
    """
    Posterior-mean denoiser of the scalar channel.

    Args:
        prior: Signal prior
        y: Observation(s); arrays are processed entrywise
        gamma: Channel SNR, > 0

    Returns:
        (f, f_prime) with f = E[X*|Y=y] and f_prime = gamma * Var[X*|Y=y]
    """
    _check_gamma(gamma)
    y_arr = np.asarray(y, dtype=float)
    if isinstance(prior, GaussianPrior):
        shrink = prior.rho_star * gamma / (1.0 + prior.rho_star * gamma)
        f = shrink * y_arr
        f_prime = np.full_like(y_arr, shrink)
    else:
        f, var = _posterior_moments(prior, y_arr, gamma)
        f_prime = gamma * var
    if np.ndim(y) == 0:
        return float(f), float(f_prime)
    return f, f_prime


def _channel_grid(prior: AtomPrior, gamma: float, quad: Quadrature) -> np.ndarray:
    # rows: atoms x_a, columns: quadrature nodes; Y = x_a + Z/sqrt(gamma)
    return prior.values[:, None] + quad.nodes[None, :] / math.sqrt(gamma)


def mmse(prior: Prior, gamma: float, quad: Optional[Quadrature] = None) -> float:
    """E[Var[X*|Y]] for the scalar channel at SNR gamma."""
    _check_gamma(gamma)
    if isinstance(prior, GaussianPrior):
        return prior.rho_star / (1.0 + prior.rho_star * gamma)
    quad = quad or default_quadrature()
    _, var = _posterior_moments(prior, _channel_grid(prior, gamma, quad), gamma)
    return float(prior.weights @ quad.expect(var))


def mmse_prime(prior: Prior, gamma: float, quad: Optional[Quadrature] = None) -> float:
    """Derivative of mmse in gamma: -E[Var[X*|Y]^2]."""
    _check_gamma(gamma)
    if isinstance(prior, GaussianPrior):
        return -(prior.rho_star / (1.0 + prior.rho_star * gamma)) ** 2
    quad = quad or default_quadrature()
    _, var = _posterior_moments(prior, _channel_grid(prior, gamma, quad), gamma)
    return float(-(prior.weights @ quad.expect(var ** 2)))


def log_cpi(prior: Prior, a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """log sum_i w_i exp(a x_i^2 + b x_i); broadcasts over a and b."""
    if isinstance(prior, GaussianPrior):
        scale = 1.0 - 2.0 * np.asarray(a, dtype=float) * prior.rho_star
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(
                scale > 0,
                -0.5 * np.log(np.where(scale > 0, scale, 1.0))
                + np.asarray(b, dtype=float) ** 2 * prior.rho_star / (2.0 * np.where(scale > 0, scale, 1.0)),
                np.inf,
            )
        return float(out) if np.ndim(out) == 0 else out
    a_arr = np.asarray(a, dtype=float)[..., None]
    b_arr = np.asarray(b, dtype=float)[..., None]
    x = prior.values
    out = logsumexp(a_arr * x * x + b_arr * x, axis=-1, b=prior.weights)
    return float(out) if np.ndim(out) == 0 else out


def expected_log_cpi(prior: Prior, gamma: float, quad: Optional[Quadrature] = None) -> float:
    """E log c_pi(-gamma/2, gamma X* + sqrt(gamma) Z)."""
    _check_gamma(gamma, allow_zero=True)
    if gamma == 0:
        return 0.0
    if isinstance(prior, GaussianPrior):
        rg = prior.rho_star * gamma
        return 0.5 * rg - 0.5 * math.log1p(rg)
    quad = quad or default_quadrature()
    b = gamma * prior.values[:, None] + math.sqrt(gamma) * quad.nodes[None, :]
    vals = log_cpi(prior, -0.5 * gamma, b)
    return float(prior.weights @ quad.expect(vals))


def mutual_info(prior: Prior, gamma: float, quad: Optional[Quadrature] = None) -> float:
    """Mutual information I(X*; Y) of the scalar channel, in nats."""
    _check_gamma(gamma, allow_zero=True)
    if gamma == 0:
        return 0.0
    if isinstance(prior, GaussianPrior):
        return 0.5 * math.log1p(prior.rho_star * gamma)
    return 0.5 * gamma * prior.rho_star - expected_log_cpi(prior, gamma, quad)


def _stationary_coefficients(fp: "FixedPoint") -> Tuple[float, float, float]:
    eta, gamma = fp.eta_star, fp.gamma_star
    if not (gamma > 0 and eta > gamma and math.isfinite(eta)):
        raise DomainError(f"invalid fixed point: need eta* > gamma* > 0, got eta*={eta}, gamma*={gamma}")
    gap = eta - gamma
    return eta / gap, gamma / gap, gamma


def f_stationary(prior: Prior, p: ArrayLike, beta: ArrayLike, fp: "FixedPoint") -> ArrayLike:
    """
    Stationary-VAMP nonlinearity.

    F(p, beta) = [eta/(eta-gamma)] f(p+beta, gamma) - [gamma/(eta-gamma)] p - [eta/(eta-gamma)] beta
    at (eta, gamma) = (eta*, gamma*).
    """
    c_eta, c_gamma, gamma = _stationary_coefficients(fp)
    p_arr = np.asarray(p, dtype=float)
    beta_arr = np.asarray(beta, dtype=float)
    f, _ = denoise(prior, p_arr + beta_arr, gamma)
    out = c_eta * np.asarray(f) - c_gamma * p_arr - c_eta * beta_arr
    return float(out) if np.ndim(out) == 0 else out


def f_stationary_prime(prior: Prior, p: ArrayLike, beta: ArrayLike, fp: "FixedPoint") -> ArrayLike:
    """Partial derivative of F in p."""
    c_eta, c_gamma, gamma = _stationary_coefficients(fp)
    p_arr = np.asarray(p, dtype=float)
    _, f_prime = denoise(prior, p_arr + np.asarray(beta, dtype=float), gamma)
    out = c_eta * np.asarray(f_prime) - c_gamma
    return float(out) if np.ndim(out) == 0 else out
