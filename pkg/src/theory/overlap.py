"""
Cross-time overlaps of stationary VAMP.

The overlap map g(delta) = E[E[F(P'_delta, X*) | G, X*]^2] with
P'_delta = sqrt(kappa* delta + b*) G + sqrt(sigma*^2 - kappa* delta) G' drives the
recursion delta_{s+1,t+1} = g(delta_{st}); delta_table fills the covariance Delta_T.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from src.theory.prior import (
    AtomPrior,
    Prior,
    Quadrature,
    default_quadrature,
    f_stationary,
    f_stationary_prime,
)
from src.theory.replica import FixedPoint
from src.utils.config import QUAD2_ORDER
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

# relative slack on delta <= delta* for rounding in the recursion
_DELTA_SLACK = 1e-10


class OverlapTable(BaseModel):
    """Symmetric T x T table of cross-time overlaps delta_{st}."""
    T: int
    delta: List[List[float]]
    delta_star: float
    delta_12: float
    min_eigenvalue: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.delta)

    def off_diagonal(self, lag: int = 1) -> np.ndarray:
        """delta_{t, t+lag} for t = 1..T-lag."""
        return np.diag(self.matrix, k=lag)


def _prior_grid(prior: Prior, quad: Quadrature) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(prior, AtomPrior):
        return prior.values, prior.weights
    return math.sqrt(prior.rho_star) * quad.nodes, quad.weights


def _split(fp: FixedPoint, delta: float) -> Tuple[float, float]:
    if not (-_DELTA_SLACK * fp.delta_star <= delta <= fp.delta_star * (1 + _DELTA_SLACK)):
        raise DomainError(f"delta must lie in [0, delta*={fp.delta_star}], got {delta}")
    delta = min(max(delta, 0.0), fp.delta_star)
    common = math.sqrt(fp.kappa_star * delta + fp.b_star)
    spread = math.sqrt(max(fp.sigma_sq_star - fp.kappa_star * delta, 0.0))
    return common, spread


def _conditional_mean_square(prior: Prior, fp: FixedPoint, delta: float, quad2: Quadrature, fn) -> float:
    common, spread = _split(fp, delta)
    xs, ws = _prior_grid(prior, quad2)
    # axes: atom, G node, G' node
    p = common * quad2.nodes[None, :, None] + spread * quad2.nodes[None, None, :]
    values = fn(prior, p, xs[:, None, None], fp)
    inner = quad2.expect(values)
    return float(ws @ quad2.expect(inner ** 2))


def overlap_map_g(prior: Prior, fp: FixedPoint, delta: float, quad2: Optional[Quadrature] = None) -> float:
    """g(delta) for 0 <= delta <= delta*."""
    quad2 = quad2 or default_quadrature(QUAD2_ORDER)
    return _conditional_mean_square(prior, fp, delta, quad2, f_stationary)


def overlap_map_gprime(prior: Prior, fp: FixedPoint, delta: float, quad2: Optional[Quadrature] = None) -> float:
    """g'(delta) = kappa* E[E[F'(P'_delta, X*) | G, X*]^2]."""
    quad2 = quad2 or default_quadrature(QUAD2_ORDER)
    return fp.kappa_star * _conditional_mean_square(prior, fp, delta, quad2, f_stationary_prime)


def gprime_at_star(prior: Prior, fp: FixedPoint, quad: Optional[Quadrature] = None) -> float:
    """g'(delta*) = kappa* E[F'(P, X*)^2] with P ~ N(0, 1/gamma*)."""
    quad = quad or default_quadrature()
    xs, ws = _prior_grid(prior, quad)
    p = quad.nodes / math.sqrt(fp.gamma_star)
    values = f_stationary_prime(prior, p[None, :], xs[:, None], fp)
    return fp.kappa_star * float(ws @ quad.expect(values ** 2))


def first_row_overlap(prior: Prior, fp: FixedPoint, quad: Optional[Quadrature] = None) -> float:
    """delta_12 = E_X[E_P[F(P, X*)]^2] with P ~ N(0, 1/gamma*) independent of X*."""
    quad = quad or default_quadrature()
    xs, ws = _prior_grid(prior, quad)
    p = quad.nodes / math.sqrt(fp.gamma_star)
    conditional = quad.expect(f_stationary(prior, p[None, :], xs[:, None], fp))
    return float(ws @ conditional ** 2)


def delta_table(prior: Prior, fp: FixedPoint, T: int, quad2: Optional[Quadrature] = None,
                quad: Optional[Quadrature] = None) -> OverlapTable:
    """
    Fill Delta_T from delta_ss = delta*, delta_1t = delta_12 and delta_{s+1,t+1} = g(delta_st).

    Off-diagonal entries depend only on min(s, t): delta_{s,t} = g^{(s-1)}(delta_12).
    """
    if T < 2:
        raise DomainError(f"delta table needs T >= 2, got {T}")
    base = first_row_overlap(prior, fp, quad)
    iterates = [min(base, fp.delta_star)]
    for _ in range(T - 2):
        iterates.append(min(overlap_map_g(prior, fp, iterates[-1], quad2), fp.delta_star))

    table = np.empty((T, T))
    for s in range(T):
        for t in range(T):
            table[s, t] = fp.delta_star if s == t else iterates[min(s, t)]
    min_eig = float(np.linalg.eigvalsh(table).min())
    if min_eig < -1e-9:
        logger.warning(f"⚠️  Overlap table is not positive semidefinite (min eigenvalue {min_eig:.3e})")
    return OverlapTable(T=T, delta=table.tolist(), delta_star=fp.delta_star, delta_12=base,
                        min_eigenvalue=min_eig)
