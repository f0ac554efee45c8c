"""
Replica-symmetric fixed point, potentials and state evolution.

Features:
- Fixed-point solver for eta^{-1} = mmse(gamma), gamma = -R(eta^{-1}) with damping and
  bisection fallbacks and multi-start candidate selection by minimal i_RS
- Derived scalar and auxiliary parameters (delta*, kappa*, b*, a*, c*, e*, alpha, pi*)
- i_RS with gradient and Hessian, Psi_RS
- Identity and small-eps expansion reports
- Deterministic VAMP state evolution
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, validator
from scipy.optimize import brentq

from src.theory.prior import (
    AtomPrior,
    Prior,
    Quadrature,
    default_quadrature,
    expected_log_cpi,
    f_stationary,
    f_stationary_prime,
    mmse,
    mmse_prime,
    mutual_info,
)
from src.theory.spectrum import (
    SpectralLaw,
    cauchy_g,
    r_integral,
    r_transform,
    r_transform_prime,
)
from src.utils.config import (
    FALLBACK_DAMPING,
    FIXED_POINT_DAMPING,
    FIXED_POINT_MAX_ITER,
    FIXED_POINT_TOL,
    RESIDUAL_TOL,
    SMALL_EPS_CONSTANT,
)
from src.utils.errors import ConvergenceError, DomainError, StateEvolutionError
from src.utils.observability import traceable

logger = logging.getLogger(__name__)

# consecutive sign flips of the increment that count as oscillation
_OSCILLATION_WINDOW = 8


class SolverOptions(BaseModel):
    """Fixed-point solver settings."""
    damping: float = Field(FIXED_POINT_DAMPING, gt=0, le=1)
    tol: float = Field(FIXED_POINT_TOL, gt=0)
    max_iter: int = Field(FIXED_POINT_MAX_ITER, ge=1)
    starts: Optional[List[float]] = Field(None, description="Initial eta^{-1} values; default [rho*]")
    fallback: bool = Field(True, description="Retry with damping 0.5, then bisection")

    class Config:
        extra = "forbid"

    @validator("starts")
    def nonnegative_starts(cls, starts):
        if starts is not None:
            if not starts:
                raise ValueError("starts must be non-empty when given")
            if any(s < 0 for s in starts):
                raise ValueError("every start must lie in [0, rho*]")
        return starts


class FixedPoint(BaseModel):
    """Solved fixed point (eta*^{-1}, gamma*) with every derived parameter."""
    eta_inv_star: float
    gamma_star: float
    residual: float
    delta_star: float
    kappa_star: float
    sigma_sq_star: float
    b_star: float
    a_star: float
    c_star: float
    e_star: float
    alpha_A: float
    alpha_B: float
    pi_star: float
    i_rs: float
    psi_rs: float
    degenerate: bool = False
    method: str = "iteration"
    iterations: int = 0
    contraction: Optional[float] = None
    candidates: List[Tuple[float, float, float]] = Field(
        default_factory=list, description="(eta_inv, gamma, i_rs) for each distinct fixed point found"
    )

    class Config:
        allow_mutation = False

    @property
    def eta_star(self) -> float:
        return 1.0 / self.eta_inv_star

    def summary(self) -> Dict[str, float]:
        """The CSV row of a fixed-point run."""
        return {
            "eta_inv_star": self.eta_inv_star,
            "gamma_star": self.gamma_star,
            "delta_star": self.delta_star,
            "kappa_star": self.kappa_star,
            "b_star": self.b_star,
            "i_rs": self.i_rs,
            "psi_rs": self.psi_rs,
            "residual": self.residual,
        }


class StateEvolution(BaseModel):
    """
    State-evolution parameters per iteration t = 1..T.

    Row t holds gamma_{1,t}, gamma_{2,t}, eta_{2,t} and eta1 = eta_{1,t+1}, the
    precision of the denoiser output produced at iteration t.
    """
    gamma1: List[float]
    eta1: List[float]
    gamma2: List[float]
    eta2: List[float]
    init_mode: str = "noninformative"

    @property
    def T(self) -> int:
        return len(self.gamma1)

    @property
    def eta1_inv(self) -> np.ndarray:
        return 1.0 / np.asarray(self.eta1)

    @property
    def eta2_inv(self) -> np.ndarray:
        return 1.0 / np.asarray(self.eta2)

    @classmethod
    def constant(cls, fp: FixedPoint, T: int) -> "StateEvolution":
        """Exact stationary parameters (gamma*, eta*, eta* - gamma*, eta*) for T iterations."""
        eta = fp.eta_star
        return cls(
            gamma1=[fp.gamma_star] * T,
            eta1=[eta] * T,
            gamma2=[eta - fp.gamma_star] * T,
            eta2=[eta] * T,
            init_mode="stationary",
        )


class IdentityReport(BaseModel):
    """Absolute residuals of the closed-form identities at a fixed point."""
    residuals: Dict[str, float]
    degenerate: bool = False

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


class SmallEpsCheck(BaseModel):
    name: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool


class SmallEpsReport(BaseModel):
    checks: List[SmallEpsCheck]
    constant: float

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def fixed_point_map(prior: Prior, law: SpectralLaw, x: float, quad: Optional[Quadrature] = None) -> float:
    """h(x) = mmse(-R(x)) on [0, rho*]."""
    return mmse(prior, -r_transform(law, x), quad)


def i_rs(prior: Prior, law: SpectralLaw, eta_inv: float, gamma: float,
         quad: Optional[Quadrature] = None) -> float:
    """Replica-symmetric potential i(gamma) - 1/2 int_0^{eta^{-1}} R - gamma eta^{-1} / 2."""
    if gamma <= 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    return mutual_info(prior, gamma, quad) - 0.5 * r_integral(law, eta_inv) - 0.5 * gamma * eta_inv


def i_rs_gradient(prior: Prior, law: SpectralLaw, eta_inv: float, gamma: float,
                  quad: Optional[Quadrature] = None) -> Tuple[float, float]:
    """(d/d gamma, d/d eta^{-1}) of i_RS."""
    return (0.5 * (mmse(prior, gamma, quad) - eta_inv),
            0.5 * (-r_transform(law, eta_inv) - gamma))


def i_rs_hessian(prior: Prior, law: SpectralLaw, eta_inv: float, gamma: float,
                 quad: Optional[Quadrature] = None) -> np.ndarray:
    """Hessian of i_RS in (gamma, eta^{-1})."""
    return 0.5 * np.array([
        [mmse_prime(prior, gamma, quad), -1.0],
        [-1.0, -r_transform_prime(law, eta_inv)],
    ])


def _psi_rs_value(prior: Prior, law: SpectralLaw, eta_inv: float, gamma: float,
                  quad: Optional[Quadrature]) -> float:
    return (-0.5 - 0.5 * gamma * prior.rho_star + 0.5 * gamma * eta_inv
            + 0.5 * r_integral(law, eta_inv) + expected_log_cpi(prior, gamma, quad))


def psi_rs(prior: Prior, law: SpectralLaw, fp: FixedPoint, quad: Optional[Quadrature] = None) -> float:
    """Replica-symmetric free energy at a fixed point."""
    return _psi_rs_value(prior, law, fp.eta_inv_star, fp.gamma_star, quad)


def _pi_star(prior: Prior, fp: FixedPoint, quad: Quadrature) -> float:
    """E X* F(Z/sqrt(gamma*), X*)."""
    p = quad.nodes / math.sqrt(fp.gamma_star)
    if isinstance(prior, AtomPrior):
        vals = f_stationary(prior, p[None, :], prior.values[:, None], fp)
        return float(prior.weights @ (prior.values * quad.expect(vals)))
    # Gaussian prior: X* = sqrt(rho) Z' on a tensor grid
    x = math.sqrt(prior.rho_star) * quad.nodes
    vals = f_stationary(prior, p[None, :], x[:, None], fp)
    return float(quad.weights @ (x * quad.expect(vals)))


def _build_fixed_point(prior: Prior, law: SpectralLaw, eta_inv: float, quad: Optional[Quadrature],
                       **extra) -> FixedPoint:
    quad = quad or default_quadrature()
    gamma = -r_transform(law, eta_inv)
    residual = abs(mmse(prior, gamma, quad) - eta_inv) + abs(gamma + r_transform(law, eta_inv))
    eta = 1.0 / eta_inv
    gap = eta - gamma
    if not gap > 0:
        raise DomainError(f"fixed point violates eta* > gamma*: eta*={eta}, gamma*={gamma}")

    q = law.dsq + gap
    if law.degenerate:
        kappa = 0.0
    else:
        kappa = (gap / gamma) ** 2 * (law.expect(eta ** 2 / q ** 2) - 1.0)
    delta = 1.0 / gap
    if kappa > 0:
        alpha_a = (gap / gamma) / math.sqrt(kappa)
        alpha_b = alpha_a ** 2 * (gamma - law.d_star)
    else:
        alpha_a = alpha_b = math.nan

    # pi_star needs F, which only reads eta_inv_star / gamma_star
    partial = FixedPoint.construct(eta_inv_star=eta_inv, gamma_star=gamma)
    return FixedPoint(
        eta_inv_star=eta_inv,
        gamma_star=gamma,
        residual=residual,
        delta_star=delta,
        kappa_star=kappa,
        sigma_sq_star=delta * kappa,
        b_star=1.0 / gamma - kappa / gap,
        a_star=gap * (1.0 - law.d_star / gamma),
        c_star=-gap * kappa + (gap / gamma) ** 2 * (law.d_star - gamma),
        e_star=1.0 + kappa,
        alpha_A=alpha_a,
        alpha_B=alpha_b,
        pi_star=_pi_star(prior, partial, quad),
        i_rs=i_rs(prior, law, eta_inv, gamma, quad),
        psi_rs=_psi_rs_value(prior, law, eta_inv, gamma, quad),
        degenerate=law.degenerate or kappa <= 0,
        **extra,
    )


def _iterate(h, x0: float, damping: float, tol: float, max_iter: int) -> Tuple[float, int, List[float], str]:
    """Damped iteration; returns (x, iterations, trajectory, status)."""
    x = x0
    trajectory = [x]
    increments: List[float] = []
    for k in range(1, max_iter + 1):
        x_next = (1.0 - damping) * x + damping * h(x)
        step = x_next - x
        trajectory.append(x_next)
        x = x_next
        if abs(step) < tol:
            return x, k, trajectory, "converged"
        increments.append(step)
        recent = increments[-_OSCILLATION_WINDOW:]
        if len(recent) == _OSCILLATION_WINDOW:
            alternating = all(a * b < 0 for a, b in zip(recent, recent[1:]))
            not_shrinking = abs(recent[-1]) >= abs(recent[-3])
            if alternating and not_shrinking:
                return x, k, trajectory, "oscillating"
    return x, max_iter, trajectory, "max_iter"


def _solve_from(prior: Prior, law: SpectralLaw, start: float, opts: SolverOptions,
                quad: Optional[Quadrature]) -> Tuple[float, str, int]:
    rho = prior.rho_star

    def h(x: float) -> float:
        return fixed_point_map(prior, law, min(max(x, 0.0), rho), quad)

    x, iterations, trajectory, status = _iterate(h, start, opts.damping, opts.tol, opts.max_iter)
    if status == "converged":
        return x, "iteration", iterations
    if not opts.fallback:
        raise ConvergenceError(
            f"fixed-point iteration from {start} stopped ({status}) after {iterations} steps", trajectory
        )

    logger.warning(f"⚠️  Fixed-point iteration from {start} {status}; retrying with damping {FALLBACK_DAMPING}")
    x, more, trajectory_damped, status = _iterate(h, start, FALLBACK_DAMPING, opts.tol, opts.max_iter)
    iterations += more
    if status == "converged":
        return x, "damped", iterations

    logger.warning("⚠️  Damped iteration failed as well; bisecting x - h(x) on [0, rho*]")
    try:
        x = brentq(lambda v: v - h(v), 0.0, rho, xtol=min(opts.tol, 1e-15), maxiter=500)
    except ValueError as e:
        raise ConvergenceError(f"bisection fallback failed: {e}", trajectory + trajectory_damped) from e
    return float(x), "bisection", iterations


def estimate_contraction(prior: Prior, law: SpectralLaw, lo: float, hi: float, points: int = 21,
                         quad: Optional[Quadrature] = None) -> float:
    """Largest secant slope of h over an evenly spaced grid on [lo, hi]."""
    grid = np.linspace(lo, hi, points)
    values = np.array([fixed_point_map(prior, law, float(x), quad) for x in grid])
    return float(np.max(np.abs(np.diff(values) / np.diff(grid))))


@traceable(name="solve_fixed_point")
def solve_fixed_point(prior: Prior, law: SpectralLaw, opts: Optional[SolverOptions] = None,
                      quad: Optional[Quadrature] = None, threads: int = 1) -> FixedPoint:
    """
    Solve the replica fixed-point system.

    Args:
        prior: Signal prior (AtomPrior or GaussianPrior)
        law: Spectral law of D^2
        opts: Solver options; starts default to [rho*]
        quad: Gauss-Hermite rule for the scalar channel
        threads: Workers for multi-start solves

    Returns:
        The FixedPoint minimizing i_RS among all distinct fixed points found
    """
    opts = opts or SolverOptions()
    rho = prior.rho_star
    starts = opts.starts or [rho]
    for start in starts:
        if not 0.0 <= start <= rho:
            raise DomainError(f"start {start} outside [0, rho*={rho}]")

    if len(starts) > 1 and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            solved = list(executor.map(lambda s: _solve_from(prior, law, s, opts, quad), starts))
    else:
        solved = [_solve_from(prior, law, s, opts, quad) for s in starts]

    distinct: List[Tuple[float, str, int]] = []
    for x, method, iterations in solved:
        if all(abs(x - other[0]) > 10 * opts.tol for other in distinct):
            distinct.append((x, method, iterations))

    scored = []
    for x, method, iterations in distinct:
        gamma = -r_transform(law, x)
        scored.append((i_rs(prior, law, x, gamma, quad), x, gamma, method, iterations))
    scored.sort(key=lambda item: item[0])
    if len(scored) > 1:
        logger.warning(f"⚠️  {len(scored)} distinct fixed points found; keeping the one with minimal i_RS")

    best_irs, best_x, _, method, iterations = scored[0]
    fp = _build_fixed_point(
        prior, law, best_x, quad,
        method=method,
        iterations=iterations,
        contraction=estimate_contraction(prior, law, 0.0, rho, quad=quad),
        candidates=[(x, gamma, value) for value, x, gamma, _, _ in scored],
    )
    if fp.residual > RESIDUAL_TOL:
        logger.warning(f"⚠️  Fixed-point residual {fp.residual:.3e} above {RESIDUAL_TOL:.0e}")
    else:
        logger.info(f"✅ Fixed point eta*^-1={fp.eta_inv_star:.12g}, gamma*={fp.gamma_star:.12g} ({method})")
    return fp


def check_identities(fp: FixedPoint, law: SpectralLaw, prior: Optional[Prior] = None,
                     quad: Optional[Quadrature] = None) -> IdentityReport:
    """
    Residuals of the closed-form identities at a fixed point.

    Spectral moments d^A..d^E, the moments of L and E_b, and b* + sigma*^2 = 1/gamma*;
    with a prior also E F = 0, E F' = 0 and E F^2 = delta* under quadrature.
    """
    eta, gamma, kappa = fp.eta_star, fp.gamma_star, fp.kappa_star
    gap = eta - gamma
    dsq = law.dsq
    q = dsq + gap
    L = (gap / gamma) * (eta / q - 1.0)
    # E_b^2 averaged over Xi ~ N(0, 1)
    eb_sq = (eta / gamma) ** 2 * dsq / q ** 2

    residuals = {
        "d_A": abs(law.expect(1.0 / q) - 1.0 / eta),
        "d_B": abs(law.expect(dsq / q) - gamma / eta),
        "d_C": abs(law.expect(1.0 / q ** 2) - ((gamma / gap) ** 2 * kappa + 1.0) / eta ** 2),
        "d_D": abs(law.expect(dsq / q ** 2) - (-(gamma / eta) ** 2 * kappa / gap + gamma / eta ** 2)),
        "d_E": abs(law.expect(dsq ** 2 / q ** 2) - (gamma / eta) ** 2 * (1.0 + kappa)),
        "E_L": abs(law.expect(L)),
        "E_L2": abs(law.expect(L ** 2) - kappa),
        "E_Eb2": abs(law.expect(eb_sq) - fp.b_star),
        "E_D2L": abs(law.expect(dsq * L) - fp.a_star),
        "E_D2L2": abs(law.expect(dsq * L ** 2) - fp.c_star),
        "E_D2Eb2": abs(law.expect(dsq * eb_sq) - fp.e_star),
        "b_plus_sigma2": abs(fp.b_star + fp.sigma_sq_star - 1.0 / gamma),
    }
    if prior is not None:
        residuals.update(stationary_moment_residuals(prior, fp, quad))
    if fp.degenerate:
        logger.warning("⚠️  Degenerate spectral law (kappa* = 0); L vanishes identically")
    return IdentityReport(residuals=residuals, degenerate=fp.degenerate)


def stationary_moment_residuals(prior: Prior, fp: FixedPoint,
                                quad: Optional[Quadrature] = None) -> Dict[str, float]:
    """E F, E F' and E F^2 - delta* for P ~ N(0, 1/gamma*), X* ~ prior."""
    quad = quad or default_quadrature()
    p = quad.nodes / math.sqrt(fp.gamma_star)
    if isinstance(prior, AtomPrior):
        xs, ws = prior.values, prior.weights
    else:
        xs, ws = math.sqrt(prior.rho_star) * quad.nodes, quad.weights
    F = f_stationary(prior, p[None, :], xs[:, None], fp)
    F_prime = f_stationary_prime(prior, p[None, :], xs[:, None], fp)
    return {
        "E_F": abs(float(ws @ quad.expect(F))),
        "E_Fprime": abs(float(ws @ quad.expect(F_prime))),
        "E_F2": abs(float(ws @ quad.expect(F ** 2)) - fp.delta_star),
    }


def small_eps_report(fp: FixedPoint, law: SpectralLaw, constant: float = SMALL_EPS_CONSTANT) -> SmallEpsReport:
    """
    Leading-order small-eps behavior of the fixed point.

    Each check reports (lhs, leading-order rhs, ratio) where ratio divides the
    deviation by the size of the stated error term; a check passes iff ratio <= constant.
    """
    if fp.kappa_star <= 0 or law.degenerate:
        raise DomainError("small-eps report needs kappa* > 0 (non-degenerate spectral law)")
    e, d, k2 = law.eps, law.d_star, law.kappa2
    eta_inv, eta = fp.eta_inv_star, fp.eta_star
    gamma, kappa = fp.gamma_star, fp.kappa_star
    kappa_lead = ((eta - gamma) / eta) ** 2 * k2 / d ** 2
    alpha_a_lead = eta / math.sqrt(k2)

    rows = [
        ("gamma_star", gamma, d - k2 * eta_inv, k2 * eta_inv ** 2 * e),
        ("kappa_star", kappa, kappa_lead, kappa_lead * eta_inv * e),
        ("alpha_A", fp.alpha_A, alpha_a_lead, alpha_a_lead * eta_inv * e),
        ("alpha_B", fp.alpha_B, -eta, e),
        ("e_over_b", fp.e_star / fp.b_star, d, e),
        ("a_over_sqrt_kappa", fp.a_star / math.sqrt(kappa), 0.0, e),
        ("c_over_kappa", fp.c_star / kappa, d, e),
        ("b_star", fp.b_star, 1.0 / d, eta_inv * k2 / d ** 2),
    ]
    checks = []
    for name, lhs, rhs, scale in rows:
        ratio = abs(lhs - rhs) / scale
        checks.append(SmallEpsCheck(name=name, lhs=lhs, rhs=rhs, ratio=ratio, passed=ratio <= constant))
    bound = min(d * e, e * e)
    checks.append(SmallEpsCheck(name="kappa2_bound", lhs=k2, rhs=bound, ratio=k2 / bound,
                                passed=k2 <= bound * (1 + 1e-12)))
    return SmallEpsReport(checks=checks, constant=constant)


def state_evolution(prior: Prior, law: SpectralLaw, init: Union[None, float, FixedPoint] = None,
                    T: int = 10, quad: Optional[Quadrature] = None) -> StateEvolution:
    """
    Run the VAMP state evolution for T iterations.

    Args:
        prior: Signal prior
        law: Spectral law of D^2
        init: None for the noninformative start gamma_{2,1} = 1/rho*, a float gamma_{2,1},
            or a FixedPoint for the stationary start gamma_{1,0} = gamma*
        T: Number of iterations
        quad: Gauss-Hermite rule

    Returns:
        StateEvolution with T rows
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")

    if isinstance(init, FixedPoint):
        mode = "stationary"
        eta1_first = 1.0 / mmse(prior, init.gamma_star, quad)
        gamma2 = eta1_first - init.gamma_star
    elif init is None:
        mode = "noninformative"
        gamma2 = 1.0 / prior.rho_star
    else:
        mode = "custom"
        gamma2 = float(init)

    rows: Dict[str, List[float]] = {"gamma1": [], "eta1": [], "gamma2": [], "eta2": []}
    for t in range(1, T + 1):
        if not (gamma2 > 0 and math.isfinite(gamma2)):
            raise StateEvolutionError(t, (gamma2,))
        eta2 = 1.0 / cauchy_g(law, gamma2)
        gamma1 = eta2 - gamma2
        if not (gamma1 > 0 and math.isfinite(eta2)):
            raise StateEvolutionError(t, (gamma1, eta2, gamma2))
        eta1 = 1.0 / mmse(prior, gamma1, quad)
        gamma2_next = eta1 - gamma1
        rows["gamma1"].append(gamma1)
        rows["eta1"].append(eta1)
        rows["gamma2"].append(gamma2)
        rows["eta2"].append(eta2)
        gamma2 = gamma2_next

    return StateEvolution(init_mode=mode, **rows)
