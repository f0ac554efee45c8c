"""
Vector AMP on concrete instances.

Features:
- Standard VAMP with deterministic state-evolution parameters and resolvents applied
  through the O-basis (two orthogonal products per iteration)
- Stationary reparametrized iteration x -> s = O x -> y = O^T Lambda s -> F(y + e, beta*)
- Empirical Gram blocks of the stationary iterates
- TAP residual of a candidate posterior mean
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.data.instance import Instance
from src.theory.overlap import OverlapTable
from src.theory.prior import Prior, Quadrature, denoise, f_stationary
from src.theory.replica import FixedPoint, StateEvolution, state_evolution
from src.theory.spectrum import SpectralLaw
from src.utils.config import DIVERGENCE_FACTOR
from src.utils.errors import DivergenceError, DomainError
from src.utils.helpers import make_rng
from src.utils.observability import traceable

logger = logging.getLogger(__name__)


@dataclass
class VampInit:
    """Starting message r_2^1 and its precision gamma_{2,1}."""
    r2_1: np.ndarray
    gamma2_1: float


@dataclass
class VampRun:
    """Per-iteration errors and final estimates of one VAMP run."""
    T: int
    mse1: List[float]
    mse2: List[float]
    beta_hat1: np.ndarray
    beta_hat2: np.ndarray
    tap_residual: List[float] = field(default_factory=list)
    se: Optional[StateEvolution] = None
    history: Dict[str, np.ndarray] = field(default_factory=dict)

    def records(self, seed: Optional[int] = None) -> List[Dict[str, float]]:
        """Rows (seed, t, mse1, mse2, eta1_inv_pred, eta2_inv_pred, tap_residual)."""
        rows = []
        for t in range(self.T):
            rows.append({
                "seed": seed,
                "t": t + 1,
                "mse1": self.mse1[t],
                "mse2": self.mse2[t],
                "eta1_inv_pred": 1.0 / self.se.eta1[t] if self.se else math.nan,
                "eta2_inv_pred": 1.0 / self.se.eta2[t] if self.se else math.nan,
                "tap_residual": self.tap_residual[t] if self.tap_residual else math.nan,
            })
        return rows


@dataclass
class StationaryRun:
    """Iterates of the stationary form; column t of each matrix is iteration t + 1."""
    T: int
    X: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    e: np.ndarray
    e_b: np.ndarray
    p0: np.ndarray
    diag_Lambda: np.ndarray


@dataclass
class GramBlocks:
    """Empirical second moments n^{-1} (e, X_T, Y_T)^T (e, X_T, Y_T)."""
    XtX: np.ndarray
    YtY: np.ndarray
    Xte: np.ndarray
    Yte: np.ndarray
    XtY: np.ndarray
    ete: float


def _check_length(name: str, vec: np.ndarray, n: int) -> None:
    if vec.shape != (n,):
        raise DomainError(f"{name} must have shape ({n},), got {vec.shape}")


def tap_residual(instance: Instance, prior: Prior, gamma_star: float, m_vec: np.ndarray) -> float:
    """n^{-1} || m - f(-(A^T A m - gamma* m - A^T y) / gamma*, gamma*) ||^2."""
    if gamma_star <= 0:
        raise DomainError(f"gamma_star must be > 0, got {gamma_star}")
    m_vec = np.asarray(m_vec, dtype=float)
    _check_length("m_vec", m_vec, instance.n)
    ata_m = instance.O.T @ (instance.dtd * (instance.O @ m_vec))
    field_ = -(ata_m - gamma_star * m_vec - instance.apply_at(instance.y)) / gamma_star
    f, _ = denoise(prior, field_, gamma_star)
    return float(np.sum((m_vec - f) ** 2) / instance.n)


@traceable(name="run_vamp")
def run_vamp(instance: Instance, prior: Prior, law: Optional[SpectralLaw] = None, T: int = 10,
             init: Optional[VampInit] = None, se: Optional[StateEvolution] = None,
             gamma_star: Optional[float] = None, keep_history: bool = False,
             quad: Optional[Quadrature] = None, seed: Optional[int] = None) -> VampRun:
    """
    Run VAMP for T iterations.

    Args:
        instance: The regression instance
        prior: Signal prior used by the denoiser
        law: Spectral law for the state-evolution parameters (unless se is given)
        T: Number of iterations
        init: Starting message; defaults to r_2^1 = 0, gamma_{2,1} = 1/rho*
        se: Precomputed state-evolution parameters (e.g. StateEvolution.constant)
        gamma_star: When given, the TAP residual of each denoiser output is recorded
        keep_history: Retain r_1^t, r_2^t and both estimates for every t
        quad: Gauss-Hermite rule for the state evolution
        seed: Reported in divergence errors

    Returns:
        VampRun with per-iteration mse of beta_hat1^{t+1} and beta_hat2^t
    """
    n = instance.n
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    if init is None:
        init = VampInit(r2_1=np.zeros(n), gamma2_1=1.0 / prior.rho_star)
        se_init = None
    else:
        se_init = init.gamma2_1
    if init.gamma2_1 <= 0:
        raise DomainError(f"gamma2_1 must be > 0, got {init.gamma2_1}")
    r2 = np.asarray(init.r2_1, dtype=float).copy()
    _check_length("r2_1", r2, n)

    if se is None:
        if law is None:
            raise DomainError("run_vamp needs a spectral law or precomputed state evolution")
        se = state_evolution(prior, law, se_init, T, quad)
    if se.T < T:
        raise DomainError(f"state evolution covers {se.T} iterations, {T} requested")

    dtd = instance.dtd
    aty_rot = instance.dt_times(instance.y)  # O A^T y
    beta = instance.beta_star
    guard = DIVERGENCE_FACTOR * prior.rho_star

    mse1: List[float] = []
    mse2: List[float] = []
    taps: List[float] = []
    history: Dict[str, List[np.ndarray]] = {"r1": [], "r2": [], "beta_hat1": [], "beta_hat2": []}
    beta1 = beta2 = np.zeros(n)

    for t in range(T):
        gamma1, eta1_next = se.gamma1[t], se.eta1[t]
        gamma2, eta2 = se.gamma2[t], se.eta2[t]
        gamma2_next = eta1_next - gamma1

        beta2 = instance.O.T @ ((aty_rot + gamma2 * (instance.O @ r2)) / (dtd + gamma2))
        r1 = (eta2 * beta2 - gamma2 * r2) / gamma1
        beta1, _ = denoise(prior, r1, gamma1)

        if keep_history:
            history["r1"].append(r1)
            history["r2"].append(r2)
            history["beta_hat1"].append(beta1)
            history["beta_hat2"].append(beta2)

        r2 = (eta1_next * beta1 - gamma1 * r1) / gamma2_next

        err1 = float(np.sum((beta1 - beta) ** 2) / n)
        err2 = float(np.sum((beta2 - beta) ** 2) / n)
        for err in (err1, err2):
            if not math.isfinite(err) or err > guard:
                raise DivergenceError(t + 1, err, seed)
        mse1.append(err1)
        mse2.append(err2)
        if gamma_star is not None:
            taps.append(tap_residual(instance, prior, gamma_star, beta1))

    return VampRun(
        T=T,
        mse1=mse1,
        mse2=mse2,
        beta_hat1=beta1,
        beta_hat2=beta2,
        tap_residual=taps,
        se=se,
        history={key: np.column_stack(vals) for key, vals in history.items()} if keep_history else {},
    )


def _sample_p0(instance: Instance, fp: FixedPoint, seed: int) -> np.ndarray:
    return make_rng(seed, "p0").normal(0.0, 1.0 / math.sqrt(fp.gamma_star), size=instance.n)


def stationary_start(instance: Instance, prior: Prior, fp: FixedPoint, seed: int) -> Tuple[np.ndarray, VampInit]:
    """
    Standard-form start equivalent to r_1^0 = beta* + p0, gamma_{1,0} = gamma*.

    Returns p0 and the init r_2^1 = beta* + F(p0, beta*), gamma_{2,1} = eta* - gamma*.
    """
    p0 = _sample_p0(instance, fp, seed)
    r2_1 = instance.beta_star + f_stationary(prior, p0, instance.beta_star, fp)
    return p0, VampInit(r2_1=r2_1, gamma2_1=fp.eta_star - fp.gamma_star)


@traceable(name="run_stationary_vamp")
def run_stationary_vamp(instance: Instance, prior: Prior, fp: FixedPoint, seed: int, T: int) -> StationaryRun:
    """
    Run the stationary form for T iterations.

    Args:
        instance: The regression instance (noise xi = eps since Q = I)
        prior: Signal prior
        fp: Solved fixed point
        seed: Master seed for p0
        T: Number of iterations

    Returns:
        StationaryRun with X_T, S_T, Y_T and the fixed vectors e, e_b, p0, diag(Lambda)
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    eta, gamma = fp.eta_star, fp.gamma_star
    gap = eta - gamma
    resolvent = 1.0 / (instance.dtd + gap)
    diag_lambda = (gap / gamma) * (eta * resolvent - 1.0)
    e_b = (eta / gamma) * resolvent * instance.dt_times(instance.eps)
    e = instance.O.T @ e_b
    p0 = _sample_p0(instance, fp, seed)

    n = instance.n
    X = np.empty((n, T))
    S = np.empty((n, T))
    Y = np.empty((n, T))
    x = f_stationary(prior, p0, instance.beta_star, fp)
    for t in range(T):
        s = instance.O @ x
        y = instance.O.T @ (diag_lambda * s)
        X[:, t], S[:, t], Y[:, t] = x, s, y
        x = f_stationary(prior, y + e, instance.beta_star, fp)

    return StationaryRun(T=T, X=X, S=S, Y=Y, e=e, e_b=e_b, p0=p0, diag_Lambda=diag_lambda)


def empirical_overlaps(run: StationaryRun) -> GramBlocks:
    """Empirical Gram blocks of (e, X_T, Y_T), normalized by n."""
    n = run.X.shape[0]
    return GramBlocks(
        XtX=run.X.T @ run.X / n,
        YtY=run.Y.T @ run.Y / n,
        Xte=run.X.T @ run.e / n,
        Yte=run.Y.T @ run.e / n,
        XtY=run.X.T @ run.Y / n,
        ete=float(run.e @ run.e / n),
    )


def predicted_overlaps(fp: FixedPoint, table: OverlapTable, T: int) -> GramBlocks:
    """Limits diag(b*, Delta_T, kappa* Delta_T) in the layout of GramBlocks."""
    delta = table.matrix[:T, :T]
    return GramBlocks(
        XtX=delta,
        YtY=fp.kappa_star * delta,
        Xte=np.zeros(T),
        Yte=np.zeros(T),
        XtY=np.zeros((T, T)),
        ete=fp.b_star,
    )
