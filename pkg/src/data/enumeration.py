"""
Exact posterior by exhaustive enumeration of prior-atom configurations.

Features:
- Reflected mixed-radix Gray code so consecutive configurations differ in one coordinate
- O(m) incremental update of the residual y - A sigma per step
- Streaming max-shifted accumulators for log Z, the posterior mean and E<||sigma - beta*||^2>,
  mergeable across partitions of the leading digit
- Replicate Monte Carlo for the mutual information and the Nishimori identity
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.special import logsumexp

from src.data.instance import Instance, resample_signal_noise, sample_instance
from src.theory.prior import AtomPrior
from src.theory.spectrum import SpectralLaw
from src.utils.config import ENUMERATION_BUDGET
from src.utils.errors import BudgetExceededError, DomainError
from src.utils.helpers import derive_seed, mean_and_stderr
from src.utils.observability import traceable

logger = logging.getLogger(__name__)


@dataclass
class ExactPosterior:
    """Exact posterior summaries of one instance."""
    log_z: float
    mean: np.ndarray
    self_overlap: float
    mmse_n: float
    config_count: int


def mixed_radix_gray(radices: Sequence[int]) -> Iterator[Tuple[int, int, int]]:
    """
    Steps of the reflected mixed-radix Gray code starting from all zeros.

    Yields (coordinate, old_digit, new_digit) for each of the prod(radices) - 1 moves.
    """
    n = len(radices)
    digits = [0] * n
    focus = list(range(n + 1))
    direction = [1] * n
    while True:
        j = focus[0]
        focus[0] = 0
        if j == n:
            return
        old = digits[j]
        digits[j] += direction[j]
        yield j, old, digits[j]
        if digits[j] == 0 or digits[j] == radices[j] - 1:
            direction[j] = -direction[j]
            focus[j] = focus[j + 1]
            focus[j + 1] = j + 1


@dataclass
class _Accumulator:
    """Max-shifted running sums of exp(log_w), exp(log_w) sigma and exp(log_w) ||sigma - beta*||^2."""
    n: int
    max_log: float = -math.inf
    total: float = 0.0
    mean: np.ndarray = field(default=None)
    sq: float = 0.0
    count: int = 0

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.n)

    def _rescale(self, new_max: float) -> None:
        if self.max_log > -math.inf:
            scale = math.exp(self.max_log - new_max)
            self.total *= scale
            self.mean *= scale
            self.sq *= scale
        self.max_log = new_max

    def add(self, log_w: float, sigma: np.ndarray, sqdist: float) -> None:
        if log_w > self.max_log:
            self._rescale(log_w)
        p = math.exp(log_w - self.max_log)
        self.total += p
        self.mean += p * sigma
        self.sq += p * sqdist
        self.count += 1

    def merge(self, other: "_Accumulator") -> None:
        if other.count == 0:
            return
        if other.max_log > self.max_log:
            self._rescale(other.max_log)
        scale = math.exp(other.max_log - self.max_log)
        self.total += scale * other.total
        self.mean += scale * other.mean
        self.sq += scale * other.sq
        self.count += other.count


def _enumerate_partition(A: np.ndarray, y: np.ndarray, beta: np.ndarray, prior: AtomPrior,
                         fixed: Optional[Tuple[int, int]]) -> _Accumulator:
    """Enumerate all configurations, with coordinate 0 pinned to atom index `fixed[1]` if given."""
    n = beta.size
    values, log_weights = prior.values, prior.log_weights
    free = list(range(1, n)) if fixed is not None else list(range(n))

    digits = np.zeros(n, dtype=int)
    if fixed is not None:
        digits[0] = fixed[1]
    sigma = values[digits]
    residual = y - A @ sigma
    log_prior = float(log_weights[digits].sum())
    sqdist = float(np.sum((sigma - beta) ** 2))

    acc = _Accumulator(n=n)
    acc.add(log_prior - 0.5 * float(residual @ residual), sigma, sqdist)
    for pos, old, new in mixed_radix_gray([prior.size] * len(free)):
        j = free[pos]
        x_old, x_new = values[old], values[new]
        residual -= (x_new - x_old) * A[:, j]
        sigma[j] = x_new
        log_prior += log_weights[new] - log_weights[old]
        sqdist += (x_new - beta[j]) ** 2 - (x_old - beta[j]) ** 2
        acc.add(log_prior - 0.5 * float(residual @ residual), sigma, sqdist)
    return acc


def _check_budget(prior: AtomPrior, n: int, max_configs: int) -> int:
    total = prior.size ** n
    if total > max_configs:
        raise BudgetExceededError(total, max_configs)
    return total


@traceable(name="exact_posterior")
def exact_posterior(instance: Instance, prior: AtomPrior, max_configs: int = ENUMERATION_BUDGET,
                    workers: int = 1) -> ExactPosterior:
    """
    Exact log Z, posterior mean and self-overlap by Gray-code enumeration.

    Args:
        instance: The regression instance
        prior: Finite-support prior
        max_configs: Enumeration budget, checked before any work
        workers: Threads over partitions of the leading digit

    Returns:
        ExactPosterior for this (y, A)
    """
    if not isinstance(prior, AtomPrior):
        raise DomainError("exact enumeration needs a finite-support prior")
    total = _check_budget(prior, instance.n, max_configs)
    A = instance.design()
    y, beta = instance.y, instance.beta_star

    if workers > 1 and instance.n > 1:
        parts = [(0, a) for a in range(prior.size)]
        with ThreadPoolExecutor(max_workers=workers) as executor:
            partials = list(executor.map(lambda part: _enumerate_partition(A, y, beta, prior, part), parts))
        acc = _Accumulator(n=instance.n)
        for partial in partials:
            acc.merge(partial)
    else:
        acc = _enumerate_partition(A, y, beta, prior, None)

    mean = acc.mean / acc.total
    return ExactPosterior(
        log_z=acc.max_log + math.log(acc.total),
        mean=mean,
        self_overlap=acc.sq / acc.total / instance.n,
        mmse_n=float(np.sum((beta - mean) ** 2) / instance.n),
        config_count=total,
    )


def naive_log_z(instance: Instance, prior: AtomPrior, max_configs: int = ENUMERATION_BUDGET) -> float:
    """log Z recomputing A sigma from scratch for every configuration."""
    _check_budget(prior, instance.n, max_configs)
    A = instance.design()
    log_w = []
    for idx in itertools.product(range(prior.size), repeat=instance.n):
        idx = np.array(idx)
        r = instance.y - A @ prior.values[idx]
        log_w.append(prior.log_weights[idx].sum() - 0.5 * float(r @ r))
    return float(logsumexp(log_w))


@dataclass
class ReplicateResult:
    """Oracle summaries of one (beta*, eps) replicate."""
    index: int
    log_z: float
    i_n: float
    mmse_n: float
    self_overlap: float
    tap_residual: float = math.nan


class NishimoriReport(BaseModel):
    """Paired Monte Carlo check of E||beta* - <sigma>||^2 = 1/2 E<||sigma - beta*||^2>."""
    lhs: float
    rhs: float
    difference: float
    stderr: float
    passed: bool


def replicate_posteriors(law: SpectralLaw, prior: AtomPrior, n: int, m: int, reps: int, seed: int,
                         max_configs: int = ENUMERATION_BUDGET, average_over_a: bool = False,
                         gamma_star: Optional[float] = None, threads: int = 1) -> List[ReplicateResult]:
    """
    Exact posteriors for reps independent (beta*, eps) draws.

    The design is sampled once from seed unless average_over_a is set, in which case
    every replicate draws its own design. With gamma_star the TAP residual of the exact
    posterior mean is recorded as well.
    """
    from src.ml.vamp import tap_residual

    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    _check_budget(prior, n, max_configs)
    base = None if average_over_a else sample_instance(law, prior, n, m, seed)

    def one(r: int) -> ReplicateResult:
        rep_seed = derive_seed(seed, "replicate", r)
        if base is None:
            inst = sample_instance(law, prior, n, m, rep_seed)
        else:
            inst = resample_signal_noise(base, prior, rep_seed)
        post = exact_posterior(inst, prior, max_configs)
        tap = tap_residual(inst, prior, gamma_star, post.mean) if gamma_star is not None else math.nan
        return ReplicateResult(index=r, log_z=post.log_z, i_n=-post.log_z / n - 0.5 * inst.m / n,
                               mmse_n=post.mmse_n, self_overlap=post.self_overlap, tap_residual=tap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(one, range(reps)))
    return [one(r) for r in range(reps)]


def mutual_info_mc(law: SpectralLaw, prior: AtomPrior, n: int, m: int, reps: int, seed: int,
                   max_configs: int = ENUMERATION_BUDGET, average_over_a: bool = False,
                   threads: int = 1) -> Tuple[float, float]:
    """Monte Carlo estimate of i_n = -n^{-1} E[log Z | A] - m/(2n) and its standard error."""
    if reps < 2:
        raise DomainError(f"reps must be >= 2 for a standard error, got {reps}")
    results = replicate_posteriors(law, prior, n, m, reps, seed, max_configs, average_over_a,
                                   threads=threads)
    return mean_and_stderr([r.i_n for r in results])


def nishimori_check(results: Sequence[ReplicateResult], sigmas: float = 3.0) -> NishimoriReport:
    """Compare mean mmse_n against half the mean self-overlap with a paired standard error."""
    lhs = np.array([r.mmse_n for r in results])
    rhs = 0.5 * np.array([r.self_overlap for r in results])
    difference, stderr = mean_and_stderr(lhs - rhs)
    if math.isnan(stderr):
        stderr = 0.0
    passed = abs(difference) <= sigmas * stderr or abs(difference) <= 1e-12
    return NishimoriReport(lhs=float(lhs.mean()), rhs=float(rhs.mean()), difference=difference,
                           stderr=stderr, passed=passed)
