"""
Synthetic instances y = A beta* + eps with rotationally-invariant designs.

The design is held in factored form A = D O (Q = identity): D is m x n diagonal
with entries d_diag, O is Haar-distributed on SO(n).
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

from src.theory.prior import Prior
from src.theory.spectrum import SpectralLaw
from src.utils.config import INSTANCE_FORMAT_VERSION
from src.utils.errors import DomainError
from src.utils.helpers import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Instance:
    """One realized regression problem."""
    n: int
    m: int
    d_diag: np.ndarray
    O: np.ndarray
    beta_star: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    seed: int = 0

    @property
    def k(self) -> int:
        """Number of singular values, min(n, m)."""
        return min(self.n, self.m)

    @property
    def dtd(self) -> np.ndarray:
        """Diagonal of D^T D (length n, zero-padded when n > m)."""
        out = np.zeros(self.n)
        out[: self.k] = self.d_diag ** 2
        return out

    def d_times(self, v: np.ndarray) -> np.ndarray:
        """D v for v of length n."""
        out = np.zeros(self.m)
        out[: self.k] = self.d_diag * v[: self.k]
        return out

    def dt_times(self, w: np.ndarray) -> np.ndarray:
        """D^T w for w of length m."""
        out = np.zeros(self.n)
        out[: self.k] = self.d_diag * w[: self.k]
        return out

    def apply_a(self, x: np.ndarray) -> np.ndarray:
        return self.d_times(self.O @ x)

    def apply_at(self, w: np.ndarray) -> np.ndarray:
        return self.O.T @ self.dt_times(w)

    def design(self) -> np.ndarray:
        """Dense A = D O (m x n)."""
        A = np.zeros((self.m, self.n))
        A[: self.k] = self.d_diag[:, None] * self.O[: self.k]
        return A

    def resolvent_solve(self, rhs: np.ndarray, gamma: float) -> np.ndarray:
        """(A^T A + gamma I)^{-1} rhs through the O-basis."""
        return self.O.T @ ((self.O @ rhs) / (self.dtd + gamma))


def haar_special_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Haar-distributed matrix on SO(n).

    QR of a standard Gaussian matrix with the diagonal of R made positive, then one
    column negated if the determinant is -1.
    """
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    sign, _ = np.linalg.slogdet(Q)
    if sign < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def largest_remainder_counts(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, each within one of weights * total."""
    raw = np.asarray(weights, dtype=float) * total
    counts = np.floor(raw).astype(int)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # largest fractional parts first, ties broken by atom index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def build_instance(d_diag: np.ndarray, O: np.ndarray, beta_star: np.ndarray, eps: np.ndarray,
                   seed: int = 0) -> Instance:
    """Assemble an Instance from its factors and compute y = D O beta* + eps."""
    d_diag = np.asarray(d_diag, dtype=float)
    O = np.asarray(O, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n, m = beta_star.size, eps.size
    if O.shape != (n, n) or d_diag.size != min(n, m):
        raise DomainError(
            f"dimension mismatch: O {O.shape}, d_diag {d_diag.size}, n={n}, m={m}"
        )
    inst = Instance(n=n, m=m, d_diag=d_diag, O=O, beta_star=beta_star, eps=eps,
                    y=np.zeros(m), seed=seed)
    return replace(inst, y=inst.apply_a(beta_star) + eps)


def sample_instance(law: SpectralLaw, prior: Prior, n: int, m: int, seed: int) -> Instance:
    """
    Draw one instance.

    Args:
        law: Spectral law assigned to the squared singular values
        prior: Prior of the i.i.d. signal entries
        n: Signal dimension
        m: Number of observations
        seed: Master seed; each random stream is derived from it by label

    Returns:
        The sampled Instance
    """
    if n < 1 or m < 1:
        raise DomainError(f"n and m must be >= 1, got n={n}, m={m}")
    k = min(n, m)
    if n > m:
        logger.warning(f"⚠️  n={n} > m={m}: the last {n - m} directions of D^T D are zero")

    O = haar_special_orthogonal(n, make_rng(seed, "orthogonal"))
    counts = largest_remainder_counts(law.weights, k)
    dsq = make_rng(seed, "spectrum").permutation(np.repeat(law.dsq, counts))
    beta_star = prior.sample(make_rng(seed, "signal"), n)
    eps = make_rng(seed, "noise").standard_normal(m)
    return build_instance(np.sqrt(dsq), O, beta_star, eps, seed=seed)


def resample_signal_noise(instance: Instance, prior: Prior, seed: int) -> Instance:
    """Fresh (beta*, eps) at fixed (D, O)."""
    beta_star = prior.sample(make_rng(seed, "signal"), instance.n)
    eps = make_rng(seed, "noise").standard_normal(instance.m)
    return build_instance(instance.d_diag, instance.O, beta_star, eps, seed=seed)


def save_instance(path: Union[str, Path], instance: Instance) -> Path:
    """Write an instance to a versioned .npz container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.savez(
            handle,
            format_version=np.array(INSTANCE_FORMAT_VERSION),
            dims=np.array([instance.n, instance.m]),
            seed=np.array(instance.seed, dtype=np.uint64),
            d_diag=instance.d_diag,
            O=instance.O,
            beta_star=instance.beta_star,
            eps=instance.eps,
            y=instance.y,
        )
    return path


def load_instance(path: Union[str, Path]) -> Instance:
    """Read an instance written by save_instance."""
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != INSTANCE_FORMAT_VERSION:
            raise DomainError(f"unsupported instance format version {version}")
        n, m = (int(v) for v in data["dims"])
        return Instance(
            n=n,
            m=m,
            d_diag=data["d_diag"],
            O=data["O"],
            beta_star=data["beta_star"],
            eps=data["eps"],
            y=data["y"],
            seed=int(data["seed"]),
        )
