"""Signal priors, measurement operators, and random problem instances.

The sensing model is ``y = A s0 + w`` with ``A`` an n-by-N matrix with
unit-norm columns, ``s0`` drawn iid from a signal prior, and ``w`` iid
centered Gaussian noise of variance ``v``.  Everything here is
constructed deterministically from seeds so that experiments are
reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import special


def as_rng(seed) -> np.random.Generator:
    """Return a Generator from an int seed, a SeedSequence, or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# Signal priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMassMixture:
    """Discrete signal prior: a finite mixture of point masses.

    Parameters
    ----------
    atoms : sequence of (value, prob) pairs
        Probabilities must be nonnegative and sum to 1 within 1e-12.
    """

    atoms: tuple

    def __post_init__(self):
        atoms = tuple((float(a), float(p)) for a, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        probs = np.array([p for _, p in atoms])
        if len(atoms) == 0:
            raise ValueError("mixture needs at least one atom")
        if np.any(probs < 0):
            raise ValueError("atom probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom probabilities sum to {probs.sum()!r}, not 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([a for a, _ in self.atoms])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``n`` iid values; deterministic given the seed."""
        if n < 1:
            raise ValueError("need n >= 1")
        rng = as_rng(seed)
        return rng.choice(self.values, size=n, p=self.probs)

    def second_moment(self) -> float:
        return float(np.dot(self.probs, self.values**2))

    def mass_at_zero(self) -> float:
        return float(self.probs[self.values == 0.0].sum())


@dataclass(frozen=True)
class GeneralizedGaussian:
    """Continuous prior with density proportional to exp(-|x/scale|^alpha).

    Smaller ``alpha`` concentrates more mass near zero (more compressible
    signals); ``alpha = 2`` recovers a Gaussian shape, ``alpha = 1`` the
    Laplace distribution up to scaling.
    """

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError("alpha must be positive")
        if not (self.scale > 0):
            raise ValueError("scale must be positive")

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``n`` iid values by exact inverse-CDF through the
        regularized incomplete gamma function."""
        if n < 1:
            raise ValueError("need n >= 1")
        rng = as_rng(seed)
        u = rng.uniform(-1.0, 1.0, size=n)
        k = 1.0 / self.alpha
        mag = special.gammaincinv(k, np.abs(u)) ** k
        return np.sign(u) * self.scale * mag

    def second_moment(self) -> float:
        # scale^2 * Gamma(3/alpha) / Gamma(1/alpha), via gammaln for stability
        a = self.alpha
        return float(
            self.scale**2
            * np.exp(special.gammaln(3.0 / a) - special.gammaln(1.0 / a))
        )

    def mass_at_zero(self) -> float:
        return 0.0

    def density(self, x) -> np.ndarray:
        """Probability density, normalized."""
        z = 2.0 * self.scale * special.gamma(1.0 + 1.0 / self.alpha)
        return np.exp(-np.abs(np.asarray(x, dtype=float) / self.scale) ** self.alpha) / z


def sparse_prior(eps: float, amplitude: float = 1.0) -> PointMassMixture:
    """Two-atom prior (1-eps) at zero, eps at ``amplitude``."""
    if not (0 <= eps <= 1):
        raise ValueError("eps must lie in [0, 1]")
    return PointMassMixture(((0.0, 1.0 - eps), (amplitude, eps)))


def three_point_prior(eps: float, amplitude: float) -> PointMassMixture:
    """Symmetric prior (1-eps) at zero, eps/2 at each of +-amplitude."""
    if not (0 <= eps <= 1):
        raise ValueError("eps must lie in [0, 1]")
    return PointMassMixture(
        ((0.0, 1.0 - eps), (amplitude, eps / 2.0), (-amplitude, eps / 2.0))
    )


# ---------------------------------------------------------------------------
# Measurement operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseGaussianOperator:
    """Dense iid-Gaussian matrix with columns rescaled to exactly unit norm."""

    matrix: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def apply_adjoint(self, z: np.ndarray) -> np.ndarray:
        return self.matrix.T @ z

    def dense(self) -> np.ndarray:
        return self.matrix


@dataclass(frozen=True)
class PartialDCTOperator:
    """Random rows of the orthonormal DCT-II matrix, columns unit-normalized.

    apply/apply_adjoint run in O(N log N) through the fast transform; the
    row subset and per-column scaling fully determine the operator.
    """

    rows: np.ndarray
    col_scale: np.ndarray

    @property
    def shape(self) -> tuple:
        return (len(self.rows), len(self.col_scale))

    def apply(self, x: np.ndarray) -> np.ndarray:
        full = sp_fft.dct(x * self.col_scale, type=2, norm="ortho")
        return full[self.rows]

    def apply_adjoint(self, z: np.ndarray) -> np.ndarray:
        full = np.zeros(len(self.col_scale))
        full[self.rows] = z
        return sp_fft.idct(full, type=2, norm="ortho") * self.col_scale

    def dense(self) -> np.ndarray:
        return _dct_rows(self.rows, len(self.col_scale)) * self.col_scale[None, :]


def _dct_rows(rows: np.ndarray, n_cols: int) -> np.ndarray:
    """Materialize the selected rows of the orthonormal DCT-II matrix."""
    j = np.arange(n_cols)
    k = np.asarray(rows)[:, None]
    mat = np.cos(np.pi * k * (2 * j[None, :] + 1) / (2.0 * n_cols))
    w = np.where(k == 0, np.sqrt(1.0 / n_cols), np.sqrt(2.0 / n_cols))
    return w * mat


def build_operator(kind: str, n: int, N: int, seed) -> DenseGaussianOperator | PartialDCTOperator:
    """Build an n-by-N measurement operator with unit-norm columns.

    Parameters
    ----------
    kind : {"gaussian", "dct"}
        "gaussian" draws iid normal entries then rescales each column;
        "dct" subsamples n distinct rows of the orthonormal DCT-II
        matrix (a real Fourier-type transform) and rescales columns.
    """
    if not (1 <= n <= N):
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    rng = as_rng(seed)
    if kind == "gaussian":
        g = rng.standard_normal((n, N))
        norms = np.linalg.norm(g, axis=0)
        if np.any(norms == 0):
            raise ValueError("drew a zero column; retry with another seed")
        return DenseGaussianOperator(g / norms)
    if kind == "dct":
        rows = np.sort(rng.choice(N, size=n, replace=False))
        sub = _dct_rows(rows, N)
        norms = np.linalg.norm(sub, axis=0)
        if np.any(norms < 1e-12):
            raise ValueError("row subset leaves a zero column; retry with another seed")
        return PartialDCTOperator(rows=rows, col_scale=1.0 / norms)
    raise ValueError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# Problem instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemInstance:
    """A fully assembled sensing problem ``y = A s0 + w``.

    ``delta`` is the realized undersampling ratio n/N.  Instances are
    treated as immutable after construction and safe to share across
    parallel runs.
    """

    operator: object
    s0: np.ndarray
    w: np.ndarray
    y: np.ndarray
    v: float
    delta: float

    @property
    def n(self) -> int:
        return self.operator.shape[0]

    @property
    def N(self) -> int:
        return self.operator.shape[1]


def generate_instance(prior, delta: float, N: int, v: float, kind: str = "gaussian",
                      seed=None) -> ProblemInstance:
    """Generate a random instance with n = round(delta * N) measurements.

    Sub-seeds for the operator, the signal, and the noise are derived
    deterministically from ``seed``, so equal seeds give bit-identical
    instances.
    """
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    if v < 0:
        raise ValueError("noise variance must be nonnegative")
    n = _round_half_up(delta * N)
    if n < 1:
        raise ValueError("round(delta * N) must be at least 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    op_seed, sig_seed, noise_seed = ss.spawn(3)
    operator = build_operator(kind, n, N, op_seed)
    s0 = prior.sample(N, sig_seed)
    if v > 0:
        w = np.sqrt(v) * as_rng(noise_seed).standard_normal(n)
    else:
        w = np.zeros(n)
    y = operator.apply(s0) + w
    return ProblemInstance(operator=operator, s0=s0, w=w, y=y, v=float(v),
                           delta=n / N)


def instance_from_signal(s0: np.ndarray, delta: float, v: float = 0.0,
                         kind: str = "gaussian", seed=None) -> ProblemInstance:
    """Assemble an instance around an explicitly given signal vector."""
    N = len(s0)
    n = _round_half_up(delta * N)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    op_seed, noise_seed = ss.spawn(2)
    operator = build_operator(kind, n, N, op_seed)
    if v > 0:
        w = np.sqrt(v) * as_rng(noise_seed).standard_normal(n)
    else:
        w = np.zeros(n)
    y = operator.apply(np.asarray(s0, dtype=float)) + w
    return ProblemInstance(operator=operator, s0=np.asarray(s0, dtype=float),
                           w=w, y=y, v=float(v), delta=n / N)
