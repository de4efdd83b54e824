"""Domain types and reference densities of the phylogenetic clone model.

Clone indices are 0-based throughout the Python API.  Clone 0 is the normal
population and the root of the tree, so a parent vector always starts with
``-1`` (no parent) followed by ``0`` for the first cancer clone.  The on-disk
formats use the 1-based convention with a root sentinel of 0; see
:meth:`Phylogeny.to_one_based`.

The functions here favour clarity over speed.  The sampler runs compiled
equivalents from :mod:`phyloclone._kernels`, and the test-suite checks that
the two agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import gammaln


class ModelError(ValueError):
    """Raised when model objects violate their invariants."""


@dataclass(frozen=True)
class ObservedData:
    """Mutant read counts ``X`` and depths ``D``, both mutations x samples."""

    X: np.ndarray
    D: np.ndarray
    mutation_ids: tuple = ()
    sample_ids: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X)
        D = np.asarray(self.D)
        if X.ndim != 2 or X.shape != D.shape:
            raise ModelError(f"X and D must be matrices of equal shape, got {X.shape} and {D.shape}")
        J, T = X.shape
        if J < 1 or T < 1:
            raise ModelError("need at least one mutation and one sample")
        for name, arr in (("X", X), ("D", D)):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ModelError(f"{name} must hold integers")
        X = X.astype(np.int64)
        D = D.astype(np.int64)
        if np.any(X < 0):
            j, t = np.argwhere(X < 0)[0]
            raise ModelError(f"negative count at mutation {j}, sample {t}")
        if np.any(X > D):
            j, t = np.argwhere(X > D)[0]
            raise ModelError(f"count {X[j, t]} exceeds depth {D[j, t]} at mutation {j}, sample {t}")
        mids = tuple(self.mutation_ids) or tuple(f"m{j + 1}" for j in range(J))
        sids = tuple(self.sample_ids) or tuple(f"s{t + 1}" for t in range(T))
        if len(mids) != J or len(sids) != T:
            raise ModelError("identifier counts do not match the matrix shape")
        X.setflags(write=False)
        D.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "mutation_ids", mids)
        object.__setattr__(self, "sample_ids", sids)

    @property
    def J(self) -> int:
        return self.X.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @cached_property
    def log_binom(self) -> np.ndarray:
        """log C(d, x) per cell; constant in every parameter."""
        X, D = self.X, self.D
        return gammaln(D + 1.0) - gammaln(X + 1.0) - gammaln(D - X + 1.0)


@dataclass(frozen=True)
class Phylogeny:
    """Rooted clone tree as a parent vector with ``parents[k] < k``."""

    parents: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.parents, dtype=np.int64).copy()
        K = p.shape[0]
        if p.ndim != 1 or K < 2:
            raise ModelError("a phylogeny needs at least two clones")
        if p[0] != -1 or p[1] != 0:
            raise ModelError(f"parents must start with [-1, 0], got {p[:2].tolist()}")
        for k in range(2, K):
            if not 0 <= p[k] < k:
                raise ModelError(f"parent of clone {k} must lie in [0, {k - 1}], got {p[k]}")
        p.setflags(write=False)
        object.__setattr__(self, "parents", p)

    @classmethod
    def from_one_based(cls, vector: Sequence[int]) -> "Phylogeny":
        """Build from the file convention, e.g. ``[0, 1, 1]``."""
        return cls(np.asarray(vector, dtype=np.int64) - 1)

    def to_one_based(self) -> list:
        return [int(v) + 1 for v in self.parents]

    @property
    def K(self) -> int:
        return self.parents.shape[0]

    def ancestors(self, k: int) -> list:
        """Path from ``k`` up to the root, ``k`` included."""
        path = [k]
        while self.parents[path[-1]] >= 0:
            path.append(int(self.parents[path[-1]]))
        return path

    def children(self, k: int) -> list:
        return [c for c in range(self.K) if self.parents[c] == k]


@dataclass
class ModelParams:
    """Fixed model settings and hyperpriors.

    ``delta`` left as ``None`` means ``1 / (2K)`` for whatever K is being fitted.
    """

    mu: float = 0.3
    rho: float = 0.1
    nu: float = 0.75
    delta: Optional[float] = None
    epsilon_seq: float = 0.005
    gamma_prior_shape: float = 2.0
    gamma_prior_rate: float = 1.0
    s_prior_shape: float = 11.0
    s_prior_rate: float = 0.10

    def __post_init__(self):
        for name in ("mu", "rho", "nu", "epsilon_seq"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ModelError(f"{name} must lie in (0, 1), got {v}")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ModelError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("gamma_prior_shape", "gamma_prior_rate", "s_prior_shape", "s_prior_rate"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")

    def delta_for(self, K: int) -> float:
        return self.delta if self.delta is not None else 1.0 / (2 * K)

    def as_vector(self, K: int) -> np.ndarray:
        """Packed form consumed by the compiled kernels."""
        return np.array([
            self.mu, self.rho, self.nu, self.delta_for(K), self.epsilon_seq,
            self.gamma_prior_shape, self.gamma_prior_rate,
            self.s_prior_shape, self.s_prior_rate,
        ], dtype=np.float64)


@dataclass
class NuisanceState:
    s: float
    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        if not self.s > 0 or np.any(self.gamma <= 0):
            raise ModelError("overdispersion and concentrations must be positive")


def check_genotypes(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z)
    if Z.ndim != 2 or not np.isin(Z, (0, 1)).all():
        raise ModelError("genotypes must be a binary matrix")
    if np.any(Z[:, 0] != 0):
        raise ModelError("the normal clone (column 0) must carry no mutations")
    return Z.astype(np.int8)


def check_fractions(F: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or np.any(F < 0):
        raise ModelError("fractions must be a non-negative matrix")
    if not np.allclose(F.sum(axis=0), 1.0, rtol=0.0, atol=atol):
        raise ModelError("each fraction column must sum to one")
    return F


# ----------------------------------------------------------------------------
# priors


def tree_log_prior(tree: Phylogeny, delta: float) -> float:
    """Sum of log P(parent of k) over the free entries k >= 2."""
    out = 0.0
    for k in range(2, tree.K):
        if tree.parents[k] == 0:
            out += math.log(delta)
        else:
            out += math.log((1.0 - delta) / (k - 1))
    return out


def mrca(tree: Phylogeny, clones: Iterable[int]) -> int:
    """Deepest clone that is an ancestor-or-self of every clone given."""
    clones = list(clones)
    if not clones:
        raise ModelError("mrca of an empty set")
    common = set(tree.ancestors(clones[0]))
    for c in clones[1:]:
        common &= set(tree.ancestors(c))
    # the deepest common ancestor has the longest root path
    return max(common, key=lambda c: len(tree.ancestors(c)))


def isa_indicator(j: int, k: int, a: int, tree: Phylogeny, Z: np.ndarray) -> int:
    """1 if setting ``Z[j, k] = a`` keeps mutation ``j`` consistent with a
    single origin among clones ``0..k``, else 0."""
    row = np.array(Z[j, : k + 1], dtype=np.int64)
    row[k] = a
    mutated = np.flatnonzero(row)
    if mutated.size == 0:
        return 1
    return int(row[mrca(tree, mutated)] == 1)


def genotype_log_conditionals(z_row: np.ndarray, tree: Phylogeny,
                              params: ModelParams) -> np.ndarray:
    """Log P(z_k = 0) and log P(z_k = 1) for k = 1..K-1 given the clones before.

    Returns a (K, 2) array; row 0 belongs to the fixed normal clone and is 0.
    """
    z_row = np.asarray(z_row, dtype=np.int64)
    K = tree.K
    out = np.zeros((K, 2))
    Z = z_row[None, :]
    for k in range(1, K):
        if z_row[tree.parents[k]] == 1:
            w0, w1 = params.rho, 1.0 - params.rho
        else:
            comply = isa_indicator(0, k, 1, tree, Z)
            w1 = params.mu * (params.nu if comply else 1.0 - params.nu)
            w0 = 1.0 - params.mu
        out[k] = math.log(w0 / (w0 + w1)), math.log(w1 / (w0 + w1))
    return out


def genotype_row_log_prior(z_row: np.ndarray, tree: Phylogeny, params: ModelParams) -> float:
    z_row = np.asarray(z_row, dtype=np.int64)
    if z_row[0] != 0:
        raise ModelError("the normal clone cannot be mutated")
    cond = genotype_log_conditionals(z_row, tree, params)
    return float(sum(cond[k, z_row[k]] for k in range(1, tree.K)))


def genotype_log_prior(Z: np.ndarray, tree: Phylogeny, params: ModelParams) -> float:
    return sum(genotype_row_log_prior(row, tree, params) for row in np.asarray(Z))


def fractions_log_prior(F_col: np.ndarray, gamma_t: float) -> float:
    """Symmetric Dirichlet log-density; ``-inf`` on the simplex boundary."""
    f = np.asarray(F_col, dtype=np.float64)
    if np.any(f <= 0):
        return -math.inf
    K = f.shape[0]
    return float(gammaln(K * gamma_t) - K * gammaln(gamma_t) + (gamma_t - 1.0) * np.log(f).sum())


def gamma_log_pdf(x: float, shape: float, rate: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


# ----------------------------------------------------------------------------
# likelihood


def expected_af(Z_row: np.ndarray, F_col: np.ndarray) -> float:
    return 0.5 * float(np.dot(Z_row, F_col))


def clamp_af(p: float, epsilon_seq: float) -> float:
    if p == 0.0:
        return epsilon_seq
    if p == 1.0:
        return 1.0 - epsilon_seq
    return p


def betabinomial_log_pmf(x, d, p, s):
    """Beta-binomial log-pmf with mean ``p`` and precision ``s``.

    Shapes are ``s * p`` and ``s * (1 - p)``, so large ``s`` approaches the
    binomial.  Broadcasts over array arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    a = s * np.asarray(p, dtype=np.float64)
    b = s - a
    out = (gammaln(d + 1) - gammaln(x + 1) - gammaln(d - x + 1)
           + gammaln(x + a) + gammaln(d - x + b) - gammaln(d + s)
           + gammaln(s) - gammaln(a) - gammaln(b))
    out = np.where(d == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def expected_af_matrix(Z: np.ndarray, F: np.ndarray, epsilon_seq: float) -> np.ndarray:
    P = 0.5 * (np.asarray(Z, dtype=np.float64) @ F)
    P = np.where(P == 0.0, epsilon_seq, P)
    return np.where(P == 1.0, 1.0 - epsilon_seq, P)


def cell_log_likelihood(data: ObservedData, Z, F, s, epsilon_seq) -> np.ndarray:
    return betabinomial_log_pmf(data.X, data.D, expected_af_matrix(Z, F, epsilon_seq), s)


def data_log_likelihood(data: ObservedData, Z, F, s: float, epsilon_seq: float,
                        rows=None, cols=None) -> float:
    """Log-likelihood of the read counts, optionally over a sub-block of cells."""
    cells = cell_log_likelihood(data, Z, F, s, epsilon_seq)
    if rows is not None:
        cells = cells[np.asarray(list(rows), dtype=np.int64)]
    if cols is not None:
        cells = cells[:, np.asarray(list(cols), dtype=np.int64)]
    return float(cells.sum())


# ----------------------------------------------------------------------------
# posterior


@dataclass
class PosteriorTerms:
    tree: float
    genotypes: float
    fractions: float
    overdispersion: float
    concentrations: float
    likelihood: float

    @property
    def log_prior(self) -> float:
        return (self.tree + self.genotypes + self.fractions
                + self.overdispersion + self.concentrations)

    @property
    def total(self) -> float:
        return self.log_prior + self.likelihood

    def non_finite(self) -> list:
        return [name for name, v in vars(self).items() if not np.isfinite(v)]


def posterior_terms(tree: Phylogeny, Z, F, s: float, gamma, data: ObservedData,
                    params: ModelParams) -> PosteriorTerms:
    K = tree.K
    gamma = np.asarray(gamma, dtype=np.float64)
    return PosteriorTerms(
        tree=tree_log_prior(tree, params.delta_for(K)),
        genotypes=genotype_log_prior(Z, tree, params),
        fractions=sum(fractions_log_prior(F[:, t], gamma[t]) for t in range(F.shape[1])),
        overdispersion=gamma_log_pdf(s, params.s_prior_shape, params.s_prior_rate),
        concentrations=sum(gamma_log_pdf(g, params.gamma_prior_shape, params.gamma_prior_rate)
                           for g in gamma),
        likelihood=data_log_likelihood(data, Z, F, s, params.epsilon_seq),
    )


def joint_log_posterior(state, data: ObservedData, params: ModelParams) -> float:
    """Untempered log-posterior of anything with tree, Z, F, s and gamma."""
    return posterior_terms(state.tree, state.Z, state.F, state.s, state.gamma,
                           data, params).total


@dataclass
class ModelState:
    """A bare parameter set, handy for scoring states outside the sampler."""

    tree: Phylogeny
    Z: np.ndarray
    F: np.ndarray
    s: float
    gamma: np.ndarray = field(default_factory=lambda: np.ones(1))
