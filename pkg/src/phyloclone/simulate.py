"""Synthetic read-count datasets with a known tree, genotypes and fractions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ObservedData, Phylogeny, clamp_af, isa_indicator


@dataclass
class SimulationSpec:
    J: int = 100
    T: int = 5
    K: int = 4
    mean_depth: float = 200.0
    mu: float = 0.5
    rho: float = 0.05
    nu: float = 0.9
    gamma_sym: float = 2.0
    epsilon_seq: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if min(self.J, self.T) < 1 or self.K < 2:
            raise ValueError("need J, T >= 1 and K >= 2")
        if self.mean_depth < 0 or self.gamma_sym <= 0:
            raise ValueError("mean_depth must be >= 0 and gamma_sym > 0")
        for name in ("mu", "rho", "nu", "epsilon_seq"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass
class GroundTruth:
    tree: Phylogeny
    Z: np.ndarray
    F: np.ndarray


def sample_tree(K: int, rng: np.random.Generator, delta: float | None = None) -> Phylogeny:
    """Draw a parent vector from the deflated-uniform tree prior."""
    delta = 1.0 / (2 * K) if delta is None else delta
    parents = np.empty(K, dtype=np.int64)
    parents[:2] = (-1, 0)
    for k in range(2, K):
        parents[k] = 0 if rng.random() < delta else rng.integers(1, k)
    return Phylogeny(parents)


def sample_genotypes(tree: Phylogeny, J: int, mu: float, rho: float, nu: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw each row clone by clone from the ISA-penalised conditionals."""
    K = tree.K
    Z = np.zeros((J, K), dtype=np.int8)
    for j in range(J):
        for k in range(1, K):
            if Z[j, tree.parents[k]]:
                p1 = 1.0 - rho
            else:
                w1 = mu * (nu if isa_indicator(j, k, 1, tree, Z) else 1.0 - nu)
                p1 = w1 / (w1 + 1.0 - mu)
            Z[j, k] = rng.random() < p1
    return Z


def simulate_dataset(spec: SimulationSpec):
    """Returns ``(ObservedData, GroundTruth)``; counts are plain binomial draws."""
    rng = np.random.default_rng(spec.seed)
    tree = sample_tree(spec.K, rng)
    Z = sample_genotypes(tree, spec.J, spec.mu, spec.rho, spec.nu, rng)
    F = rng.dirichlet(np.full(spec.K, spec.gamma_sym), size=spec.T).T
    D = rng.poisson(spec.mean_depth, size=(spec.J, spec.T))
    P = 0.5 * (Z.astype(np.float64) @ F)
    P = np.vectorize(lambda p: clamp_af(p, spec.epsilon_seq))(P)
    X = rng.binomial(D, P)
    data = ObservedData(X, D)
    return data, GroundTruth(tree, Z, F)
