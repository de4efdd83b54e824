"""Metropolis-coupled MCMC over trees, genotypes, fractions and nuisance terms.

Chain ``m`` (1-based) targets the posterior raised to ``1 / (1 + dT (m - 1))``.
Every move exponentiates the full posterior ratio by the chain temperature;
chain swaps compare untempered log-posteriors.  Estimates come from chain 1
only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kern
from .model import (ModelError, ModelParams, NuisanceState, ObservedData, Phylogeny,
                    posterior_terms)

logger = logging.getLogger(__name__)

MOVE_NAMES = ("genotypes", "tree", "sibling_swap", "parent_swap", "fractions",
              "overdispersion", "concentrations")

_BLOCK_BITS = {
    "genotypes": kern.DO_Z,
    "tree": kern.DO_TREE,
    "sibling_swap": kern.DO_SIBLING,
    "parent_swap": kern.DO_PARENT,
    "fractions": kern.DO_F,
    "overdispersion": kern.DO_S,
    "concentrations": kern.DO_GAMMA,
}


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    iterations: int = 40000
    n_chains: int = 5
    delta_T: float = 0.4
    swap_interval: int = 50
    burn_in_fraction: float = 0.5
    thin: int = 4
    theta_flip: float = 0.20
    psi: float = 200.0
    proposal_bias: float = 4.0
    sigma_s: float = 16.0
    sigma_gamma: float = 0.2
    parent_swap_prob: float = 0.01
    seed: int = 0
    # move blocks left out of every sweep, by name from MOVE_NAMES
    frozen: tuple = ()
    # recompute every cached density after each sweep (slow, for tests)
    check_cache: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.n_chains < 1 or self.thin < 1 or self.swap_interval < 1:
            raise ValueError("iterations >= 0, n_chains >= 1, thin >= 1, swap_interval >= 1 required")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if not 0.0 <= self.parent_swap_prob <= 1.0 or not 0.0 <= self.theta_flip <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.delta_T <= 0 or self.psi <= 0 or self.proposal_bias <= 0:
            raise ValueError("delta_T, psi and proposal_bias must be positive")
        if self.sigma_s < 0 or self.sigma_gamma < 0:
            raise ValueError("proposal scales cannot be negative")
        unknown = set(self.frozen) - set(MOVE_NAMES)
        if unknown:
            raise ValueError(f"unknown move blocks: {sorted(unknown)}")
        self.frozen = tuple(self.frozen)

    def as_vector(self) -> np.ndarray:
        return np.array([self.theta_flip, self.psi, self.proposal_bias, self.sigma_s,
                         self.sigma_gamma, self.parent_swap_prob], dtype=np.float64)

    @property
    def blocks(self) -> int:
        bits = kern.ALL_BLOCKS
        for name in self.frozen:
            bits &= ~_BLOCK_BITS[name]
        return bits

    @property
    def burn_in(self) -> int:
        return int(math.floor(self.burn_in_fraction * self.iterations))

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def temperature(m: int, delta_T: float) -> float:
    """Inverse temperature of chain ``m`` (1-based)."""
    if m < 1:
        raise ValueError("chains are numbered from 1")
    return 1.0 / (1.0 + delta_T * (m - 1))


@dataclass
class ChainState:
    """Full parameter set of one chain plus its density caches."""

    parents: np.ndarray
    Z: np.ndarray
    F: np.ndarray
    s: float
    gamma: np.ndarray
    temperature: float = 1.0
    cached_loglik: float = math.nan
    cached_logprior: float = math.nan
    anc: np.ndarray = field(default=None, repr=False)
    row_lp: np.ndarray = field(default=None, repr=False)
    cell_ll: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(cls, tree: Phylogeny, Z, F, s, gamma, data: ObservedData, params: ModelParams,
              temperature: float = 1.0) -> "ChainState":
        K = tree.K
        Z = np.ascontiguousarray(Z, dtype=np.int8)
        F = np.ascontiguousarray(F, dtype=np.float64)
        if Z.shape != (data.J, K) or F.shape != (K, data.T):
            raise ModelError(f"state shapes Z{Z.shape}, F{F.shape} do not fit J={data.J}, "
                             f"T={data.T}, K={K}")
        state = cls(parents=tree.parents.copy(), Z=Z.copy(), F=F.copy(), s=float(s),
                    gamma=np.array(gamma, dtype=np.float64), temperature=temperature)
        state.refresh(data, params)
        return state

    @property
    def K(self) -> int:
        return self.parents.shape[0]

    @property
    def tree(self) -> Phylogeny:
        return Phylogeny(self.parents)

    @property
    def nuisance(self) -> NuisanceState:
        return NuisanceState(self.s, self.gamma.copy())

    @property
    def log_posterior(self) -> float:
        return self.cached_loglik + self.cached_logprior

    def refresh(self, data: ObservedData, params: ModelParams) -> None:
        """Rebuild every cache from scratch."""
        K = self.K
        mp = params.as_vector(K)
        self.anc = np.empty((K, K), dtype=np.bool_)
        kern.fill_ancestry(self.parents, self.anc)
        self.row_lp = np.empty(self.Z.shape[0])
        kern.total_row_logprior(self.Z, self.parents, self.anc, params.mu, params.rho,
                                params.nu, self.row_lp)
        self.cell_ll = np.empty(self.Z.shape[0:1] + self.F.shape[1:])
        kern.fill_cell_loglik(data.X, data.D, data.log_binom, self.Z, self.F, self.s,
                              params.epsilon_seq, self.cell_ll)
        self.update_totals(data, mp)

    def update_totals(self, data: ObservedData, mp: np.ndarray) -> None:
        lp = kern.log_posterior(data.X, data.D, data.log_binom, self.parents, self.anc,
                                self.Z, self.F, self.s, self.gamma, mp, self.row_lp,
                                self.cell_ll)
        self.cached_loglik = float(self.cell_ll.sum())
        self.cached_logprior = lp - self.cached_loglik

    def check(self, data: ObservedData, params: ModelParams, atol: float = 1e-8) -> None:
        """Compare the caches with an independent recomputation."""
        terms = posterior_terms(self.tree, self.Z, self.F, self.s, self.gamma, data, params)
        bad = []
        if not math.isclose(terms.likelihood, self.cached_loglik, rel_tol=0.0, abs_tol=atol):
            bad.append(f"loglik cached {self.cached_loglik!r} fresh {terms.likelihood!r}")
        if not math.isclose(terms.log_prior, self.cached_logprior, rel_tol=0.0, abs_tol=atol):
            bad.append(f"logprior cached {self.cached_logprior!r} fresh {terms.log_prior!r}")
        if bad:
            raise SamplerError("stale chain cache: " + "; ".join(bad))

    def swap_contents(self, other: "ChainState") -> None:
        """Exchange parameter sets with ``other``; temperatures stay put."""
        for name in ("parents", "Z", "F", "s", "gamma", "cached_loglik", "cached_logprior",
                     "anc", "row_lp", "cell_ll"):
            mine, theirs = getattr(self, name), getattr(other, name)
            setattr(self, name, theirs)
            setattr(other, name, mine)


def initial_state(data: ObservedData, K: int, params: ModelParams, rng: np.random.Generator,
                  temperature: float = 1.0) -> ChainState:
    """Over-dispersed start: tree and nuisance terms from their priors, sparse Z."""
    if K < 2:
        raise ModelError("K must be at least 2")
    delta = params.delta_for(K)
    parents = np.empty(K, dtype=np.int64)
    parents[:2] = (-1, 0)
    for k in range(2, K):
        parents[k] = 0 if rng.random() < delta else rng.integers(1, k)

    J, T = data.J, data.T
    Z = np.zeros((J, K), dtype=np.int8)
    n_on = int(round(0.1 * J * (K - 1)))
    picks = rng.choice(J * (K - 1), size=n_on, replace=False)
    Z[:, 1:].flat[picks] = 1

    gamma = rng.gamma(params.gamma_prior_shape, 1.0 / params.gamma_prior_rate, size=T)
    F = np.empty((K, T))
    for t in range(T):
        for _ in range(100):
            col = rng.dirichlet(np.full(K, gamma[t]))
            if np.all(col > 0):
                break
        else:
            col = np.maximum(col, 1e-12)
            col /= col.sum()
        F[:, t] = col
    s = rng.gamma(params.s_prior_shape, 1.0 / params.s_prior_rate)
    return ChainState.build(Phylogeny(parents), Z, F, s, gamma, data, params, temperature)


# ----------------------------------------------------------------------------
# individual moves, one block of a sweep each


def _counters() -> np.ndarray:
    return np.zeros((kern.N_MOVES, 2), dtype=np.int64)


def _finish(state: ChainState, data: ObservedData, params: ModelParams) -> None:
    state.update_totals(data, params.as_vector(state.K))


def update_genotype_rows(state, data, params, config, rng, counters=None):
    counters = _counters() if counters is None else counters
    kern.update_genotypes(rng, data.X, data.D, data.log_binom, state.parents, state.anc,
                          state.Z, state.F, state.s, state.row_lp, state.cell_ll,
                          params.as_vector(state.K), config.as_vector(), state.temperature,
                          counters)
    _finish(state, data, params)
    return counters


def gibbs_update_tree(state, data, params, rng, counters=None):
    counters = _counters() if counters is None else counters
    kern.gibbs_tree(rng, state.parents, state.anc, state.Z, state.row_lp,
                    params.as_vector(state.K), state.temperature, counters)
    _finish(state, data, params)
    return counters


def sibling_swap(state, data, params, rng, counters=None):
    """Exchange the labels of two sibling clones (with their Z columns and F rows)."""
    counters = _counters() if counters is None else counters
    kern.sibling_swap(rng, state.parents, state.anc, state.Z, state.F, state.row_lp,
                      params.as_vector(state.K), state.temperature, counters)
    _finish(state, data, params)
    return counters


def parent_swap(state, data, params, config, rng, counters=None):
    """With probability ``config.parent_swap_prob``, propose making a clone the
    parent of its own parent."""
    counters = _counters() if counters is None else counters
    if rng.random() < config.parent_swap_prob:
        kern.parent_swap(rng, state.parents, state.anc, state.Z, state.F, state.row_lp,
                         params.as_vector(state.K), state.temperature, counters)
        _finish(state, data, params)
    return counters


def update_fractions(state, data, params, config, rng, counters=None):
    counters = _counters() if counters is None else counters
    kern.update_fractions(rng, data.X, data.D, data.log_binom, state.Z, state.F, state.s,
                          state.gamma, state.cell_ll, params.as_vector(state.K),
                          config.as_vector(), state.temperature, counters)
    _finish(state, data, params)
    return counters


def update_nuisance(state, data, params, config, rng, counters=None):
    counters = _counters() if counters is None else counters
    mp = params.as_vector(state.K)
    cp = config.as_vector()
    state.s = kern.update_overdispersion(rng, data.X, data.D, data.log_binom, state.Z,
                                         state.F, state.s, state.cell_ll, mp, cp,
                                         state.temperature, counters)
    kern.update_concentrations(rng, state.F, state.gamma, mp, cp, state.temperature, counters)
    _finish(state, data, params)
    return counters


def swap_log_acceptance(tau_a: float, tau_b: float, logpost_a: float, logpost_b: float) -> float:
    """Log acceptance of exchanging states between chains at ``tau_a`` and ``tau_b``."""
    return (tau_a - tau_b) * (logpost_b - logpost_a)


def propose_chain_swap(chains: list, rng: np.random.Generator) -> Optional[bool]:
    """Try to exchange the states of one random adjacent pair of chains.

    Returns None when there is nothing to swap, else whether it was accepted.
    """
    if len(chains) < 2:
        return None
    m = int(rng.integers(0, len(chains) - 1))
    a, b = chains[m], chains[m + 1]
    log_alpha = swap_log_acceptance(a.temperature, b.temperature, a.log_posterior, b.log_posterior)
    if math.log(rng.random()) < log_alpha:
        a.swap_contents(b)
        return True
    return False


def sweep(state: ChainState, data: ObservedData, params: ModelParams, config: SamplerConfig,
          rng: np.random.Generator, counters: np.ndarray) -> None:
    """All move blocks once, in the fixed order Z, tree, swaps, F, nuisance."""
    scal = np.array([state.s])
    kern.sweep(rng, data.X, data.D, data.log_binom, state.parents, state.anc, state.Z,
               state.F, scal, state.gamma, state.row_lp, state.cell_ll,
               params.as_vector(state.K), config.as_vector(), state.temperature, counters,
               config.blocks)
    state.s = float(scal[0])
    _finish(state, data, params)


# ----------------------------------------------------------------------------
# runs


@dataclass
class MapEstimate:
    tree: Phylogeny
    Z: np.ndarray
    F: np.ndarray
    s: float
    gamma: np.ndarray
    log_posterior: float
    log_likelihood: float
    sweep_index: int

    @property
    def K(self) -> int:
        return self.tree.K


@dataclass
class Trace:
    """Retained sweeps of the untempered chain, plus move statistics."""

    sweeps: np.ndarray
    log_posterior: np.ndarray
    log_likelihood: np.ndarray
    parents: np.ndarray
    Z: np.ndarray
    F: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    move_counts: np.ndarray  # chains x moves x (accepted, proposed)
    swap_counts: np.ndarray  # (accepted, proposed)

    def __len__(self) -> int:
        return len(self.sweeps)

    def acceptance_rates(self, chain: int = 0) -> dict:
        out = {}
        for i, name in enumerate(MOVE_NAMES):
            acc, prop = self.move_counts[chain, i]
            out[name] = float(acc / prop) if prop else None
        return out

    @property
    def swap_rate(self) -> Optional[float]:
        acc, prop = self.swap_counts
        return float(acc / prop) if prop else None

    def map_estimate(self) -> MapEstimate:
        if len(self) == 0:
            raise SamplerError("no retained samples to take a MAP estimate from")
        i = int(np.argmax(self.log_posterior))
        return MapEstimate(
            tree=Phylogeny(self.parents[i]), Z=self.Z[i].copy(), F=self.F[i].copy(),
            s=float(self.s[i]), gamma=self.gamma[i].copy(),
            log_posterior=float(self.log_posterior[i]),
            log_likelihood=float(self.log_likelihood[i]), sweep_index=int(self.sweeps[i]),
        )


def sample(data: ObservedData, K: int, params: ModelParams, config: SamplerConfig,
           init: Optional[list] = None) -> Trace:
    """Run the coupled chains and return the retained trace of chain 1.

    ``init`` optionally supplies one starting ChainState per chain (copied).
    """
    if K < 2:
        raise ModelError("K must be at least 2")
    M = config.n_chains
    streams = [np.random.default_rng(ss)
               for ss in np.random.SeedSequence(config.seed).spawn(M + 1)]
    chain_rngs, swap_rng = streams[:M], streams[M]

    chains = []
    for m in range(M):
        tau = temperature(m + 1, config.delta_T)
        if init is not None:
            src = init[m]
            st = ChainState.build(Phylogeny(src.parents), src.Z, src.F, src.s, src.gamma,
                                  data, params, tau)
        else:
            st = initial_state(data, K, params, chain_rngs[m], tau)
        if not np.isfinite(st.log_posterior):
            terms = posterior_terms(st.tree, st.Z, st.F, st.s, st.gamma, data, params)
            raise SamplerError(f"chain {m + 1} starts with a non-finite posterior in: "
                               f"{', '.join(terms.non_finite()) or 'unknown'}")
        chains.append(st)

    counters = np.zeros((M, kern.N_MOVES, 2), dtype=np.int64)
    swaps = np.zeros(2, dtype=np.int64)
    n_keep = config.n_retained
    J, T = data.J, data.T
    rec = dict(
        sweeps=np.zeros(n_keep, dtype=np.int64),
        log_posterior=np.zeros(n_keep),
        log_likelihood=np.zeros(n_keep),
        parents=np.zeros((n_keep, K), dtype=np.int64),
        Z=np.zeros((n_keep, J, K), dtype=np.int8),
        F=np.zeros((n_keep, K, T)),
        s=np.zeros(n_keep),
        gamma=np.zeros((n_keep, T)),
    )
    burn = config.burn_in
    n = 0
    for i in range(1, config.iterations + 1):
        for m in range(M):
            sweep(chains[m], data, params, config, chain_rngs[m], counters[m])
            if config.check_cache:
                chains[m].check(data, params)
        if M > 1 and i % config.swap_interval == 0:
            swaps[1] += 1
            swaps[0] += bool(propose_chain_swap(chains, swap_rng))
        if i > burn and (i - burn) % config.thin == 0 and n < n_keep:
            c = chains[0]
            rec["sweeps"][n] = i
            rec["log_posterior"][n] = c.log_posterior
            rec["log_likelihood"][n] = c.cached_loglik
            rec["parents"][n] = c.parents
            rec["Z"][n] = c.Z
            rec["F"][n] = c.F
            rec["s"][n] = c.s
            rec["gamma"][n] = c.gamma
            n += 1
        if i % 5000 == 0:
            logger.info("K=%d sweep %d/%d log-posterior %.2f", K, i, config.iterations,
                        chains[0].log_posterior)
    return Trace(move_counts=counters, swap_counts=swaps, **rec)


def run(data: ObservedData, K: int, params: ModelParams, config: SamplerConfig):
    """Sample and return ``(trace, map_estimate)``."""
    trace = sample(data, K, params, config)
    return trace, trace.map_estimate()
