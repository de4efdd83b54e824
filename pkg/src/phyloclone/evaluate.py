"""Reconstruction errors against a known truth, and choice of clone count."""

from __future__ import annotations

from itertools import permutations

import numpy as np


def _pad_columns(Z: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((Z.shape[0], K), dtype=np.int64)
    out[:, : Z.shape[1]] = Z
    return out


def _pad_rows(F: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((K, F.shape[1]))
    out[: F.shape[0]] = F
    return out


def z_error(Z_inferred, Z_true):
    """Normalised genotype error minimised over relabellings of the clones.

    The smaller matrix is padded with normal-like (all-zero) clones.  Returns
    ``(error, sigma)`` where column ``sigma[k]`` of the padded inferred matrix
    is matched to clone ``k`` of the padded truth; ``sigma[0] == 0`` always.
    Ties go to the lexicographically smallest ``sigma``.
    """
    Z_inferred = np.asarray(Z_inferred)
    Z_true = np.asarray(Z_true)
    if Z_inferred.shape[0] != Z_true.shape[0]:
        raise ValueError(f"mutation counts differ: {Z_inferred.shape[0]} vs {Z_true.shape[0]}")
    J, K_true = Z_true.shape
    K = max(K_true, Z_inferred.shape[1])
    A = _pad_columns(Z_inferred, K)
    B = _pad_columns(Z_true, K)
    # cost[a, b]: mismatches when inferred column a plays true clone b
    cost = np.abs(A[:, :, None] - B[:, None, :]).sum(axis=0)
    best, best_sigma = None, None
    for rest in permutations(range(1, K)):
        total = cost[0, 0] + sum(cost[a, b] for b, a in enumerate(rest, start=1))
        if best is None or total < best:
            best, best_sigma = total, (0,) + rest
    return best / (J * (K_true - 1)), np.array(best_sigma, dtype=np.int64)


def f_error(F_inferred, F_true, sigma, J: int) -> float:
    """Fraction error under the matching found by :func:`z_error`.

    Normalised by ``J * K`` with K the true clone count, as in the genotype
    error (not by the number of entries of F).
    """
    F_inferred = np.asarray(F_inferred, dtype=np.float64)
    F_true = np.asarray(F_true, dtype=np.float64)
    if F_inferred.shape[1] != F_true.shape[1]:
        raise ValueError("sample counts differ")
    K_true = F_true.shape[0]
    sigma = np.asarray(sigma, dtype=np.int64)
    K = len(sigma)
    if K < max(K_true, F_inferred.shape[0]):
        raise ValueError("permutation shorter than the padded clone count")
    A = _pad_rows(F_inferred, K)
    B = _pad_rows(F_true, K)
    return float(np.abs(A[sigma] - B).sum() / (J * K_true))


def model_select(candidates, near_tie: float = 1.0) -> int:
    """Pick K from ``(K, estimate)`` pairs by MAP log-posterior.

    Candidates within ``near_tie`` log units of the best are treated as tied,
    and the one with the highest log-likelihood among them wins.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates")
    top = max(est.log_posterior for _, est in candidates)
    tied = [(K, est) for K, est in candidates if top - est.log_posterior < near_tie]
    return max(tied, key=lambda c: (c[1].log_likelihood, c[1].log_posterior))[0]
