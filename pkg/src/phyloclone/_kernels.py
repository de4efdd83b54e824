"""Compiled inner loops for the sampler.

Everything here works on plain arrays with 0-based clone indices: the normal
clone is index 0 and ``parents[0] == -1``.  The readable reference versions of
the densities live in :mod:`phyloclone.model`; the test-suite checks the two
against each other.
"""

from __future__ import annotations

from math import exp, inf, lgamma, log

import numpy as np
from numba import njit

# Layout of the model-parameter vector.
MU, RHO, NU, DELTA, EPS, G_SHAPE, G_RATE, S_SHAPE, S_RATE = range(9)
# Layout of the proposal-parameter vector.
THETA, PSI, BIAS, SIGMA_S, SIGMA_G, PARENT_SWAP_PROB = range(6)
# Rows of the acceptance counter matrix; column 0 accepted, column 1 proposed.
MOVE_Z, MOVE_TREE, MOVE_SIBLING, MOVE_PARENT, MOVE_F, MOVE_S, MOVE_GAMMA = range(7)
N_MOVES = 7
# Bits of the ``blocks`` switch passed to ``sweep``.
DO_Z, DO_TREE, DO_SIBLING, DO_PARENT, DO_F, DO_S, DO_GAMMA = (1, 2, 4, 8, 16, 32, 64)
ALL_BLOCKS = 127


# ----------------------------------------------------------------------------
# densities


@njit(cache=True)
def log_binom_coef(x, d):
    return lgamma(d + 1.0) - lgamma(x + 1.0) - lgamma(d - x + 1.0)


@njit(cache=True)
def bb_core(x, d, p, s):
    """Beta-binomial log-pmf without the binomial coefficient."""
    if d == 0:
        return 0.0
    a = s * p
    b = s - a
    return (lgamma(x + a) + lgamma(d - x + b) - lgamma(d + s)
            + lgamma(s) - lgamma(a) - lgamma(b))


@njit(cache=True)
def clamp(p, eps):
    if p == 0.0:
        return eps
    if p == 1.0:
        return 1.0 - eps
    return p


@njit(cache=True)
def cell_prob(zrow, fcol, eps):
    acc = 0.0
    for k in range(zrow.shape[0]):
        if zrow[k]:
            acc += fcol[k]
    return clamp(0.5 * acc, eps)


@njit(cache=True)
def cell_loglik(X, D, lbinom, Z, F, s, eps, j, t):
    p = cell_prob(Z[j], F[:, t], eps)
    return lbinom[j, t] + bb_core(X[j, t], D[j, t], p, s)


@njit(cache=True)
def fill_cell_loglik(X, D, lbinom, Z, F, s, eps, out):
    J, T = X.shape
    for j in range(J):
        for t in range(T):
            out[j, t] = cell_loglik(X, D, lbinom, Z, F, s, eps, j, t)


@njit(cache=True)
def gamma_logpdf(x, shape, rate):
    if x <= 0.0:
        return -inf
    return shape * log(rate) - lgamma(shape) + (shape - 1.0) * log(x) - rate * x


@njit(cache=True)
def dirichlet_logpdf(f, alpha):
    tot = 0.0
    out = 0.0
    for k in range(f.shape[0]):
        if f[k] <= 0.0:
            return -inf
        tot += alpha[k]
        out += (alpha[k] - 1.0) * log(f[k]) - lgamma(alpha[k])
    return out + lgamma(tot)


@njit(cache=True)
def sym_dirichlet_logpdf(f, g):
    K = f.shape[0]
    out = lgamma(K * g) - K * lgamma(g)
    for k in range(K):
        if f[k] <= 0.0:
            return -inf
        out += (g - 1.0) * log(f[k])
    return out


# ----------------------------------------------------------------------------
# tree helpers


@njit(cache=True)
def fill_ancestry(parents, anc):
    """anc[a, b] is True when a is an ancestor of b or a == b."""
    K = parents.shape[0]
    anc[:, :] = False
    for b in range(K):
        a = b
        while a >= 0:
            anc[a, b] = True
            a = parents[a]


@njit(cache=True)
def lca(parents, anc, a, b):
    while not anc[a, b]:
        a = parents[a]
    return a


@njit(cache=True)
def tree_logprior(parents, delta):
    out = 0.0
    for k in range(2, parents.shape[0]):
        out += parent_logprior(k, parents[k], delta)
    return out


@njit(cache=True)
def parent_logprior(k, l, delta):
    if l == 0:
        return log(delta)
    return log((1.0 - delta) / (k - 1))


@njit(cache=True)
def row_logprior(zrow, parents, anc, mu, rho, nu):
    """ISA-penalised genotype prior of one mutation, clones in index order."""
    K = zrow.shape[0]
    out = 0.0
    common = -1  # MRCA of mutated clones seen so far
    for k in range(1, K):
        z = zrow[k]
        if zrow[parents[k]]:
            out += log(1.0 - rho) if z else log(rho)
        else:
            if common < 0:
                comply = True
            else:
                comply = zrow[lca(parents, anc, common, k)] == 1
            w1 = mu * nu if comply else mu * (1.0 - nu)
            w0 = 1.0 - mu
            out += log(w1 / (w0 + w1)) if z else log(w0 / (w0 + w1))
        if z:
            common = k if common < 0 else lca(parents, anc, common, k)
    return out


@njit(cache=True)
def total_row_logprior(Z, parents, anc, mu, rho, nu, out):
    tot = 0.0
    for j in range(Z.shape[0]):
        out[j] = row_logprior(Z[j], parents, anc, mu, rho, nu)
        tot += out[j]
    return tot


@njit(cache=True)
def log_posterior(X, D, lbinom, parents, anc, Z, F, s, gamma, mp, row_lp, cell_ll):
    """Untempered log-posterior assembled from the chain caches."""
    T = F.shape[1]
    lp = tree_logprior(parents, mp[DELTA]) + row_lp.sum() + cell_ll.sum()
    lp += gamma_logpdf(s, mp[S_SHAPE], mp[S_RATE])
    for t in range(T):
        lp += sym_dirichlet_logpdf(F[:, t], gamma[t])
        lp += gamma_logpdf(gamma[t], mp[G_SHAPE], mp[G_RATE])
    return lp


# ----------------------------------------------------------------------------
# relabelling


@njit(cache=True)
def topological_order(struct_parents, priority):
    """Parents-first ordering of a tree, lowest ``priority`` first among ready nodes.

    ``order[new] = old``.  With ``priority`` equal to a label vector that is
    already parents-first, this returns that labelling unchanged.
    """
    K = struct_parents.shape[0]
    order = np.empty(K, dtype=np.int64)
    placed = np.zeros(K, dtype=np.bool_)
    for i in range(K):
        best = -1
        for v in range(K):
            if placed[v]:
                continue
            p = struct_parents[v]
            if p >= 0 and not placed[p]:
                continue
            if best < 0 or priority[v] < priority[best]:
                best = v
        order[i] = best
        placed[best] = True
    return order


@njit(cache=True)
def relabelled_parents(struct_parents, order):
    K = order.shape[0]
    inv = np.empty(K, dtype=np.int64)
    for i in range(K):
        inv[order[i]] = i
    out = np.empty(K, dtype=np.int64)
    for i in range(K):
        p = struct_parents[order[i]]
        out[i] = -1 if p < 0 else inv[p]
    return out


@njit(cache=True)
def sibling_order(parents, a, b):
    K = parents.shape[0]
    prio = np.arange(K)
    prio[a] = b
    prio[b] = a
    return parents.copy(), topological_order(parents, prio)


@njit(cache=True)
def parent_swap_order(parents, k):
    K = parents.shape[0]
    l = parents[k]
    sp = parents.copy()
    sp[k] = parents[l]
    sp[l] = k
    prio = np.arange(K)
    prio[k] = l
    prio[l] = k
    return sp, topological_order(sp, prio)


@njit(cache=True)
def same_result(parents_a, order_a, parents_b, order_b, Z, F):
    """Whether two relabelled versions of the same state coincide."""
    K = order_a.shape[0]
    for i in range(K):
        if parents_a[i] != parents_b[i]:
            return False
    for i in range(K):
        ca = order_a[i]
        cb = order_b[i]
        if ca == cb:
            continue
        for j in range(Z.shape[0]):
            if Z[j, ca] != Z[j, cb]:
                return False
        for t in range(F.shape[1]):
            if F[ca, t] != F[cb, t]:
                return False
    return True


@njit(cache=True)
def sibling_pairs(parents):
    K = parents.shape[0]
    n = 0
    for a in range(1, K):
        for b in range(a + 1, K):
            if parents[a] == parents[b]:
                n += 1
    pairs = np.empty((n, 2), dtype=np.int64)
    n = 0
    for a in range(1, K):
        for b in range(a + 1, K):
            if parents[a] == parents[b]:
                pairs[n, 0] = a
                pairs[n, 1] = b
                n += 1
    return pairs


@njit(cache=True)
def compose(outer, inner):
    """Order mapping y-labels to x-labels when y = x relabelled by ``outer``
    and then by ``inner``."""
    out = np.empty_like(inner)
    for i in range(inner.shape[0]):
        out[i] = outer[inner[i]]
    return out


@njit(cache=True)
def count_sibling_moves(parents, Z, F, target_parents, target_order):
    """Number of sibling-pair choices on (parents, Z, F) yielding the target."""
    pairs = sibling_pairs(parents)
    n = 0
    for i in range(pairs.shape[0]):
        sp, order = sibling_order(parents, pairs[i, 0], pairs[i, 1])
        newp = relabelled_parents(sp, order)
        if same_result(newp, order, target_parents, target_order, Z, F):
            n += 1
    return n


@njit(cache=True)
def count_parent_moves(parents, Z, F, target_parents, target_order):
    K = parents.shape[0]
    n = 0
    for k in range(2, K):
        if parents[k] == 0:
            continue
        sp, order = parent_swap_order(parents, k)
        newp = relabelled_parents(sp, order)
        if same_result(newp, order, target_parents, target_order, Z, F):
            n += 1
    return n


@njit(cache=True)
def apply_order(order, newp, parents, anc, Z, F, row_lp, new_row_lp, Zbuf):
    K = order.shape[0]
    for j in range(Z.shape[0]):
        for i in range(K):
            Zbuf[j, i] = Z[j, order[i]]
    Z[:, :] = Zbuf
    Fold = F.copy()
    for i in range(K):
        F[i, :] = Fold[order[i], :]
    parents[:] = newp
    fill_ancestry(parents, anc)
    row_lp[:] = new_row_lp


@njit(cache=True)
def _relabel_logprior(order, newp, Z, mp, Zbuf, new_row_lp):
    K = order.shape[0]
    anc = np.empty((K, K), dtype=np.bool_)
    fill_ancestry(newp, anc)
    for j in range(Z.shape[0]):
        for i in range(K):
            Zbuf[j, i] = Z[j, order[i]]
    lp = total_row_logprior(Zbuf, newp, anc, mp[MU], mp[RHO], mp[NU], new_row_lp)
    return lp + tree_logprior(newp, mp[DELTA])


# ----------------------------------------------------------------------------
# moves


@njit(cache=True)
def update_genotypes(rng, X, D, lbinom, parents, anc, Z, F, s, row_lp, cell_ll,
                     mp, cp, tau, acc):
    J, K = Z.shape
    T = F.shape[1]
    prop = np.empty(K, dtype=Z.dtype)
    new_ll = np.empty(T)
    theta = cp[THETA]
    for j in range(J):
        changed = False
        for k in range(K):
            prop[k] = Z[j, k]
        for k in range(1, K):
            if rng.random() < theta:
                prop[k] = 1 - prop[k]
                changed = True
        acc[MOVE_Z, 1] += 1
        if not changed:
            acc[MOVE_Z, 0] += 1
            continue
        new_lp = row_logprior(prop, parents, anc, mp[MU], mp[RHO], mp[NU])
        delta = new_lp - row_lp[j]
        for t in range(T):
            p = cell_prob(prop, F[:, t], mp[EPS])
            new_ll[t] = lbinom[j, t] + bb_core(X[j, t], D[j, t], p, s)
            delta += new_ll[t] - cell_ll[j, t]
        if log(rng.random()) < tau * delta:
            for k in range(K):
                Z[j, k] = prop[k]
            for t in range(T):
                cell_ll[j, t] = new_ll[t]
            row_lp[j] = new_lp
            acc[MOVE_Z, 0] += 1


@njit(cache=True)
def gibbs_tree(rng, parents, anc, Z, row_lp, mp, tau, acc):
    J, K = Z.shape
    if K < 3:
        return
    scratch = np.empty(J)
    logw = np.empty(K)
    for k in range(2, K):
        for l in range(k):
            parents[k] = l
            fill_ancestry(parents, anc)
            lp = total_row_logprior(Z, parents, anc, mp[MU], mp[RHO], mp[NU], scratch)
            logw[l] = tau * (lp + parent_logprior(k, l, mp[DELTA]))
        top = -inf
        for l in range(k):
            if logw[l] > top:
                top = logw[l]
        tot = 0.0
        for l in range(k):
            tot += exp(logw[l] - top)
        u = rng.random() * tot
        chosen = k - 1
        run = 0.0
        for l in range(k):
            run += exp(logw[l] - top)
            if u < run:
                chosen = l
                break
        parents[k] = chosen
        fill_ancestry(parents, anc)
        acc[MOVE_TREE, 0] += 1
        acc[MOVE_TREE, 1] += 1
    total_row_logprior(Z, parents, anc, mp[MU], mp[RHO], mp[NU], row_lp)


@njit(cache=True)
def sibling_swap(rng, parents, anc, Z, F, row_lp, mp, tau, acc):
    pairs = sibling_pairs(parents)
    if pairs.shape[0] == 0:
        return
    J, K = Z.shape
    i = rng.integers(0, pairs.shape[0])
    sp, order = sibling_order(parents, pairs[i, 0], pairs[i, 1])
    newp = relabelled_parents(sp, order)
    Zbuf = np.empty_like(Z)
    new_row_lp = np.empty(J)
    new_prior = _relabel_logprior(order, newp, Z, mp, Zbuf, new_row_lp)
    old_prior = row_lp.sum() + tree_logprior(parents, mp[DELTA])
    n_fwd = count_sibling_moves(parents, Z, F, newp, order)
    n_rev = _count_reverse(parents, Z, F, newp, order, True)
    acc[MOVE_SIBLING, 1] += 1
    u = rng.random()
    if n_rev == 0:
        return
    log_ratio = tau * (new_prior - old_prior) + log(n_rev) - log(n_fwd)
    if log(u) < log_ratio:
        apply_order(order, newp, parents, anc, Z, F, row_lp, new_row_lp, Zbuf)
        acc[MOVE_SIBLING, 0] += 1


@njit(cache=True)
def _count_reverse(parents, Z, F, newp, order, sibling):
    """Count moves from the relabelled state that lead back to the original.

    The relabelled state is never materialised: its column ``i`` is column
    ``order[i]`` of the original, so a reverse move with order ``o`` lands on
    the original iff ``compose(order, o)`` reproduces it.
    """
    K = parents.shape[0]
    ident = np.arange(K)
    n = 0
    if sibling:
        pairs = sibling_pairs(newp)
        for i in range(pairs.shape[0]):
            sp, o = sibling_order(newp, pairs[i, 0], pairs[i, 1])
            back = relabelled_parents(sp, o)
            if same_result(back, compose(order, o), parents, ident, Z, F):
                n += 1
    else:
        for k in range(2, K):
            if newp[k] == 0:
                continue
            sp, o = parent_swap_order(newp, k)
            back = relabelled_parents(sp, o)
            if same_result(back, compose(order, o), parents, ident, Z, F):
                n += 1
    return n


@njit(cache=True)
def parent_swap(rng, parents, anc, Z, F, row_lp, mp, tau, acc):
    J, K = Z.shape
    if K < 3:
        return
    k = 2 + rng.integers(0, K - 2)
    acc[MOVE_PARENT, 1] += 1
    u = rng.random()
    if parents[k] == 0:
        return  # the normal clone never moves
    sp, order = parent_swap_order(parents, k)
    newp = relabelled_parents(sp, order)
    Zbuf = np.empty_like(Z)
    new_row_lp = np.empty(J)
    new_prior = _relabel_logprior(order, newp, Z, mp, Zbuf, new_row_lp)
    old_prior = row_lp.sum() + tree_logprior(parents, mp[DELTA])
    n_fwd = count_parent_moves(parents, Z, F, newp, order)
    n_rev = _count_reverse(parents, Z, F, newp, order, False)
    if n_rev == 0:
        return
    log_ratio = tau * (new_prior - old_prior) + log(n_rev) - log(n_fwd)
    if log(u) < log_ratio:
        apply_order(order, newp, parents, anc, Z, F, row_lp, new_row_lp, Zbuf)
        acc[MOVE_PARENT, 0] += 1


@njit(cache=True)
def update_fractions(rng, X, D, lbinom, Z, F, s, gamma, cell_ll, mp, cp, tau, acc):
    J, K = Z.shape
    T = F.shape[1]
    psi = cp[PSI]
    bias = cp[BIAS]
    fstar = np.empty(K)
    a_fwd = np.empty(K)
    a_rev = np.empty(K)
    new_ll = np.empty(J)
    for t in range(T):
        f = F[:, t]
        tot = 0.0
        for k in range(K):
            a_fwd[k] = psi * f[k] + bias
            fstar[k] = rng.gamma(a_fwd[k], 1.0)
            tot += fstar[k]
        acc[MOVE_F, 1] += 1
        u = rng.random()
        if not tot > 0.0:
            continue
        boundary = False
        for k in range(K):
            fstar[k] /= tot
            if fstar[k] <= 0.0:
                boundary = True
            a_rev[k] = psi * fstar[k] + bias
        if boundary:
            continue
        log_ratio = sym_dirichlet_logpdf(fstar, gamma[t]) - sym_dirichlet_logpdf(f, gamma[t])
        for j in range(J):
            p = cell_prob(Z[j], fstar, mp[EPS])
            new_ll[j] = lbinom[j, t] + bb_core(X[j, t], D[j, t], p, s)
            log_ratio += new_ll[j] - cell_ll[j, t]
        log_ratio = tau * log_ratio + dirichlet_logpdf(f, a_rev) - dirichlet_logpdf(fstar, a_fwd)
        if log(u) < log_ratio:
            for k in range(K):
                F[k, t] = fstar[k]
            for j in range(J):
                cell_ll[j, t] = new_ll[j]
            acc[MOVE_F, 0] += 1


@njit(cache=True)
def update_overdispersion(rng, X, D, lbinom, Z, F, s, cell_ll, mp, cp, tau, acc):
    """Returns the (possibly unchanged) overdispersion."""
    J, T = X.shape
    s_new = s + cp[SIGMA_S] * rng.standard_normal()
    acc[MOVE_S, 1] += 1
    u = rng.random()
    if s_new <= 0.0:
        return s
    if s_new == s:
        acc[MOVE_S, 0] += 1
        return s
    new_ll = np.empty((J, T))
    fill_cell_loglik(X, D, lbinom, Z, F, s_new, mp[EPS], new_ll)
    log_ratio = (new_ll.sum() - cell_ll.sum()
                 + gamma_logpdf(s_new, mp[S_SHAPE], mp[S_RATE])
                 - gamma_logpdf(s, mp[S_SHAPE], mp[S_RATE]))
    if log(u) < tau * log_ratio:
        cell_ll[:, :] = new_ll
        acc[MOVE_S, 0] += 1
        return s_new
    return s


@njit(cache=True)
def update_concentrations(rng, F, gamma, mp, cp, tau, acc):
    T = F.shape[1]
    for t in range(T):
        g_new = gamma[t] + cp[SIGMA_G] * rng.standard_normal()
        acc[MOVE_GAMMA, 1] += 1
        u = rng.random()
        if g_new <= 0.0:
            continue
        log_ratio = (sym_dirichlet_logpdf(F[:, t], g_new)
                     - sym_dirichlet_logpdf(F[:, t], gamma[t])
                     + gamma_logpdf(g_new, mp[G_SHAPE], mp[G_RATE])
                     - gamma_logpdf(gamma[t], mp[G_SHAPE], mp[G_RATE]))
        if log(u) < tau * log_ratio:
            gamma[t] = g_new
            acc[MOVE_GAMMA, 0] += 1


@njit(cache=True)
def sweep(rng, X, D, lbinom, parents, anc, Z, F, scal, gamma, row_lp, cell_ll,
          mp, cp, tau, acc, blocks):
    """One full update of a chain; ``scal[0]`` holds the overdispersion."""
    if blocks & DO_Z:
        update_genotypes(rng, X, D, lbinom, parents, anc, Z, F, scal[0], row_lp,
                         cell_ll, mp, cp, tau, acc)
    if blocks & DO_TREE:
        gibbs_tree(rng, parents, anc, Z, row_lp, mp, tau, acc)
    if blocks & DO_SIBLING:
        sibling_swap(rng, parents, anc, Z, F, row_lp, mp, tau, acc)
    if blocks & DO_PARENT:
        if rng.random() < cp[PARENT_SWAP_PROB]:
            parent_swap(rng, parents, anc, Z, F, row_lp, mp, tau, acc)
    if blocks & DO_F:
        update_fractions(rng, X, D, lbinom, Z, F, scal[0], gamma, cell_ll, mp, cp,
                         tau, acc)
    if blocks & DO_S:
        scal[0] = update_overdispersion(rng, X, D, lbinom, Z, F, scal[0], cell_ll,
                                        mp, cp, tau, acc)
    if blocks & DO_GAMMA:
        update_concentrations(rng, F, gamma, mp, cp, tau, acc)
