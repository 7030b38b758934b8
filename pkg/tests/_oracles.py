"""Independent brute-force oracles used to freeze expected values.

Everything here deliberately avoids the library's computational paths:
divergences are evaluated by direct loops over tensor indices and
optimizers by zooming grid search, so the oracles stay independent of the
solvers they check.
"""

import itertools
import math

import numpy as np


def direct_kl(a, b):
    """KL by explicit summation with the 0 log 0 convention."""
    total = 0.0
    for ai, bi in zip(np.ravel(a), np.ravel(b)):
        if ai > 0:
            if bi == 0:
                return math.inf
            total += ai * math.log(ai / bi)
    return total + float(np.sum(b)) - float(np.sum(a))


def direct_gw_distortion(pi, dx, dy):
    """Quartic distortion by full 4-index summation."""
    n, m = pi.shape
    total = 0.0
    for i in range(n):
        for j in range(m):
            for k in range(n):
                for l in range(m):
                    total += (dx[i, k] - dy[j, l]) ** 2 * pi[i, j] * pi[k, l]
    return total


def direct_linearized_cost(pi, dx, dy):
    """Linearized GW cost by 2-index summation per entry."""
    n, m = pi.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = sum(
                (dx[i, k] - dy[j, l]) ** 2 * pi[k, l]
                for k in range(n)
                for l in range(m)
            )
    return out


def ot_objective_direct(pi, cost, mu, nu, eps):
    return float(np.sum(cost * pi)) + eps * direct_kl(pi, np.outer(mu, nu))


def zoom_grid_minimize(fun, lower, upper, rounds=80, points=7, start=None):
    """Coordinate-box zooming grid search for smooth low-dimensional minima.

    Evaluates ``fun`` on a full grid over the current box and re-centers the
    box on the best point. The box only shrinks when the best point is
    interior; a best point on the hull makes the box walk instead, so the
    search can travel to minima far from the starting box. ``fun`` takes an
    array of shape (batch, dim) and returns (batch,) values (inf for
    infeasible points).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = len(lower)
    best_x = 0.5 * (lower + upper) if start is None else np.asarray(start, dtype=float)
    best_val = float(fun(best_x[None, :])[0])
    half = 0.5 * (upper - lower)
    for _ in range(rounds):
        axes = [np.linspace(best_x[d] - half[d], best_x[d] + half[d], points) for d in range(dim)]
        grid = np.array(list(itertools.product(*axes)))
        np.clip(grid, lower, upper, out=grid)
        vals = fun(grid)
        idx = int(np.argmin(vals))
        on_hull = False
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            candidate = grid[idx]
            step = np.abs(candidate - best_x)
            on_hull = bool(np.any(step >= half * (1.0 - 1e-12)) and np.any(half > 0))
            best_x = candidate
        if not on_hull:
            half *= 0.5
    return best_x, best_val


def brute_force_entropic_ot(mu, nu, cost, eps, rounds=45, points=7):
    """Grid minimization of the entropic OT objective over the coupling polytope.

    Free parameters are the (n-1) x (m-1) leading block; the last row and
    column follow from the marginals. Returns (coupling, objective value).
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    n, m = len(mu), len(nu)
    if n == 1 and m == 1:
        pi = np.array([[mu.sum()]])
        return pi, ot_objective_direct(pi, cost, mu, nu, eps)
    if n == 1:
        pi = nu[None, :].copy()
        return pi, ot_objective_direct(pi, cost, mu, nu, eps)
    if m == 1:
        pi = mu[:, None].copy()
        return pi, ot_objective_direct(pi, cost, mu, nu, eps)

    dim = (n - 1) * (m - 1)
    product = np.outer(mu, nu)

    def complete(block_flat):
        batch = block_flat.shape[0]
        pi = np.zeros((batch, n, m))
        pi[:, : n - 1, : m - 1] = block_flat.reshape(batch, n - 1, m - 1)
        pi[:, : n - 1, m - 1] = mu[: n - 1] - pi[:, : n - 1, : m - 1].sum(axis=2)
        pi[:, n - 1, :] = nu[None, :] - pi[:, : n - 1, :].sum(axis=1)
        return pi

    def objective(block_flat):
        pi = complete(block_flat)
        bad = (pi < -1e-12).any(axis=(1, 2))
        pi = np.clip(pi, 0.0, None)
        with np.errstate(divide="ignore", invalid="ignore"):
            logterm = np.where(pi > 0, pi * np.log(np.where(pi > 0, pi, 1.0) / product[None]), 0.0)
        kl = logterm.sum(axis=(1, 2)) + product.sum() - pi.sum(axis=(1, 2))
        vals = (cost[None] * pi).sum(axis=(1, 2)) + eps * kl
        vals[bad] = np.inf
        return vals

    upper = np.minimum.outer(mu[: n - 1], nu[: m - 1]).ravel()

    # stage 1: enumerate every vertex of the transport polytope by brute
    # force over support masks (solve the marginal equations on the mask)
    product = np.outer(mu, nu)
    vertices = [product]
    eq = np.zeros((n + m, n * m))
    for i in range(n):
        eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        eq[n + j, j::m] = 1.0
    rhs = np.concatenate([mu, nu])
    for mask_bits in range(1, 2 ** (n * m)):
        mask = np.array([(mask_bits >> k) & 1 for k in range(n * m)], dtype=bool)
        cols = eq[:, mask]
        if np.linalg.matrix_rank(cols) < mask.sum():
            continue  # not a vertex support (entries underdetermined)
        sol, residual, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
        if np.abs(cols @ sol - rhs).max() > 1e-10 or sol.min() < -1e-12:
            continue
        full = np.zeros(n * m)
        full[mask] = np.clip(sol, 0.0, None)
        vertices.append(full.reshape(n, m))

    # stage 2: grid over blends of each vertex with the product coupling
    # (the entropic optimum sits near a vertex, pulled toward the interior),
    # then zoom-refine the best point in the free-block parameterization
    ts = np.concatenate([[0.0], np.geomspace(1e-8, 1.0, 60)])
    best_x, best_val = None, np.inf
    for vertex in vertices:
        blends = (1 - ts)[:, None] * vertex.ravel()[None, :] + ts[:, None] * product.ravel()[None, :]
        blocks = blends.reshape(-1, n, m)[:, : n - 1, : m - 1].reshape(-1, dim)
        vals = objective(blocks)
        idx = int(np.argmin(vals))
        if vals[idx] < best_val:
            best_val = float(vals[idx])
            best_x = blocks[idx]
    x, val = zoom_grid_minimize(
        objective, np.zeros(dim), upper, rounds=rounds, points=points, start=best_x
    )
    if val > best_val:
        x, val = best_x, best_val
    pi = np.clip(complete(x[None, :])[0], 0.0, None)
    return pi, val


def quadratic_kl_direct(a, b):
    """KL(a (x) a, b (x) b) via the literal tensor product."""
    ta = np.outer(np.ravel(a), np.ravel(a))
    tb = np.outer(np.ravel(b), np.ravel(b))
    return direct_kl(ta, tb)


def ugw_objective_direct(pi, dx, dy, mu, nu, eps, kappa):
    """Unbalanced GW objective with quadratic-KL terms, all by direct evaluation."""
    val = direct_gw_distortion(pi, dx, dy)
    val += eps * quadratic_kl_direct(pi, np.outer(mu, nu))
    val += kappa * quadratic_kl_direct(pi.sum(axis=1), mu)
    val += kappa * quadratic_kl_direct(pi.sum(axis=0), nu)
    return val


def ugw_objective_batch(dx, dy, mu, nu, eps, kappa):
    """Vectorized direct unbalanced GW objective over a batch of couplings.

    The distortion contracts the explicitly materialized 4-index tensor, so
    the evaluation path stays independent of the solver's decomposition.
    """
    tensor = (dx[:, None, :, None] - dy[None, :, None, :]) ** 2
    product = np.outer(mu, nu)

    def objective(batch):
        n, m = dx.shape[0], dy.shape[0]
        pis = batch.reshape(-1, n, m)
        distortion = np.einsum("ijkl,bij,bkl->b", tensor, pis, pis)

        def qkl(a, b):
            ma = a.sum(axis=1)
            mb = b.sum()
            with np.errstate(divide="ignore", invalid="ignore"):
                log_term = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0) / b[None, :]), 0.0)
            kl = log_term.sum(axis=1) + mb - ma
            return 2.0 * ma * kl + (ma - mb) ** 2

        vals = distortion
        vals = vals + eps * qkl(pis.reshape(len(pis), -1), product.ravel())
        vals = vals + kappa * qkl(pis.sum(axis=2), mu)
        vals = vals + kappa * qkl(pis.sum(axis=1), nu)
        return vals

    return objective


def best_permutation(dx, dy):
    """Exhaustively find the permutation minimizing the GW distortion."""
    n = dx.shape[0]
    best_perm, best_val = None, math.inf
    for perm in itertools.permutations(range(n)):
        val = 0.0
        for i in range(n):
            for k in range(n):
                val += (dx[i, k] - dy[perm[i], perm[k]]) ** 2
        if val < best_val:
            best_perm, best_val = perm, val
    return np.array(best_perm), best_val / n**2


def block_plan(block_sizes, leak_levels=()):
    """Uniform-marginal coupling with diagonal blocks plus hierarchical leakage.

    ``block_sizes`` gives the size of each diagonal block. ``leak_levels``
    is a sequence of (group_size_in_blocks, relative_mass) pairs adding
    uniform coupling inside growing groups of blocks; strictly disjoint
    equal blocks make every nontrivial split equally coherent (the second
    singular value is degenerate), so a little hierarchical leakage pins
    the split order without moving the partition.
    """
    sizes = list(block_sizes)
    n = sum(sizes)
    pi = np.zeros((n, n))
    starts = np.cumsum([0] + sizes)
    for b, size in enumerate(sizes):
        s = starts[b]
        pi[s : s + size, s : s + size] = 1.0 / (size * n)
    for group_blocks, rel in leak_levels:
        for g0 in range(0, len(sizes), group_blocks):
            blocks = list(range(g0, min(g0 + group_blocks, len(sizes))))
            idx = np.concatenate([np.arange(starts[b], starts[b + 1]) for b in blocks])
            pi[np.ix_(idx, idx)] += rel / (len(idx) * n)
    pi *= 1.0 / pi.sum()
    return pi
