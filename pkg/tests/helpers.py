"""Independent oracles and instance generators shared by the tests."""

import itertools

import numpy as np

from lyapctl.discretization import TransitionFamily
from lyapctl.lp_core import StabilizationLP


def random_full_matrices(rng, n_cells, n_actions, attractor_prob=0.6, density=0.6):
    """Row-stochastic (n_cells+1)-square matrices; the last index is the attractor."""
    N = n_cells + 1
    mats = []
    for _ in range(n_actions):
        P = np.zeros((N, N))
        for i in range(n_cells):
            support = rng.random(N) < density
            support[N - 1] = rng.random() < attractor_prob
            if not support.any():
                support[rng.integers(N)] = True
            w = rng.random(N) * support
            P[i] = w / w.sum()
        P[N - 1, N - 1] = 1.0
        mats.append(P)
    return mats


def random_instance(seed, n_cells=None, n_actions=None, gamma=None):
    rng = np.random.default_rng(seed)
    n_cells = n_cells or int(rng.integers(2, 7))
    n_actions = n_actions or int(rng.integers(1, 4))
    gamma = gamma or float(rng.choice([1.05, 1.2]))
    mats = random_full_matrices(rng, n_cells, n_actions)
    G = rng.random((n_actions, n_cells)) * 2.0
    m = rng.random(n_cells) + 0.1
    return StabilizationLP(gamma, m, G, TransitionFamily.from_full(mats))


def dense_sub(spec):
    return [mat.toarray() for mat in spec.family.sub]


def policy_cost(spec, actions):
    """``(G^u)'(I - gamma P1_u')^{-1} m`` by a dense solve, or None if the policy is not transient."""
    subs = dense_sub(spec)
    n = spec.n_cells
    P = np.stack([subs[a][j] for j, a in enumerate(actions)])
    rho = max(abs(np.linalg.eigvals(spec.gamma * P))) if n else 0.0
    if rho >= 1.0 - 1e-12:
        return None
    Gu = spec.G[list(actions), np.arange(n)]
    mu = np.linalg.solve(np.eye(n) - spec.gamma * P.T, spec.m)
    return float(Gu @ mu)


def brute_force_optimum(spec):
    """Minimum cost over all M^(N-1) deterministic policies; None if none is admissible."""
    best, best_u = None, None
    for u in itertools.product(range(spec.M), repeat=spec.n_cells):
        c = policy_cost(spec, u)
        if c is not None and (best is None or c < best):
            best, best_u = c, u
    return best, best_u


def chain_family(n_cells=2):
    """Deterministic chain 0 -> 1 -> ... -> attractor with a single action."""
    N = n_cells + 1
    P = np.zeros((N, N))
    for i in range(N - 1):
        P[i, i + 1] = 1.0
    P[N - 1, N - 1] = 1.0
    return TransitionFamily.from_full([P])


def scalar_spec(p=0.8, gamma=1.2, G=2.0, m=1.0):
    P = np.array([[p, 1.0 - p], [0.0, 1.0]])
    return StabilizationLP(gamma, [m], [[G]], TransitionFamily.from_full([P]))


def isolated_cell_spec(gamma=1.2):
    """Three non-attractor cells; cell 0 only maps to itself under every action."""
    A = np.array([[1.0, 0, 0, 0],
                  [0, 0.5, 0.2, 0.3],
                  [0, 0.1, 0.3, 0.6],
                  [0, 0, 0, 1.0]])
    B = np.array([[1.0, 0, 0, 0],
                  [0, 0.1, 0.1, 0.8],
                  [0, 0.6, 0.4, 0.0],
                  [0, 0, 0, 1.0]])
    G = np.array([[1.0, 2.0, 1.0], [2.0, 3.0, 0.5]])
    return StabilizationLP(gamma, np.ones(3), G, TransitionFamily.from_full([A, B]))
