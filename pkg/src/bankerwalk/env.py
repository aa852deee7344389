"""Finite-state environment chain: validation, invariant law, ergodicity constants."""
from bisect import bisect_right
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NoDoeblinPower, SingularSystem

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EnvSpec:
    """Transition matrix of the environment chain (row i = law of the next state from i)."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ValueError(f"transition matrix must be square and non-empty, got shape {P.shape}")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def n_states(self):
        return self.P.shape[0]

    def permuted(self, perm):
        perm = np.asarray(perm)
        return EnvSpec(self.P[np.ix_(perm, perm)])


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    index: tuple = ()

    def __str__(self):
        return self.message


@dataclass(frozen=True)
class ErgodicityCert:
    m_doeblin: int
    eta: float
    gamma: float
    c: float
    kappa: float

    def bound(self, n):
        return self.gamma * self.c ** n


def _support_period(support):
    """Period of an irreducible chain from BFS levels: gcd of level[u] + 1 - level[v] over edges."""
    n = support.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in np.flatnonzero(support[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    period = 0
    for u, v in zip(*np.nonzero(support)):
        period = gcd(period, int(level[u] + 1 - level[v]))
    return period


def validate_env(spec):
    """List every violated condition of the environment chain (empty if valid)."""
    P = spec.P
    out = []
    for i, row in enumerate(P):
        if np.any(row < 0):
            out.append(Violation("negative", f"row {i} has negative entries", (i,)))
        if abs(row.sum() - 1.0) > ROW_SUM_TOL:
            out.append(Violation("row_sum", f"row {i} sums to {row.sum()!r}, not 1", (i,)))
    support = P > 0
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    if n_comp > 1:
        out.append(Violation(
            "reducible",
            f"not irreducible ({n_comp} strongly connected classes)",
            tuple(int(x) for x in labels),
        ))
    else:
        period = _support_period(support)
        if period != 1:
            out.append(Violation("periodic", f"periodic (period {period})", (period,)))
    return out


def stationary_distribution(spec):
    """Unique mu with mu^T P = mu^T and sum(mu) = 1, from the (N+1)-equation system."""
    P = spec.P
    n = P.shape[0]
    A = np.vstack([(np.eye(n) - P).T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    if np.linalg.matrix_rank(A) < n:
        raise SingularSystem("invariant measure is not unique: chain is not irreducible")
    mu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return mu / mu.sum()


def matrix_powers(P, n_max):
    out = np.empty((n_max + 1,) + P.shape)
    out[0] = np.eye(P.shape[0])
    for n in range(1, n_max + 1):
        out[n] = out[n - 1] @ P
    return out


def ergodicity_certificate(spec):
    """Doeblin power and geometric mixing constants (gamma, c) from the Dobrushin coefficient."""
    P = spec.P
    n = P.shape[0]
    Pm = np.eye(n)
    for m in range(1, n * n + 1):
        Pm = Pm @ P
        eta = float(Pm.min())
        if eta > 0:
            break
    else:
        raise NoDoeblinPower(f"no power P^m with m <= {n * n} is strictly positive")
    diffs = np.abs(Pm[:, None, :] - Pm[None, :, :]).sum(axis=2)
    kappa = float(min(0.5 * diffs.max(), 1.0))
    c = max(kappa ** (1.0 / m), 1e-6)
    gamma = 2.0 / c ** m
    return ErgodicityCert(m_doeblin=m, eta=eta, gamma=gamma, c=c, kappa=kappa)


def certificate_violations(spec, cert, mu=None, n_max=200, atol=1e-12):
    """n in 1..n_max at which max_i sum_j |P^n(i,j) - mu(j)| exceeds gamma c^n (+ roundoff atol)."""
    if mu is None:
        mu = stationary_distribution(spec)
    bad = []
    Pn = np.eye(spec.n_states)
    for n in range(1, n_max + 1):
        Pn = Pn @ spec.P
        dist = np.abs(Pn - mu[None, :]).sum(axis=1).max()
        if dist > cert.bound(n) + atol:
            bad.append(n)
    return bad


def neumann_horizon(cert, tol=1e-12):
    """Smallest n with gamma c^n <= tol."""
    if cert.c <= 0 or cert.gamma <= tol:
        return 0
    return max(int(np.ceil(np.log(tol / cert.gamma) / np.log(cert.c))), 0)


def sample_env_path(spec, xi0, n_steps, rng):
    """Environment trajectory of length n_steps + 1 started at xi0."""
    n = spec.n_states
    if not 0 <= xi0 < n:
        raise ValueError(f"initial state {xi0} outside 0..{n - 1}")
    cdf = np.cumsum(spec.P, axis=1)
    cdf[:, -1] = np.inf
    u = rng.random(n_steps)
    path = np.empty(n_steps + 1, dtype=np.int64)
    path[0] = xi0
    state = xi0
    rows = [list(r) for r in cdf]
    for k in range(n_steps):
        state = bisect_right(rows[state], u[k])
        path[k + 1] = state
    return path
