"""Corrector equation and homogenised coefficients of the environment-driven walk.

For each y the corrector v(., y) is the mu-centred solution of
``(I - P) v = g(., y)``.  Its y-gradient solves the same equation with the
y-gradient of g on the right-hand side.  The effective diffusion and drift
are mu-averages built from v, g and the second-moment matrix alpha.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .env import ergodicity_certificate, neumann_horizon, stationary_distribution
from .errors import NotCentered, SingularSystem
from .kernel import check_unit_cube, validation_grid

log = logging.getLogger(__name__)

CENTERING_TOL = 1e-9
CLAMP_TOL = 1e-10


class PoissonSolver:
    """Direct solver for the centred Poisson equation of one environment chain."""

    def __init__(self, env, mu=None):
        self.env = env
        self.P = env.P
        self.mu = stationary_distribution(env) if mu is None else np.asarray(mu, dtype=float)
        n = env.n_states
        aug = np.vstack([np.eye(n) - self.P, self.mu[None, :]])
        if np.linalg.matrix_rank(aug) < n:
            raise SingularSystem("Poisson system is rank deficient: chain is not irreducible")
        # (I - P + 1 mu^T) v = g has the centred solution whenever mu.g = 0
        self._lu = lu_factor(np.eye(n) - self.P + np.outer(np.ones(n), self.mu))

    def solve(self, g, check=True):
        """Centred solution v of (I - P) v = g; ``g`` has shape (N,) or (N, k)."""
        g = np.asarray(g, dtype=float)
        if check:
            mean = np.tensordot(self.mu, g, axes=(0, 0))
            if np.max(np.abs(mean)) > CENTERING_TOL:
                raise NotCentered(f"right-hand side has mu-mean {np.max(np.abs(mean)):.3g}")
        flat = g.reshape(g.shape[0], -1)
        v = lu_solve(self._lu, flat)
        # re-centre against roundoff
        v -= np.outer(np.ones(v.shape[0]), self.mu @ v)
        return v.reshape(g.shape)


def solve_poisson(env, g_column, mu=None):
    """Unique mu-centred solution of (I - P) v = g_column."""
    return PoissonSolver(env, mu).solve(g_column)


def neumann_poisson(env, g_column, mu=None, cert=None, tol=1e-12):
    """Truncated series sum_{n <= n*} (P^n - 1 mu^T) g with gamma c^{n*} <= tol."""
    if mu is None:
        mu = stationary_distribution(env)
    if cert is None:
        cert = ergodicity_certificate(env)
    g = np.asarray(g_column, dtype=float)
    n_star = neumann_horizon(cert, tol)
    mean = np.tensordot(mu, g, axes=(0, 0))
    term = g.copy()
    total = np.zeros_like(g)
    for _ in range(n_star + 1):
        total += term - mean
        term = np.tensordot(env.P, term, axes=(1, 0))
    return total


@dataclass
class Corrector:
    """Corrector and its gradient at one point y: v[i] = v(i, y), grad_v[i, k, j] = dv_k/dy_j."""

    v: np.ndarray
    grad_v: np.ndarray


@dataclass
class _Fields:
    """Per-state quantities at a batch of points; leading axes (n_points, N)."""

    g: np.ndarray
    dg: np.ndarray
    alpha_diag: np.ndarray
    v: np.ndarray
    dv: np.ndarray


class Homogenizer:
    """Evaluates correctors and effective coefficients for an (environment, kernel) pair."""

    def __init__(self, env, kernel, mu=None):
        self.env = env
        self.kernel = kernel
        self.solver = PoissonSolver(env, mu)
        self.mu = self.solver.mu
        self.d = kernel.d
        self.N = env.n_states

    # per-state fields

    def fields(self, y, gradients=True):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n, d, N = y.shape[0], self.d, self.N
        g = np.empty((n, N, d))
        alpha = np.empty((n, N, d))
        dg = np.empty((n, N, d, d)) if gradients else None
        for i in range(N):
            p = self.kernel.probs(i, y)
            g[:, i] = p[:, 0::2] - p[:, 1::2]
            alpha[:, i] = p[:, 0::2] + p[:, 1::2]
            if gradients:
                dg[:, i] = self.kernel.mean_step_grad(i, y)
        v = self._solve_states(g)
        dv = self._solve_states(dg) if gradients else None
        return _Fields(g, dg, alpha, v, dv)

    def _solve_states(self, rhs):
        # rhs (n, N, ...) -> solve along the state axis for every point at once
        moved = np.moveaxis(rhs, 1, 0)
        return np.moveaxis(self.solver.solve(moved), 0, 1)

    def corrector(self, y):
        f = self.fields(np.asarray(y, dtype=float)[None, :])
        return Corrector(f.v[0], f.dv[0])

    # effective coefficients

    def a_bar(self, y):
        y = np.asarray(y, dtype=float)
        f = self.fields(np.atleast_2d(y), gradients=False)
        out = self._a_bar(f)
        return out if y.ndim > 1 else out[0]

    def _a_bar(self, f):
        g, v = f.g, f.v
        d = self.d
        per = f.alpha_diag[..., :, None] * np.eye(d) + g[..., :, None] * v[..., None, :] \
            + v[..., :, None] * g[..., None, :] - 2.0 * g[..., :, None] * g[..., None, :]
        a = np.einsum("i,nikl->nkl", self.mu, per)
        return 0.5 * (a + np.swapaxes(a, 1, 2))

    def b_bar(self, y):
        y = np.asarray(y, dtype=float)
        f = self.fields(np.atleast_2d(y))
        out = self._b_bar(f)
        return out if y.ndim > 1 else out[0]

    def _b_bar(self, f):
        # b_k = sum_j d(v_k - g_k)/dy_j g_j
        per = np.einsum("nikj,nij->nik", f.dv - f.dg, f.g)
        return np.einsum("i,nik->nk", self.mu, per)

    def sigma_bar(self, y):
        return sqrt_psd(self.a_bar(y))

    def covariance_floor(self, y):
        """min eigenvalue of int (alpha - g g^T) dmu at each point."""
        y = np.asarray(y, dtype=float)
        f = self.fields(np.atleast_2d(y), gradients=False)
        per = f.alpha_diag[..., :, None] * np.eye(self.d) - f.g[..., :, None] * f.g[..., None, :]
        m = np.einsum("i,nikl->nkl", self.mu, per)
        return np.linalg.eigvalsh(m)[:, 0]

    def identity_residual(self, y):
        """Max entrywise gap between int (v g^T + g v^T - g g^T) dmu and int (v v^T - Pv Pv^T) dmu."""
        f = self.fields(np.atleast_2d(np.asarray(y, dtype=float)), gradients=False)
        g, v = f.g, f.v
        Pv = np.einsum("ij,njk->nik", self.env.P, v)
        lhs = g[..., :, None] * v[..., None, :] + v[..., :, None] * g[..., None, :] - g[..., :, None] * g[..., None, :]
        rhs = v[..., :, None] * v[..., None, :] - Pv[..., :, None] * Pv[..., None, :]
        lhs = np.einsum("i,nikl->nkl", self.mu, lhs)
        rhs = np.einsum("i,nikl->nkl", self.mu, rhs)
        return np.abs(lhs - rhs).max(axis=(1, 2)), lhs, rhs

    # discrete pre-limit quantities

    def _shifted(self, y, m):
        # (n, 2d+1, d): the point itself, then y + u/m for every direction u
        U = self.kernel.directions.vectors.astype(float)
        return np.concatenate([y[:, None, :], y[:, None, :] + U[None, :, :] / m], axis=1)

    def _shift_fields(self, y, m):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        pts = self._shifted(y, m)
        n, k, d = pts.shape
        f = self.fields(pts.reshape(n * k, d), gradients=False)
        return y, f, (n, k)

    def drift_bm(self, i, y, m, weights=None):
        """b^(m)(i, y) = sum_u w(i,y,u) [(v-g)(i, y+u/m) - (v-g)(i, y)], w = p unless given."""
        y, f, (n, k) = self._shift_fields(y, m)
        i = np.broadcast_to(np.asarray(i, dtype=np.int64), (n,))
        vg = (f.v - f.g).reshape(n, k, self.N, self.d)[np.arange(n), :, i, :]
        if weights is None:
            weights = self.kernel.probs(i, y)
        return np.einsum("nu,nuk->nk", weights, vg[:, 1:, :] - vg[:, :1, :])

    def drift_cm(self, i, y, m):
        """Same sum as :meth:`drift_bm` with the reflected kernel q as weights."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        check_unit_cube(y)
        q = self.kernel.reflected_probs(i, y)
        return self.drift_bm(i, y, m, weights=q)

    def bracket_am(self, i, y, m):
        """Conditional covariance of J + v(xi', S'/m) given (xi = i, S/m = y)."""
        y, f, (n, k) = self._shift_fields(y, m)
        N, d = self.N, self.d
        i = np.broadcast_to(np.asarray(i, dtype=np.int64), (n,))
        v = f.v.reshape(n, k, N, d)
        g = f.g.reshape(n, k, N, d)
        alpha = f.alpha_diag.reshape(n, k, N, d)
        rows = self.env.P[i]                                   # (n, N)
        Pv = np.einsum("nj,nujk->nuk", rows, v[:, 1:])         # (n, 2d, d)
        Pvv = np.einsum("nj,nujk,nujl->nukl", rows, v[:, 1:], v[:, 1:])
        p = self.kernel.probs(i, y)
        U = self.kernel.directions.vectors.astype(float)
        cross = U[None, :, :, None] * Pv[:, :, None, :] + Pv[:, :, :, None] * U[None, :, None, :]
        shifted = np.einsum("nu,nukl->nkl", p, Pvv + cross)
        v0 = v[np.arange(n), 0, i]
        vg0 = (v - g)[np.arange(n), :, i, :]
        b = np.einsum("nu,nuk->nk", p, vg0[:, 1:] - vg0[:, :1])
        w = v0 + b
        a0 = alpha[np.arange(n), 0, i][:, :, None] * np.eye(d)
        return a0 - w[:, :, None] * w[:, None, :] + shifted

    def limit_a(self, i, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[0]
        i = np.broadcast_to(np.asarray(i, dtype=np.int64), (n,))
        f = self.fields(y, gradients=False)
        idx = np.arange(n)
        v, g = f.v[idx, i], f.g[idx, i]
        Pvv = np.einsum("nj,njk,njl->nkl", self.env.P[i], f.v, f.v)
        return (f.alpha_diag[idx, i][:, :, None] * np.eye(self.d)
                + g[:, :, None] * v[:, None, :] + v[:, :, None] * g[:, None, :]
                - 2.0 * g[:, :, None] * g[:, None, :] + Pvv - v[:, :, None] * v[:, None, :])

    def drift_bound_constant(self, grid=None):
        """C = 2 * sup |grad(v - g)|_F * (number of directions), sup over the validation grid."""
        if grid is None:
            grid = validation_grid(self.d)
        sup = 0.0
        for chunk in np.array_split(grid, max(1, grid.shape[0] // 2000)):
            f = self.fields(chunk)
            sup = max(sup, float(np.linalg.norm(f.dv - f.dg, axis=(2, 3)).max()))
        return 2.0 * sup * 2 * self.d


def sqrt_psd(a):
    """Symmetric square root by spectral decomposition; eigenvalues clamped at zero."""
    a = np.asarray(a, dtype=float)
    w, V = np.linalg.eigh(a)
    low = w.min()
    if low < 0:
        if low < -CLAMP_TOL:
            raise ValueError(f"matrix is not positive semidefinite (eigenvalue {low:.3g})")
        log.debug("clamped eigenvalue %.3g to zero", low)
    w = np.clip(w, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(w), V)


class EffectiveCoeffs:
    """Homogenised coefficients y -> a_bar(y), b_bar(y), sigma_bar(y)."""

    def __init__(self, homogenizer, grid=None):
        self.h = homogenizer
        self._grid = grid

    def a_bar(self, y):
        return self.h.a_bar(y)

    def b_bar(self, y):
        return self.h.b_bar(y)

    def sigma_bar(self, y):
        return self.h.sigma_bar(y)

    @cached_property
    def ellipticity_floor(self):
        """min over the validation grid of the lowest eigenvalue of a_bar, floored at 0."""
        grid = validation_grid(self.h.d) if self._grid is None else self._grid
        low = np.inf
        for chunk in np.array_split(grid, max(1, grid.shape[0] // 2000)):
            low = min(low, float(np.linalg.eigvalsh(self.a_bar(chunk))[:, 0].min()))
        return max(low, 0.0)


def effective_coeffs(env, kernel, mu=None, grid=None):
    return EffectiveCoeffs(Homogenizer(env, kernel, mu), grid)


def discrete_drift_bm(env, kernel, i, y, m, homogenizer=None):
    h = homogenizer or Homogenizer(env, kernel)
    return _squeeze(h.drift_bm(i, y, m), y)


def discrete_drift_cm(env, kernel, i, y, m, homogenizer=None):
    h = homogenizer or Homogenizer(env, kernel)
    return _squeeze(h.drift_cm(i, y, m), y)


def discrete_bracket_am(env, kernel, i, y, m, homogenizer=None):
    h = homogenizer or Homogenizer(env, kernel)
    return _squeeze(h.bracket_am(i, y, m), y)


def limit_a(env, kernel, i, y, homogenizer=None):
    h = homogenizer or Homogenizer(env, kernel)
    return _squeeze(h.limit_a(i, y), y)


def _squeeze(out, y):
    return out[0] if np.asarray(y).ndim == 1 else out
