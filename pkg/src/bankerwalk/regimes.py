"""Deadlock-time regimes of the two-dimensional limit diffusion.

The sign of the correlation ``s`` in the corner covariance decides how the
mean hitting time of {x1 + x2 >= lambda} behaves as lambda -> 2: bounded
(s > 0), logarithmic (s = 0) or polynomial (s < 0).
"""
import enum
from dataclasses import dataclass, field

import numpy as np

from .rsde import DiffusionSpec, hit_times

DEAD_ZONE = 1e-12
DEFAULT_GRID = (1.5, 1.75, 1.875, 1.9375, 1.96875)
MAX_CENSORED = 0.2


class Regime(enum.Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"
    NULL = "Null"


@dataclass(frozen=True)
class CovarianceParams:
    rho1: float
    rho2: float
    s: float

    def __post_init__(self):
        if self.rho1 <= 0 or self.rho2 <= 0:
            raise ValueError("rho1 and rho2 must be positive")
        if not -1.0 < self.s < 1.0:
            raise ValueError("s must lie in (-1, 1)")
        assert np.linalg.eigvalsh(self.matrix())[0] > 0

    def matrix(self):
        r1, r2, s = self.rho1, self.rho2, self.s
        return np.array([[r1 * r1, s * r1 * r2], [s * r1 * r2, r2 * r2]])

    @classmethod
    def from_matrix(cls, a):
        a = np.asarray(a, dtype=float)
        r1, r2 = np.sqrt(a[0, 0]), np.sqrt(a[1, 1])
        return cls(r1, r2, a[0, 1] / (r1 * r2))


@dataclass
class Spectrum:
    lambda1: float
    lambda2: float
    delta: float
    E1: np.ndarray
    E2: np.ndarray


def spectrum(params):
    """Closed-form eigenpairs of the corner covariance; E1, E2 are unit vectors.

    delta is evaluated as hypot(r1^2 - r2^2, 2 s r1 r2) and lambda2 as det / lambda1,
    which equal the textbook forms but keep full accuracy for |s| tiny.
    """
    r1, r2, s = params.rho1, params.rho2, params.s
    a11, a22, a12 = r1 * r1, r2 * r2, s * r1 * r2
    delta = float(np.hypot(a11 - a22, 2.0 * a12))
    lam1 = 0.5 * (a11 + a22 + delta)
    lam2 = (a11 * a22 - a12 * a12) / lam1
    if s == 0.0:
        E1 = np.array([1.0, 0.0]) if r1 >= r2 else np.array([0.0, 1.0])
    else:
        # (lam1 - a22, a12) and (a12, lam1 - a11) span the same line; pick the form
        # whose nonzero entry is a sum of nonnegative terms
        if a11 >= a22:
            E1 = np.array([0.5 * (a11 - a22 + delta), a12])
        else:
            E1 = np.array([a12, 0.5 * (a22 - a11 + delta)])
        E1 = E1 / np.abs(E1).max()
        E1 = E1 / np.linalg.norm(E1)
        if E1[0] < 0:
            E1 = -E1
    E2 = np.array([-E1[1], E1[0]])
    return Spectrum(lam1, lam2, delta, E1, E2)


def classify(s):
    if not -1.0 < s < 1.0:
        raise ValueError("s must lie in (-1, 1)")
    if abs(s) <= DEAD_ZONE:
        return Regime.NULL
    return Regime.POSITIVE if s > 0 else Regime.NEGATIVE


def beta_bounds(s):
    """Exponent bounds (beta_minus, beta_plus) = (-s, s(s-3)/(1+s)) of the negative regime."""
    if not -1.0 < s < 0.0:
        raise ValueError("exponent bounds are defined for s in (-1, 0)")
    return -s, s * (s - 3.0) / (1.0 + s)


def _linfit(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": float(r2)}


@dataclass
class RegimeEstimate:
    params: CovarianceParams
    lambda_grid: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    censored_fractions: np.ndarray
    classification: Regime
    fit: dict = field(default_factory=dict)
    beta_bounds: tuple = None

    @property
    def flagged(self):
        """Grid points whose censoring exceeds the usable limit."""
        return self.censored_fractions > MAX_CENSORED

    def verdict(self):
        f = self.fit
        if self.classification is Regime.NULL:
            return f"Null: log fit R\u00b2={f['r2']:.4f} slope={f['slope']:.4f}"
        if self.classification is Regime.NEGATIVE:
            lo, hi = 0.5 * self.beta_bounds[0], self.beta_bounds[1]
            return f"Negative: slope \u03b2\u0302={f['slope']:.4f} in [{lo:.4g}, {hi:.4g}]"
        return f"Positive: bounded (ratio={f['ratio']:.4f})"

    def passes(self):
        f = self.fit
        if self.flagged.any():
            return False
        if self.classification is Regime.NULL:
            return f["r2"] >= 0.95 and f["slope"] > 0
        if self.classification is Regime.NEGATIVE:
            lo, hi = 0.5 * self.beta_bounds[0], self.beta_bounds[1]
            return lo <= f["slope"] <= hi
        return f["ratio"] <= 2.0


def estimate_mean_deadlock(spec, lambda_grid=DEFAULT_GRID, trials=2000, dt=1e-4, t_cap=1e3, seed=0, workers=1):
    """Monte Carlo E(T_lambda) from the origin over a lambda grid, with the regime's fit.

    Each grid point uses its own block of replica indices so points are
    independent samples.  Censored replicas enter the mean at t_cap.
    """
    if spec.d != 2:
        raise ValueError("regime analysis is two-dimensional")
    params = CovarianceParams.from_matrix(spec.a_bar(np.ones((1, 2)))[0])
    grid = np.asarray(lambda_grid, dtype=float)
    means, ses, cens = [], [], []
    for k, lam in enumerate(grid):
        sub = DiffusionSpec(2, spec.drift, spec.dispersion, float(lam))
        sample = hit_times(sub, [0.0, 0.0], dt, t_cap, trials, seed + 1_000_003 * k, workers=workers)
        t = sample.t_hit
        means.append(t.mean())
        ses.append(t.std(ddof=1) / np.sqrt(t.size) if t.size > 1 else 0.0)
        cens.append(sample.censored_fraction)
    means, ses, cens = np.array(means), np.array(ses), np.array(cens)
    regime = classify(params.s)
    x = -np.log(2.0 - grid)
    if regime is Regime.NULL:
        fit = _linfit(x, means)
    elif regime is Regime.NEGATIVE:
        fit = _linfit(x, np.log(means))
    else:
        fit = {"ratio": float(means.max() / means[0])}
    bounds = beta_bounds(params.s) if regime is Regime.NEGATIVE else None
    return RegimeEstimate(params, grid, means, ses, cens, regime, fit, bounds)


# recentred Lyapunov diagnostics


def q_diagnostic(params, x):
    """Quadratic form Q = <x, a^{-1} x>, its root, the correction Z, A = sqrt(Q) + Z and kappa weights."""
    r1, r2, s = params.rho1, params.rho2, params.s
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    Q = (r1 ** -2 * x1 * x1 + r2 ** -2 * x2 * x2 - 2.0 * s / (r1 * r2) * x1 * x2) / (1.0 - s * s)
    Q = np.maximum(Q, 0.0)
    Z = s / np.sqrt(1.0 - s * s) * (x1 / r1 + x2 / r2)
    kappa1 = (r1 ** -2 - s / (r1 * r2) * x2) / (1.0 - s * s)
    kappa2 = (r2 ** -2 - s / (r1 * r2) * x1) / (1.0 - s * s)
    root = np.sqrt(Q)
    return {"Q": Q, "Q_sqrt": root, "Z": Z, "A": root + Z, "kappa1": kappa1, "kappa2": kappa2}


def quadratic_form(params, x):
    """Q through the inverse matrix directly, for cross-checking the expanded formula."""
    x = np.asarray(x, dtype=float)
    inv = np.linalg.inv(params.matrix())
    return np.einsum("...i,ij,...j->...", x, inv, x)


def theta(params, beta, gamma_t):
    """Drift bracket of A^beta: (beta-1)(1 + 2 s gamma + 2 s^2/(1-s)) + 1 + s gamma."""
    s = params.s if isinstance(params, CovarianceParams) else float(params)
    return (beta - 1.0) * (1.0 + 2.0 * s * gamma_t + 2.0 * s * s / (1.0 - s)) + 1.0 + s * gamma_t


def equivalence_check(params, X, q_floor=1e-12):
    """Empirical range (c_lower, c_upper) of A / sqrt(Q) along a path, skipping Q < q_floor.

    ``X`` is an RSDEPath or an array of points in [0,1]^2.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float).reshape(-1, 2)
    diag = q_diagnostic(params, X)
    ok = diag["Q"] >= q_floor
    if not ok.any():
        return {"c_lower": np.nan, "c_upper": np.nan, "n_points": 0}
    ratio = diag["A"][ok] / diag["Q_sqrt"][ok]
    return {"c_lower": float(ratio.min()), "c_upper": float(ratio.max()), "n_points": int(ok.sum())}


def gamma_range(s):
    """Exact range of Z / (s sqrt(Q)) over the closed positive quadrant, for rho1 = rho2 = 1 scaling."""
    # (x1 + x2) / sqrt(x1^2 + x2^2 - 2 s x1 x2): 1 on the axes, sqrt(2/(1-s)) on the diagonal
    ends = (1.0, np.sqrt(2.0 / (1.0 - s)))
    return min(ends), max(ends)
