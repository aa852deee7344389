"""Environment- and space-dependent nearest-neighbour step kernels.

Directions are ordered ``(e_1, -e_1, ..., e_d, -e_d)``: column ``2l`` is the
step ``+e_l`` and column ``2l + 1`` the step ``-e_l``.  All evaluation
methods are batched: ``i`` has shape ``(n,)`` and ``y`` shape ``(n, d)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError, OutOfDomain

POSITIVITY_FLOOR = 1e-3
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DirectionSet:
    d: int
    vectors: np.ndarray

    def __len__(self):
        return 2 * self.d


def direction_set(d):
    vecs = np.zeros((2 * d, d), dtype=np.int64)
    for ell in range(d):
        vecs[2 * ell, ell] = 1
        vecs[2 * ell + 1, ell] = -1
    vecs.setflags(write=False)
    return DirectionSet(d, vecs)


@dataclass(frozen=True)
class PerturbationTerm:
    """One record ``amplitude * cos(2 pi <freq, y> + phase)`` added to p(state, ., direction)."""

    state: int
    direction: int
    freq: tuple
    amplitude: float
    phase: float = 0.0


def _batch(i, y, d):
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {y.shape}")
    i = np.broadcast_to(np.asarray(i, dtype=np.int64), (y.shape[0],))
    return i, y, scalar


class Kernel:
    """Shared derived quantities; subclasses provide ``probs`` and ``probs_grad``."""

    d: int
    n_states: int

    @property
    def directions(self):
        return direction_set(self.d)

    def probs(self, i, y):
        raise NotImplementedError

    def probs_grad(self, i, y):
        """Array (n, 2d, d) of d p(i, y, u) / d y_j."""
        raise NotImplementedError

    def mean_step(self, i, y):
        p = self.probs(i, y)
        return p[:, 0::2] - p[:, 1::2]

    def second_moment_diag(self, i, y):
        p = self.probs(i, y)
        return p[:, 0::2] + p[:, 1::2]

    def mean_step_grad(self, i, y):
        """Array (n, d, d), entry [k, j] = d g_k / d y_j."""
        dp = self.probs_grad(i, y)
        return dp[:, 0::2, :] - dp[:, 1::2, :]

    def reflected_probs(self, i, y):
        """Kernel q: outward mass folded back onto the inward direction on faces of [0,1]^d."""
        i, y, _ = _batch(i, y, self.d)
        check_unit_cube(y)
        p = self.probs(i, y).copy()
        for ell in range(self.d):
            tot = p[:, 2 * ell] + p[:, 2 * ell + 1]
            low = y[:, ell] == 0.0
            high = y[:, ell] == 1.0
            p[low, 2 * ell] = tot[low]
            p[low, 2 * ell + 1] = 0.0
            p[high, 2 * ell] = 0.0
            p[high, 2 * ell + 1] = tot[high]
        return p

    def reflected_mean_step(self, i, y):
        q = self.reflected_probs(i, y)
        return q[:, 0::2] - q[:, 1::2]


def check_unit_cube(y):
    y = np.asarray(y)
    if np.any(y < 0.0) or np.any(y > 1.0) or np.any(np.isnan(y)):
        raise OutOfDomain("point outside the closed unit hypercube")


@dataclass(frozen=True, eq=False)
class TrigKernel(Kernel):
    """p(i, y, u) = base(i, u) + eps * sum_f [C(i,u,f) cos(2 pi k_f.y) + S(i,u,f) sin(2 pi k_f.y)].

    Build with :func:`make_kernel`, which normalises and centres the tables.
    """

    base: np.ndarray
    freqs: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    amplitude_budget: float = 1.0
    p_min: float = field(default=0.0)

    @property
    def d(self):
        return self.base.shape[1] // 2

    @property
    def n_states(self):
        return self.base.shape[0]

    def _phases(self, y):
        arg = TWO_PI * (y @ self.freqs.T) if self.freqs.size else np.zeros((y.shape[0], 0))
        return np.cos(arg), np.sin(arg)

    def probs(self, i, y):
        i, y, _ = _batch(i, y, self.d)
        p = self.base[i].copy()
        if self.freqs.shape[0]:
            cs, sn = self._phases(y)
            pert = np.einsum("nuf,nf->nu", self.cos_coef[i], cs) + np.einsum("nuf,nf->nu", self.sin_coef[i], sn)
            p += self.amplitude_budget * pert
        return p

    def probs_grad(self, i, y):
        i, y, _ = _batch(i, y, self.d)
        out = np.zeros((y.shape[0], 2 * self.d, self.d))
        if self.freqs.shape[0]:
            cs, sn = self._phases(y)
            # d/dy_j of C cos + S sin = 2 pi k_j (S cos - C sin)
            w = np.einsum("nuf,nf->nuf", self.sin_coef[i], cs) - np.einsum("nuf,nf->nuf", self.cos_coef[i], sn)
            out = self.amplitude_budget * TWO_PI * np.einsum("nuf,fj->nuj", w, self.freqs)
        return out

    def _amplitude(self):
        return self.amplitude_budget * np.hypot(self.cos_coef, self.sin_coef)

    def derivative_bounds(self):
        """(sup |grad p|_2, sup |hessian p|_2) over all (i, y, u), from the coefficient table."""
        amp = self._amplitude()
        knorm = TWO_PI * np.linalg.norm(self.freqs, axis=1) if self.freqs.size else np.zeros(0)
        first = float((amp * knorm).sum(axis=2).max()) if amp.size else 0.0
        second = float((amp * knorm ** 2).sum(axis=2).max()) if amp.size else 0.0
        return first, second

    @property
    def lipschitz(self):
        return self.derivative_bounds()[0]


def _canonical_freq(k):
    k = np.asarray(k, dtype=float)
    nz = np.flatnonzero(k)
    if nz.size and k[nz[0]] < 0:
        return -k, -1.0
    return k, 1.0


def make_kernel(base, terms=(), mu=None, amplitude_budget=1.0, center=True):
    """Build a trigonometric-polynomial kernel.

    Each state's perturbation is projected to sum to zero over directions, so
    rows remain probability vectors.  With ``center=True`` (requires ``mu``)
    the mu-weighted mean step is removed frequency by frequency, baseline
    included, which makes sum_i mu(i) g(i, y) vanish identically in y.
    """
    base = np.array(base, dtype=float)
    if base.ndim != 2 or base.shape[1] % 2:
        raise KernelError(f"baseline must be an N x 2d matrix, got shape {base.shape}")
    n, two_d = base.shape
    d = two_d // 2
    if np.any(base < 0) or np.any(np.abs(base.sum(axis=1) - 1.0) > 1e-12):
        raise KernelError("baseline rows must be probability vectors")

    keys, cos_cols, sin_cols = [], [], []
    for t in terms:
        if not 0 <= t.state < n or not 0 <= t.direction < two_d:
            raise KernelError(f"term {t} references a missing state or direction")
        if len(t.freq) != d:
            raise KernelError(f"term {t} has frequency of wrong dimension")
        k, sgn = _canonical_freq(t.freq)
        key = tuple(k)
        if key not in keys:
            keys.append(key)
            cos_cols.append(np.zeros((n, two_d)))
            sin_cols.append(np.zeros((n, two_d)))
        f = keys.index(key)
        # A cos(x + phi) = A cos(phi) cos(x) - A sin(phi) sin(x); x -> -x flips the sine part
        cos_cols[f][t.state, t.direction] += t.amplitude * np.cos(t.phase)
        sin_cols[f][t.state, t.direction] += -sgn * t.amplitude * np.sin(t.phase)

    freqs = np.array(keys, dtype=float).reshape(len(keys), d)
    C = np.stack(cos_cols, axis=2) if keys else np.zeros((n, two_d, 0))
    S = np.stack(sin_cols, axis=2) if keys else np.zeros((n, two_d, 0))

    C = C - C.mean(axis=1, keepdims=True)
    S = S - S.mean(axis=1, keepdims=True)

    # zero-frequency terms are constant shifts of the baseline
    const = [f for f, key in enumerate(keys) if not any(key)]
    for f in const:
        base = base + amplitude_budget * C[:, :, f]
    keep = [f for f in range(len(keys)) if f not in const]
    freqs, C, S = freqs[keep], C[:, :, keep], S[:, :, keep]

    if center:
        if mu is None:
            raise KernelError("centering requires the invariant measure mu")
        mu = np.asarray(mu, dtype=float)
        base = _center_table(base, mu)
        C = _center_table(C, mu)
        S = _center_table(S, mu)

    amp = amplitude_budget * np.hypot(C, S).sum(axis=2)
    floor = float((base - amp).min())
    if floor < POSITIVITY_FLOOR:
        raise KernelError(
            f"baseline minus perturbation amplitude is {floor:.3g} < {POSITIVITY_FLOOR}; kernel may vanish"
        )
    for arr in (base, freqs, C, S):
        arr.setflags(write=False)
    return TrigKernel(base, freqs, C, S, float(amplitude_budget), floor)


def _center_table(T, mu):
    """Shift every state's table so the mu-average of (T[+e_l] - T[-e_l]) is zero."""
    T = T.copy()
    net = T[:, 0::2] - T[:, 1::2]
    c = np.tensordot(mu, net, axes=(0, 0))
    T[:, 0::2] -= 0.5 * c
    T[:, 1::2] += 0.5 * c
    return T


def uniform_kernel(d, n_states=1):
    return make_kernel(np.full((n_states, 2 * d), 1.0 / (2 * d)), center=False)


class CallableKernel(Kernel):
    """User-supplied ``fn(i, y) -> probability vector``; derivatives by central differences.

    Centering is not enforced here; :func:`validate_kernel` checks it.
    """

    def __init__(self, fn, d, n_states, fd_step=1e-5):
        self.fn = fn
        self._d = d
        self._n = n_states
        self.fd_step = fd_step
        self.p_min = None

    @property
    def d(self):
        return self._d

    @property
    def n_states(self):
        return self._n

    def probs(self, i, y):
        i, y, _ = _batch(i, y, self.d)
        return np.array([np.asarray(self.fn(int(a), b), dtype=float) for a, b in zip(i, y)])

    def probs_grad(self, i, y):
        i, y, _ = _batch(i, y, self.d)
        h = self.fd_step
        out = np.empty((y.shape[0], 2 * self.d, self.d))
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = h
            out[:, :, j] = (self.probs(i, y + e) - self.probs(i, y - e)) / (2 * h)
        return out


# public single-point operations


def _one(kernel, i, y, fn):
    y = np.asarray(y, dtype=float)
    out = fn(np.atleast_1d(i) if y.ndim > 1 else [i], np.atleast_2d(y))
    return out if y.ndim > 1 else out[0]


def eval_p(kernel, i, y):
    return _one(kernel, i, y, kernel.probs)


def eval_g(kernel, i, y):
    return _one(kernel, i, y, kernel.mean_step)


def eval_alpha(kernel, i, y):
    diag = _one(kernel, i, y, kernel.second_moment_diag)
    if diag.ndim == 1:
        return np.diag(diag)
    return diag[:, :, None] * np.eye(kernel.d)[None]


def grad_g(kernel, i, y):
    return _one(kernel, i, y, kernel.mean_step_grad)


def eval_h(kernel, i, y):
    return _one(kernel, i, y, kernel.reflected_mean_step)


def reflected_step_kernel(kernel, i, y):
    return _one(kernel, i, y, kernel.reflected_probs)


# grid validation of the smoothness / centering / ellipticity assumptions


def validation_grid(d, points=101, upper=2.0):
    axis = np.linspace(0.0, upper, points)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class KernelReport:
    p_min: float
    max_row_error: float
    max_centering: float
    lipschitz_bound: float
    lipschitz_worst_ratio: float
    ellipticity_floor: float
    problems: list

    @property
    def ok(self):
        return not self.problems


def validate_kernel(kernel, mu, grid=None, n_pairs=2000, seed=0, centering_tol=1e-10, ellipticity_min=0.0):
    """Numerical checks of positivity, normalisation, Lipschitz bound, centering and ellipticity."""
    d, n = kernel.d, kernel.n_states
    if grid is None:
        grid = validation_grid(d)
    mu = np.asarray(mu, dtype=float)
    problems = []
    p_min, row_err, cent = np.inf, 0.0, 0.0
    ell_floor = np.inf
    gbar = np.zeros((grid.shape[0], d))
    for i in range(n):
        p = kernel.probs(i, grid)
        p_min = min(p_min, float(p.min()))
        row_err = max(row_err, float(np.abs(p.sum(axis=1) - 1.0).max()))
        g = p[:, 0::2] - p[:, 1::2]
        gbar += mu[i] * g
        cov = (p[:, 0::2] + p[:, 1::2])[:, :, None] * np.eye(d)[None] - g[:, :, None] * g[:, None, :]
        ell_floor = min(ell_floor, float(np.linalg.eigvalsh(cov)[:, 0].min()))
    cent = float(np.abs(gbar).max())
    if p_min <= 0:
        problems.append(f"A.1 positivity: min p = {p_min:.3g}")
    if row_err > 1e-12:
        problems.append(f"normalisation: rows off by {row_err:.3g}")
    if cent > centering_tol:
        problems.append(f"A.4 centering: |sum_i mu(i) g(i,y)| reaches {cent:.3g}")
    if ell_floor <= ellipticity_min:
        problems.append(f"ellipticity: min eigenvalue of alpha - g g^T is {ell_floor:.3g}")

    rng = np.random.default_rng(seed)
    if isinstance(kernel, TrigKernel):
        K = kernel.lipschitz
    else:
        dp = np.concatenate([np.abs(kernel.probs_grad(i, grid)) for i in range(n)])
        K = 1.05 * float(np.linalg.norm(dp, axis=2).max())
    y1 = rng.uniform(0, 2, (n_pairs, d))
    y2 = y1 + rng.normal(scale=0.05, size=(n_pairs, d))
    states = rng.integers(0, n, n_pairs)
    diff = np.abs(kernel.probs(states, y1) - kernel.probs(states, y2)).max(axis=1)
    dist = np.linalg.norm(y1 - y2, axis=1)
    ratio = float((diff / dist).max())
    if K > 0:
        worst = ratio / K
    else:
        worst = 0.0 if ratio == 0 else np.inf
    if worst > 1.0 + 1e-9:
        problems.append(f"A.1 Lipschitz: observed slope exceeds bound by factor {worst:.3g}")
    return KernelReport(p_min, row_err, cent, K, worst, ell_floor, problems)
