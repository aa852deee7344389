"""Reflected diffusion on [0,1]^d: projected Euler scheme, hitting times, periodic unfolding.

The projection scheme clamps each Euler proposal back into the cube and books
the clamped amounts as increments of the pushing processes H (at 0) and K
(at 1), so both only grow on the corresponding faces.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .homogenize import sqrt_psd
from .kernel import check_unit_cube


class _Constant:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, y):
        y = np.atleast_2d(y)
        return np.broadcast_to(self.value, (y.shape[0],) + self.value.shape)


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Drift and dispersion as batched callables: (n, d) -> (n, d) and (n, d) -> (n, d, d)."""

    d: int
    drift: object
    dispersion: object
    lam: float

    def __post_init__(self):
        ok = 0.0 < self.lam <= 1.0 if self.d == 1 else 1.0 <= self.lam < self.d
        if not ok:
            raise ValueError(f"lambda {self.lam} out of range for dimension {self.d}")
        axis = np.linspace(0.0, 1.0, 11)
        grid = np.stack([m.ravel() for m in np.meshgrid(*([axis] * self.d), indexing="ij")], axis=1)
        b = np.asarray(self.drift(grid))
        s = np.asarray(self.dispersion(grid))
        if b.shape != grid.shape or not np.all(np.isfinite(b)):
            raise ValueError("drift must be finite with shape (n, d)")
        if s.shape != (grid.shape[0], self.d, self.d) or not np.all(np.isfinite(s)):
            raise ValueError("dispersion must be finite with shape (n, d, d)")
        if np.abs(s - np.swapaxes(s, 1, 2)).max() > 1e-10:
            raise ValueError("dispersion must be symmetric")
        if np.linalg.eigvalsh(s)[:, 0].min() < -1e-10:
            raise ValueError("dispersion must be positive semidefinite")

    @classmethod
    def constant(cls, a_bar, b_bar=None, lam=1.5):
        a_bar = np.atleast_2d(np.asarray(a_bar, dtype=float))
        d = a_bar.shape[0]
        b_bar = np.zeros(d) if b_bar is None else np.asarray(b_bar, dtype=float)
        return cls(d, _Constant(b_bar), _Constant(sqrt_psd(a_bar)), float(lam))

    @classmethod
    def from_coeffs(cls, coeffs, lam):
        return cls(coeffs.h.d, coeffs.b_bar, coeffs.sigma_bar, float(lam))

    def a_bar(self, y):
        s = self.dispersion(np.atleast_2d(y))
        return s @ np.swapaxes(s, 1, 2)


@dataclass
class RSDEPath:
    times: np.ndarray
    X: np.ndarray
    H: np.ndarray
    K: np.ndarray


@dataclass
class HitResult:
    t_hit: float
    x_hit: np.ndarray
    n_steps: int
    censored: bool


def euler_project_step(spec, x, dt, dB):
    """One projected Euler step; ``dB`` is the Brownian increment (variance dt).

    Returns ``(x_new, dH, dK)`` where x_new is the componentwise clamp of the
    proposal to [0, 1] and dH, dK the amounts clamped off below 0 and above 1.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    dB = np.atleast_2d(np.asarray(dB, dtype=float))
    prop = x2 + spec.drift(x2) * dt + np.einsum("nij,nj->ni", spec.dispersion(x2), dB)
    x_new = np.clip(prop, 0.0, 1.0)
    dH = np.maximum(0.0, -prop)
    dK = np.maximum(0.0, prop - 1.0)
    if single:
        return x_new[0], dH[0], dK[0]
    return x_new, dH, dK


def _run_block(spec, x0, dt, n_max, seed, replicas, stop, purpose, record):
    """Projected scheme for a block of replicas.

    With ``stop`` each replica runs until sum(X) >= lambda or n_max steps;
    otherwise all run n_max steps.  Returns per-replica hit step (-1 if
    censored), final X and, when ``record``, full X/H/K paths.
    """
    n = len(replicas)
    d = spec.d
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    H = np.zeros((n, d))
    K = np.zeros((n, d))
    hit = np.full(n, -1, dtype=np.int64)
    final = x.copy()
    draws = rngmod.BatchDraws(seed, replicas, d, purpose=purpose, kind="normal")
    live = np.arange(n)
    sq = np.sqrt(dt)
    if record:
        Xs = np.empty((n_max + 1, n, d))
        Hs = np.empty_like(Xs)
        Ks = np.empty_like(Xs)
        Xs[0], Hs[0], Ks[0] = x, H, K
    for step in range(1, n_max + 1):
        if live.size == 0:
            break
        dB = draws.next() * sq
        x, dH, dK = euler_project_step(spec, x, dt, dB)
        H += dH
        K += dK
        if record:
            Xs[step], Hs[step], Ks[step] = x, H, K
        if stop:
            done = x.sum(axis=1) >= spec.lam
            if done.any():
                hit[live[done]] = step
                final[live[done]] = x[done]
                keep = ~done
                live, x, H, K = live[keep], x[keep], H[keep], K[keep]
                draws.keep(keep)
    final[live] = x
    out = {"hit_step": hit, "final": final}
    if record:
        out.update(X=Xs, H=Hs, K=Ks)
    return out


def _split(replicas, workers):
    return [b for b in np.array_split(np.asarray(replicas), max(1, workers)) if b.size]


def simulate_rsde(spec, x0, t_max, dt, seed, replica=0):
    """Projected-scheme path on the grid 0, dt, ..., t_max; deterministic given seed."""
    x0 = np.asarray(x0, dtype=float)
    check_unit_cube(x0)
    n_steps = int(round(t_max / dt))
    out = _run_block(spec, x0, dt, n_steps, seed, [replica], False, rngmod.SDE, True)
    return RSDEPath(np.arange(n_steps + 1) * dt, out["X"][:, 0], out["H"][:, 0], out["K"][:, 0])


def simulate_rsde_batch(spec, x0, t_max, dt, seed, replicas):
    """Paths of several replicas at once; arrays shaped (n_steps + 1, n_replicas, d)."""
    n_steps = int(round(t_max / dt))
    out = _run_block(spec, np.asarray(x0, dtype=float), dt, n_steps, seed, list(replicas), False, rngmod.SDE, True)
    return RSDEPath(np.arange(n_steps + 1) * dt, out["X"], out["H"], out["K"])


def _check_start(spec, x0, allow_start_hit):
    x0 = np.asarray(x0, dtype=float)
    check_unit_cube(x0)
    if x0.sum() >= spec.lam and not (allow_start_hit and x0.sum() == spec.lam):
        raise ValueError(f"start {x0} already satisfies sum >= lambda = {spec.lam}")
    return x0


def hit_time(spec, x0, dt, t_cap, seed, replica=0, allow_start_hit=False):
    """First grid time with sum(X) >= lambda; censored at t_cap."""
    x0 = _check_start(spec, x0, allow_start_hit)
    if x0.sum() >= spec.lam:
        return HitResult(0.0, x0.copy(), 0, False)
    res = hit_times(spec, x0, dt, t_cap, 1, seed, first_replica=replica)
    return HitResult(float(res.t_hit[0]), res.x_hit[0], int(res.n_steps[0]), bool(res.censored[0]))


@dataclass
class HitSample:
    t_hit: np.ndarray
    x_hit: np.ndarray
    n_steps: np.ndarray
    censored: np.ndarray

    @property
    def censored_fraction(self):
        return float(self.censored.mean()) if self.censored.size else 0.0


def _hit_block(args):
    spec, x0, dt, n_max, seed, replicas, purpose, unfolded = args
    if unfolded:
        return _unfolded_block(spec, x0, dt, n_max, seed, replicas, stop=True)
    return _run_block(spec, x0, dt, n_max, seed, replicas, True, purpose, False)


def _collect(blocks, dt, n_max):
    hit = np.concatenate([b["hit_step"] for b in blocks])
    final = np.concatenate([b["final"] for b in blocks])
    cens = hit < 0
    steps = np.where(cens, n_max, hit)
    return HitSample(steps * dt, final, steps, cens)


def _map_blocks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def hit_times(spec, x0, dt, t_cap, n_paths, seed, workers=1, first_replica=0):
    """Hitting-time sample of ``n_paths`` replicas (censored entries carry t_cap)."""
    x0 = _check_start(spec, x0, False)
    n_max = int(round(t_cap / dt))
    reps = np.arange(first_replica, first_replica + n_paths)
    tasks = [(spec, x0, dt, n_max, seed, list(b), rngmod.SDE, False) for b in _split(reps, workers)]
    return _collect(_map_blocks(_hit_block, tasks, workers), dt, n_max)


# periodic unfolding


def fold_map(y):
    """Componentwise period-2 tent map onto [0, 1]."""
    z = np.mod(np.asarray(y, dtype=float), 2.0)
    return np.where(z <= 1.0, z, 2.0 - z)


def fold_signs(y):
    """Diagonal of the sign matrix: +1 where the tent map increases, -1 where it decreases."""
    z = np.mod(np.asarray(y, dtype=float), 2.0)
    return np.where(z <= 1.0, 1.0, -1.0)


def unfolded_coefficients(spec, y):
    """Periodised drift N b(Pi y) and dispersion N sigma(Pi y) N of the unreflected process."""
    y = np.atleast_2d(y)
    folded = fold_map(y)
    sgn = fold_signs(y)
    b = sgn * spec.drift(folded)
    s = sgn[:, :, None] * spec.dispersion(folded) * sgn[:, None, :]
    return b, s


def _unfolded_block(spec, x0, dt, n_max, seed, replicas, stop, record=False):
    n = len(replicas)
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    hit = np.full(n, -1, dtype=np.int64)
    final = fold_map(x)
    draws = rngmod.BatchDraws(seed, replicas, spec.d, purpose=rngmod.UNFOLDED, kind="normal")
    live = np.arange(n)
    sq = np.sqrt(dt)
    if record:
        Xs = np.empty((n_max + 1, n, spec.d))
        Xs[0] = x
    for step in range(1, n_max + 1):
        if live.size == 0:
            break
        b, s = unfolded_coefficients(spec, x)
        x = x + b * dt + np.einsum("nij,nj->ni", s, draws.next() * sq)
        if record:
            Xs[step] = x
        if stop:
            folded = fold_map(x)
            done = folded.sum(axis=1) >= spec.lam
            if done.any():
                hit[live[done]] = step
                final[live[done]] = folded[done]
                keep = ~done
                live, x = live[keep], x[keep]
                draws.keep(keep)
    final[live] = fold_map(x)
    out = {"hit_step": hit, "final": final}
    if record:
        out["X"] = Xs
    return out


@dataclass
class UnfoldedPath:
    times: np.ndarray
    raw: np.ndarray
    folded: np.ndarray


def simulate_unfolded(spec, x0, t_max, dt, seed, replica=0):
    """Unreflected Euler path with period-2 coefficients, plus its image under the fold map."""
    x0 = np.asarray(x0, dtype=float)
    check_unit_cube(x0)
    n_steps = int(round(t_max / dt))
    out = _unfolded_block(spec, x0, dt, n_steps, seed, [replica], stop=False, record=True)
    raw = out["X"][:, 0]
    return UnfoldedPath(np.arange(n_steps + 1) * dt, raw, fold_map(raw))


def unfolded_hit_times(spec, x0, dt, t_cap, n_paths, seed, workers=1):
    """Hitting times of the folded unreflected process (same law as the reflected one)."""
    x0 = _check_start(spec, x0, False)
    n_max = int(round(t_cap / dt))
    reps = np.arange(n_paths)
    tasks = [(spec, x0, dt, n_max, seed, list(b), rngmod.UNFOLDED, True) for b in _split(reps, workers)]
    return _collect(_map_blocks(_hit_block, tasks, workers), dt, n_max)
