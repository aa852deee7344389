"""Free and reflected banker walks in a Markovian environment.

At every step the next environment state is drawn from row ``xi_n`` of P and
the jump from p(xi_n, S_n/m, .) (or q for the reflected walk), using two
uniforms of the replica's own stream.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from . import rng as rngmod
from .kernel import direction_set


@dataclass(frozen=True)
class WalkConfig:
    m: int
    d: int
    lam: float
    horizon_steps: int = None
    sample_times: tuple = (1.0,)

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"box size m must be >= 2, got {self.m}")
        if not 1.0 <= self.lam < self.d:
            raise ValueError(f"lambda must lie in [1, {self.d}), got {self.lam}")
        if self.horizon_steps is None:
            object.__setattr__(self, "horizon_steps", 50 * self.m * self.m)

    @property
    def threshold(self):
        return self.lam * self.m


@dataclass
class WalkPath:
    positions: np.ndarray
    env_states: np.ndarray
    sample_times: np.ndarray
    rescaled_samples: np.ndarray


@dataclass
class DeadlockResult:
    t_raw: int
    t_rescaled: float
    exit_point: np.ndarray
    censored: bool


def _categorical(cdf, u):
    # cdf rows end in +inf so roundoff in the last partial sum never matters
    return (cdf <= u[:, None]).sum(axis=1)


def _cdf(p):
    c = np.cumsum(p, axis=1)
    c[:, -1] = np.inf
    return c


def step_free(kernel, env_state, position, m, rng):
    """Draw one jump from p(env_state, position/m, .); returns position + u."""
    position = np.asarray(position, dtype=np.int64)
    p = kernel.probs(env_state, position[None, :] / m)
    k = int(_categorical(_cdf(p), np.array([rng.random()]))[0])
    return position + direction_set(kernel.d).vectors[k]


def step_reflected(kernel, env_state, position, m, rng):
    """Draw one jump from the reflected kernel q at position/m; stays in {0..m}^d."""
    position = np.asarray(position, dtype=np.int64)
    if np.any(position < 0) or np.any(position > m):
        raise ValueError(f"position {position} outside the box [0, {m}]^d")
    q = kernel.reflected_probs(env_state, position[None, :] / m)
    k = int(_categorical(_cdf(q), np.array([rng.random()]))[0])
    return position + direction_set(kernel.d).vectors[k]


def _walk_block(env, kernel, m, n_steps, seed, replicas, reflected, threshold=None,
                start=None, xi0=0, record=False, check_box=False):
    """Advance a block of replicas in lockstep.

    Returns hit steps (-1 when not stopped), final positions/states and,
    with ``record``, full position and environment histories.
    """
    n, d = len(replicas), kernel.d
    U = direction_set(d).vectors
    pos = np.zeros((n, d), dtype=np.int64)
    if start is not None:
        pos[:] = np.asarray(start, dtype=np.int64)
    xi = np.full(n, xi0, dtype=np.int64)
    env_cdf = _cdf(env.P)
    hit = np.full(n, -1, dtype=np.int64)
    final_pos = pos.copy()
    final_xi = xi.copy()
    live = np.arange(n)
    if threshold is not None:
        done0 = pos.sum(axis=1) >= threshold
        hit[done0] = 0
        live = live[~done0]
        pos, xi = pos[~done0], xi[~done0]
    draws = rngmod.BatchDraws(seed, replicas, 2, purpose=rngmod.WALK)
    if threshold is not None and live.size < n:
        draws.keep(np.isin(np.arange(n), live))
    if record:
        P_hist = np.empty((n_steps + 1, n, d), dtype=np.int64)
        X_hist = np.empty((n_steps + 1, n), dtype=np.int64)
        P_hist[0], X_hist[0] = pos, xi
    for step in range(1, n_steps + 1):
        if live.size == 0:
            break
        u = draws.next()
        new_xi = _categorical(env_cdf[xi], u[:, 0])
        y = pos / m
        p = kernel.reflected_probs(xi, y) if reflected else kernel.probs(xi, y)
        pos = pos + U[_categorical(_cdf(p), u[:, 1])]
        xi = new_xi
        if check_box and (pos.min() < 0 or pos.max() > m):
            raise AssertionError(f"reflected walk left the box at step {step}")
        if record:
            P_hist[step], X_hist[step] = pos, xi
        if threshold is not None:
            done = pos.sum(axis=1) >= threshold
            if done.any():
                idx = live[done]
                hit[idx] = step
                final_pos[idx] = pos[done]
                final_xi[idx] = xi[done]
                keep = ~done
                live, pos, xi = live[keep], pos[keep], xi[keep]
                draws.keep(keep)
    final_pos[live] = pos
    final_xi[live] = xi
    out = {"hit_step": hit, "final_pos": final_pos, "final_xi": final_xi}
    if record:
        out.update(positions=P_hist, env_states=X_hist)
    return out


def _n_steps(m, sample_times):
    if len(sample_times) == 0:
        return 0
    return int(np.ceil(m * m * max(sample_times)))


def _path(out, m, sample_times, col=0):
    pos = out["positions"][:, col]
    st = np.asarray(sample_times, dtype=float)
    idx = np.floor(m * m * st + 1e-9).astype(int)
    return WalkPath(pos, out["env_states"][:, col], st, pos[idx] / m)


def simulate_free(env, kernel, config, seed, xi0=0, replica=0, start=None):
    """Free walk from S_0 = 0 over ceil(m^2 max(t)) steps, sampled at n = floor(m^2 t)."""
    n = _n_steps(config.m, config.sample_times)
    out = _walk_block(env, kernel, config.m, n, seed, [replica], False, start=start, xi0=xi0, record=True)
    return _path(out, config.m, config.sample_times)


def simulate_reflected(env, kernel, config, seed, xi0=0, replica=0, start=None):
    """Reflected walk path (no stopping) with the same stream layout as the free walk."""
    n = _n_steps(config.m, config.sample_times)
    out = _walk_block(env, kernel, config.m, n, seed, [replica], True, start=start, xi0=xi0,
                      record=True, check_box=True)
    return _path(out, config.m, config.sample_times)


def simulate_deadlock(env, kernel, config, seed, xi0=0, replica=0):
    """Reflected walk from R_0 = 0 until sum(R) >= lambda m or the horizon."""
    summary = monte_carlo_deadlock(env, kernel, config, 1, seed, xi0=xi0, first_replica=replica)
    return summary.result(0)


def in_absorption_set(r, m, lam):
    """Membership of r/m in F_0 = {y in [0,2]^d : sum |y_i - 1| <= d - lambda}, within the box."""
    y = np.atleast_2d(np.asarray(r, dtype=float)) / m
    d = y.shape[1]
    # tolerance guards the exact-equality case against roundoff in y
    return (np.abs(y - 1.0).sum(axis=1) <= d - lam + 1e-12) & np.all((y >= 0) & (y <= 1), axis=1)


@dataclass
class DeadlockSummary:
    t_raw: np.ndarray
    t_rescaled: np.ndarray
    exit_points: np.ndarray
    censored: np.ndarray
    m: int
    stats: dict = field(default_factory=dict)

    @property
    def n_trials(self):
        return self.t_raw.size

    @property
    def censored_fraction(self):
        return float(self.censored.mean())

    def result(self, k):
        return DeadlockResult(int(self.t_raw[k]), float(self.t_rescaled[k]),
                              self.exit_points[k], bool(self.censored[k]))


def _deadlock_block(args):
    env, kernel, m, horizon, seed, replicas, threshold, xi0 = args
    return _walk_block(env, kernel, m, horizon, seed, replicas, True, threshold=threshold, xi0=xi0)


def _summarise(t, bins=30):
    n = t.size
    std = float(t.std(ddof=1)) if n > 1 else 0.0
    counts, edges = np.histogram(t, bins=bins)
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    return {
        "mean": float(t.mean()),
        "std": std,
        "se": std / np.sqrt(n),
        "quantiles": dict(zip(qs, np.quantile(t, qs).tolist())),
        "histogram": (counts, edges),
    }


def monte_carlo_deadlock(env, kernel, config, n_trials, seed, workers=1, xi0=0, first_replica=0):
    """Independent deadlock replicas with per-replica streams; worker count never changes results."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    reps = np.arange(first_replica, first_replica + n_trials)
    blocks = [b for b in np.array_split(reps, max(1, workers)) if b.size]
    tasks = [(env, kernel, config.m, config.horizon_steps, seed, list(b), config.threshold, xi0) for b in blocks]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_deadlock_block, tasks))
    else:
        outs = [_deadlock_block(t) for t in tasks]
    hit = np.concatenate([o["hit_step"] for o in outs])
    final = np.concatenate([o["final_pos"] for o in outs])
    cens = hit < 0
    t_raw = np.where(cens, config.horizon_steps, hit)
    t_resc = t_raw / float(config.m * config.m)
    summary = DeadlockSummary(t_raw, t_resc, final / config.m, cens, config.m)
    summary.stats = _summarise(t_resc)
    summary.stats["censored_fraction"] = float(cens.mean())
    return summary


def _free_block(args):
    env, kernel, m, n, seed, replicas, xi0 = args
    return _walk_block(env, kernel, m, n, seed, replicas, False, xi0=xi0)["final_pos"]


def free_endpoints(env, kernel, m, t, n_replicas, seed, workers=1, xi0=0):
    """Rescaled positions S_{floor(m^2 t)}/m of independent free-walk replicas."""
    n = int(np.floor(m * m * t + 1e-9))
    reps = np.arange(n_replicas)
    tasks = [(env, kernel, m, n, seed, list(b), xi0) for b in np.array_split(reps, max(1, workers)) if b.size]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_free_block, tasks))
    else:
        outs = [_free_block(t) for t in tasks]
    return np.concatenate(outs) / m


def covariance_with_se(x):
    """Sample covariance and entrywise standard errors from the centred product sample."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    c = x - x.mean(axis=0)
    prod = c[:, :, None] * c[:, None, :]
    cov = prod.sum(axis=0) / (n - 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return cov, se


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(ks_2samp(np.ravel(a), np.ravel(b)).statistic)


def ks_noise(n1, n2, alpha=0.05):
    """Asymptotic critical value of the two-sample KS statistic at level alpha."""
    c = np.sqrt(-0.5 * np.log(alpha / 2.0))
    return float(c * np.sqrt((n1 + n2) / (n1 * n2)))


def ks_trend_ok(values, noise, max_inversions=1):
    """True if the sequence is non-increasing except for at most ``max_inversions`` rises, each <= noise."""
    rises = np.diff(np.asarray(values, dtype=float))
    up = rises[rises > 0]
    return bool(up.size <= max_inversions and np.all(up <= noise))
