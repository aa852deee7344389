"""YAML experiment configuration: parsing, validation and canonical hashing."""
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .env import EnvSpec, stationary_distribution, validate_env
from .errors import BankerWalkError, ConfigError
from .kernel import PerturbationTerm, make_kernel
from .regimes import DEFAULT_GRID

MASK64 = (1 << 64) - 1


class ParseError(ConfigError):
    """Config text is not valid YAML or a field has the wrong type or value."""

    def __init__(self, message, field=None, line=None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{' at '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


def _get(block, key, path, kind=None, default=...):
    if not isinstance(block, dict):
        raise ParseError("expected a mapping", path)
    if key not in block or block[key] is None:
        if default is ...:
            raise ParseError("missing required value", f"{path}.{key}" if path else key)
        return default
    value = block[key]
    name = f"{path}.{key}" if path else key
    if kind is None:
        return value
    try:
        if kind is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind == "matrix":
            arr = np.array(value, dtype=float)
            if arr.ndim != 2:
                raise ValueError
            return arr
        if kind == "vector":
            arr = np.array(value, dtype=float)
            if arr.ndim != 1:
                raise ValueError
            return arr
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ParseError(f"cannot read {value!r} as {getattr(kind, '__name__', kind)}", name) from None
    return value


@dataclass
class ExperimentConfig:
    """Resolved experiment; blocks other than ``seed`` are optional and checked when used."""

    seed: int
    output_dir: str = "out"
    env: dict = None
    kernel: dict = None
    walk: dict = None
    sde: dict = None
    regimes: dict = None
    coefficients: dict = None
    raw: dict = field(default_factory=dict, repr=False)

    def canonical_hash(self):
        blob = json.dumps(_jsonable(self.raw), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # builders

    def build_env(self):
        if self.env is None:
            return EnvSpec(np.ones((1, 1)))
        try:
            return EnvSpec(self.env["P"])
        except ValueError as exc:
            raise ParseError(str(exc), "env.P") from None

    def build_kernel(self, env=None):
        if self.kernel is None:
            raise ParseError("missing required block", "kernel")
        k = self.kernel
        env = env or self.build_env()
        mu = None
        if k["center"]:
            if validate_env(env):
                raise ParseError("centering needs an irreducible environment", "kernel.center")
            mu = stationary_distribution(env)
        try:
            return make_kernel(k["base"], k["terms"], mu=mu, amplitude_budget=k["amplitude_budget"],
                               center=k["center"])
        except BankerWalkError as exc:
            raise ParseError(str(exc), "kernel") from None


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def _parse_env(block):
    P = _get(block, "P", "env", "matrix")
    if P.shape[0] != P.shape[1]:
        raise ParseError(f"transition matrix must be square, got {P.shape}", "env.P")
    return {"P": P}


def _parse_kernel(block, n_states):
    base = _get(block, "base", "kernel", "matrix")
    if base.shape[0] != n_states:
        raise ParseError(f"baseline has {base.shape[0]} rows for {n_states} environment states", "kernel.base")
    if base.shape[1] % 2:
        raise ParseError("baseline needs 2d columns", "kernel.base")
    d = _get(block, "d", "kernel", int, base.shape[1] // 2)
    if 2 * d != base.shape[1]:
        raise ParseError(f"d = {d} does not match {base.shape[1]} baseline columns", "kernel.d")
    terms = []
    for n, t in enumerate(_get(block, "perturbations", "kernel", default=[]) or []):
        path = f"kernel.perturbations[{n}]"
        freq = _get(t, "freq", path, "vector")
        if freq.size != d or np.any(freq != np.round(freq)):
            raise ParseError(f"frequency must be {d} integers", f"{path}.freq")
        terms.append(PerturbationTerm(
            _get(t, "state", path, int), _get(t, "direction", path, int),
            tuple(int(f) for f in freq), _get(t, "amplitude", path, float),
            _get(t, "phase", path, float, 0.0),
        ))
    eps = _get(block, "amplitude_budget", "kernel", float, 1.0)
    if eps < 0:
        raise ParseError("must be >= 0", "kernel.amplitude_budget")
    return {"d": d, "base": base, "terms": terms, "amplitude_budget": eps,
            "center": _get(block, "center", "kernel", bool, True)}


def _parse_walk(block, d):
    m = _get(block, "m", "walk", int, 40)
    lam = _get(block, "lam", "walk", float, 1.5)
    m_list = [int(x) for x in _get(block, "m_list", "walk", default=[20, 40, 80])]
    out = {
        "m": m, "lam": lam,
        "horizon_steps": _get(block, "horizon_steps", "walk", int, None),
        "sample_times": tuple(float(x) for x in _get(block, "sample_times", "walk", default=[1.0])),
        "trials": _get(block, "trials", "walk", int, 1000),
        "m_list": m_list,
        "reflected": _get(block, "reflected", "walk", bool, False),
        "xi0": _get(block, "xi0", "walk", int, 0),
    }
    if m < 2 or any(x < 2 for x in m_list):
        raise ParseError("box sizes must be >= 2", "walk.m")
    if d is not None and not 1.0 <= lam < d:
        raise ParseError(f"lambda must lie in [1, {d})", "walk.lam")
    return out


def _parse_sde(block):
    out = {
        "dt": _get(block, "dt", "sde", float, 1e-4),
        "t_cap": _get(block, "t_cap", "sde", float, 1000.0),
        "trials": _get(block, "trials", "sde", int, 1000),
        "lam": _get(block, "lam", "sde", float, None),
        "x0": _get(block, "x0", "sde", "vector", None),
        "a_bar": _get(block, "a_bar", "sde", "matrix", None),
        "b_bar": _get(block, "b_bar", "sde", "vector", None),
        "t_max": _get(block, "t_max", "sde", float, 1.0),
    }
    if out["dt"] <= 0 or out["t_cap"] <= 0:
        raise ParseError("dt and t_cap must be positive", "sde")
    return out


def _parse_regimes(block):
    out = {
        "rho1": _get(block, "rho1", "regimes", float, 1.0),
        "rho2": _get(block, "rho2", "regimes", float, 1.0),
        "s": _get(block, "s", "regimes", float, 0.0),
        "grid": [float(x) for x in _get(block, "grid", "regimes", default=list(DEFAULT_GRID))],
        "trials": _get(block, "trials", "regimes", int, 2000),
        "dt": _get(block, "dt", "regimes", float, 1e-4),
        "t_cap": _get(block, "t_cap", "regimes", float, 1000.0),
    }
    if out["rho1"] <= 0 or out["rho2"] <= 0:
        raise ParseError("rho1 and rho2 must be positive", "regimes")
    if not -1.0 < out["s"] < 1.0:
        raise ParseError("s must lie in (-1, 1)", "regimes.s")
    if any(not 1.0 < g < 2.0 for g in out["grid"]):
        raise ParseError("grid values must lie in (1, 2)", "regimes.grid")
    return out


def load_raw(text):
    """YAML text to a plain mapping; syntax errors carry the line number."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(getattr(exc, "problem", None) or str(exc), line=line) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError("top level must be a mapping")
    return raw


def parse_config(text):
    """Parse YAML text into an ExperimentConfig; errors carry field or line context."""
    return config_from_raw(load_raw(text))


def config_from_raw(raw):
    known = {"seed", "output_dir", "env", "kernel", "walk", "sde", "regimes", "coefficients"}
    extra = set(raw) - known
    if extra:
        raise ParseError(f"unknown keys {sorted(extra)}", sorted(extra)[0])
    seed = _get(raw, "seed", "", int)
    if not 0 <= seed <= MASK64:
        raise ParseError("seed must be a 64-bit unsigned integer", "seed")
    env = _parse_env(raw["env"]) if raw.get("env") is not None else None
    n_states = env["P"].shape[0] if env else 1
    kernel = _parse_kernel(raw["kernel"], n_states) if raw.get("kernel") is not None else None
    d = kernel["d"] if kernel else None
    cfg = ExperimentConfig(
        seed=seed,
        output_dir=str(raw.get("output_dir") or "out"),
        env=env,
        kernel=kernel,
        walk=_parse_walk(raw.get("walk") or {}, d),
        sde=_parse_sde(raw.get("sde") or {}),
        regimes=_parse_regimes(raw.get("regimes") or {}),
        coefficients={"points": _get(raw.get("coefficients") or {}, "points", "coefficients", int, 21)},
        raw=raw,
    )
    return cfg


def read_config_text(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", line=None) from None


def load_config(path):
    return parse_config(read_config_text(path))
