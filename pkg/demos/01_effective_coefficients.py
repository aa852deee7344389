# %% [markdown]
# # Effective coefficients of an environment-modulated walk
#
# A walk on Z^2 picks its step law from a finite Markov chain (the
# environment) and from its own rescaled position.  On large scales it looks
# like a diffusion whose covariance a_bar and drift b_bar come from a Poisson
# equation on the environment.  This script builds a small example and
# inspects those coefficients.

# %%
import numpy as np

from bankerwalk import EnvSpec, PerturbationTerm, make_kernel, stationary_distribution
from bankerwalk.env import ergodicity_certificate, validate_env
from bankerwalk.homogenize import Homogenizer, solve_poisson

env = EnvSpec(np.array([[0.7, 0.3], [0.6, 0.4]]))
print("problems:", validate_env(env))
mu = stationary_distribution(env)
cert = ergodicity_certificate(env)
print("mu =", mu, " Doeblin power", cert.m_doeblin, " eta", cert.eta, " kappa", cert.kappa)

# %% [markdown]
# The Poisson equation (I - P) v = g has a unique solution with mu.v = 0
# whenever g is centred under mu.

# %%
v = solve_poisson(env, np.array([0.3, -0.6]))
print("v =", v, " residual", np.abs((np.eye(2) - env.P) @ v - [0.3, -0.6]).max())

# %% [markdown]
# A kernel: base step probabilities per state plus small trigonometric
# perturbations in y.  Centring makes the mu-average mean step vanish at every y.

# %%
kernel = make_kernel(
    [[0.30, 0.20, 0.25, 0.25], [0.20, 0.30, 0.25, 0.25]],
    [PerturbationTerm(0, 0, (1, 0), 0.03), PerturbationTerm(1, 2, (0, 1), 0.02, 0.5)],
    mu=mu,
)
h = Homogenizer(env, kernel)
y = np.array([[0.0, 0.0], [0.25, 0.5], [0.5, 0.75]])
for point, a, b in zip(y, h.a_bar(y), h.b_bar(y)):
    print(point, "a_bar =", np.round(a, 5).tolist(), " b_bar =", np.round(b, 6).tolist())

# %% [markdown]
# The effective covariance dominates the mu-average of the one-step
# covariance; both sides of the corrector identity agree to round-off.

# %%
grid = np.stack(np.meshgrid(np.linspace(0, 1, 21), np.linspace(0, 1, 21)), -1).reshape(-1, 2)
low = np.linalg.eigvalsh(h.a_bar(grid))[:, 0]
print("min eigenvalue of a_bar:", low.min(), " floor:", h.covariance_floor(grid).min())
print("identity gap:", h.identity_residual(grid)[0].max())

# %% [markdown]
# The discrete drift b^(m) vanishes like 1/m; m b^(m) approaches its limit at rate 1/m.

# %%
C = h.drift_bound_constant()
for m in (10, 100, 1000):
    b = h.drift_bm(0, grid, m)
    print(f"m={m:5d}  sup|b^(m)| = {np.abs(b).max():.3e}  C/m = {C / m:.3e}")
