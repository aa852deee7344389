# %% [markdown]
# # Deadlock time of the walk versus the reflected diffusion
#
# The reflected walk lives in the box [0, m]^2 and deadlocks once its total
# allocation reaches lambda m.  Rescaled by m^2, that time converges in law
# to the hitting time of {x1 + x2 >= lambda} by a reflected diffusion in the
# unit square.  With one environment state and the uniform kernel the limit
# covariance is I/2.

# %%
import numpy as np

from bankerwalk import EnvSpec, uniform_kernel
from bankerwalk.rsde import DiffusionSpec, hit_times, simulate_rsde
from bankerwalk.walk import WalkConfig, ks_distance, monte_carlo_deadlock

env = EnvSpec(np.ones((1, 1)))
kernel = uniform_kernel(2)
spec = DiffusionSpec.constant(0.5 * np.eye(2), lam=1.5)

# %% [markdown]
# One reflected path: the pushing processes H and K only grow on the faces.

# %%
path = simulate_rsde(spec, [0.5, 0.5], 2.0, 1e-3, seed=1)
print("final X", path.X[-1], " total push at 0:", path.H[-1], " at 1:", path.K[-1])

# %% [markdown]
# Hitting-time sample of the diffusion and deadlock samples of the walk at a few box sizes.

# %%
n = 2000
sde = hit_times(spec, [0.0, 0.0], 1e-3, 100.0, n, seed=7)
print(f"diffusion: mean {sde.t_hit.mean():.4f}")
for m in (10, 20, 40):
    walk = monte_carlo_deadlock(env, kernel, WalkConfig(m, 2, 1.5), n, seed=7)
    print(f"m={m:3d}: mean {walk.stats['mean']:.4f}  KS distance {ks_distance(walk.t_rescaled, sde.t_hit):.4f}")
