# %% [markdown]
# # How the mean deadlock time grows as lambda approaches 2
#
# For a constant covariance [[1, s], [s, 1]] the sign of s decides the
# behaviour of E(T_lambda) as lambda -> 2: bounded for s > 0, logarithmic for
# s = 0 and polynomial for s < 0.  The principal axis of the covariance shows
# why: for s > 0 the noise pushes along the diagonal towards the corner.

# %%
import numpy as np

from bankerwalk.regimes import CovarianceParams, beta_bounds, estimate_mean_deadlock, spectrum
from bankerwalk.rsde import DiffusionSpec

for s in (0.9, 0.0, -0.5):
    sp = spectrum(CovarianceParams(1.0, 1.0, s))
    print(f"s={s:+.1f}: eigenvalues {sp.lambda1:.3f}, {sp.lambda2:.3f}; principal axis {np.round(sp.E1, 3)}")
print("exponent bounds for s=-0.5:", beta_bounds(-0.5))

# %% [markdown]
# A coarse Monte Carlo sweep (small budget, coarse step) over the default
# lambda grid.  The full-budget version is the `regimes` CLI subcommand.

# %%
for s in (0.9, 0.0, -0.5):
    spec = DiffusionSpec.constant(CovarianceParams(1.0, 1.0, s).matrix())
    est = estimate_mean_deadlock(spec, trials=300, dt=1e-3, seed=3)
    print(f"s={s:+.1f}:", np.round(est.means, 3), "->", est.verdict())
