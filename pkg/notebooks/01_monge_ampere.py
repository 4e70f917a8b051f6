# %% [markdown]
# # Dirichlet Monge-Ampere on a disk
#
# The inner solver of the scheme.  Two checks: a quadratic is reproduced
# to rounding error (the nine-point stencil is exact on quadratics, cut
# cells included), and the manufactured solution ``exp(|x|^2/2)`` converges
# at second order.

# %%
import numpy as np

from abreulab import DomainPair, discretize, solve_ma_dirichlet

pair = DomainPair.unit_default()
quad = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731
exact = lambda x: np.exp(0.5 * np.sum(x * x, -1))  # noqa: E731
rhs = lambda x: (1 + np.sum(x * x, -1)) * np.exp(np.sum(x * x, -1))  # noqa: E731

# %%
disc = discretize(pair, 1 / 32)
u = solve_ma_dirichlet(disc, 1.0, quad)
print("quadratic, sup error:", np.nanmax(np.abs(u - disc.sample(quad))))

# %%
prev = None
for h in (1 / 16, 1 / 32, 1 / 64):
    d = discretize(pair, h)
    err = np.nanmax(np.abs(solve_ma_dirichlet(d, d.sample(rhs), exact) - d.sample(exact)))
    rate = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"h = 1/{round(1 / h):3d}  sup error {err:.3e}{rate}")
    prev = err
