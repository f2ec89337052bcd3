import numpy as np

from nsrkinetic.moments import maxwellian_values


def smooth_periodic(grid, rng, kappa=0.5, terms=3):
    """exp of a few random low-mode cosines on the periodic velocity box, unit mass."""
    ax = grid.axes[0]
    half = 0.5 * (ax.upper - ax.lower)
    v = grid.points
    s = np.zeros(grid.n_v)
    for _ in range(terms):
        d = rng.normal(size=3)
        k = np.round(d / np.linalg.norm(d))
        if not k.any():
            k[0] = 1.0
        s += rng.uniform(0.3, 1.0) * np.cos(np.pi / half * (v @ k) + rng.uniform(0, 2 * np.pi))
    f = np.exp(kappa * s)
    return f / (f @ grid.weights)


def maxwellian_mixture(grid, rng, n=3):
    f = sum(maxwellian_values(np.array(rng.uniform(0.3, 1)), rng.uniform(-1, 1, 3),
                              np.array(rng.uniform(0.6, 1.4)), grid) for _ in range(n))
    return f / (f @ grid.weights)
