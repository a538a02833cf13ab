import numpy as np

from riskcert.convex_geometry import Box
from riskcert.linear_subgaussian import SubGaussLinearProblem


def box_instance(seed, d=3, n=3, sigma=0.3, epsilon=0.05, K=1):
    """Small sub-Gaussian problem on a box with signal-dependent noise."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, n))
    X = Box(np.zeros(n), rng.uniform(0.5, 1.5, n))
    G = rng.normal(size=(d, d))
    M0 = sigma**2 * (G @ G.T / d + 0.1 * np.eye(d))
    Ms = np.empty((n, d, d))
    for j in range(n):
        R = rng.normal(size=(d, d))
        Ms[j] = sigma**2 * R @ R.T / d
    g = rng.normal(size=n)
    return SubGaussLinearProblem(A, rng.normal(size=d) * 0.1, M0, Ms, g, 0.3, X, epsilon, K)


def fd_grad(f, x, eps=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = eps
        g[idx] = (f(x + e) - f(x - e)) / (2 * eps)
    return g
