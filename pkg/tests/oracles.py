"""Independent reference implementations used as test oracles.

Each function recomputes a quantity from raw samples, without the moment
caching used by the package, so agreement is a genuine cross-check.
"""

import numpy as np


def reference_objective(kind, envs, theta, lam=0.0, l2=0.0):
    """Objective value straight from the samples in ``envs`` (list of (x, y))."""
    beta, b = theta[:-1], theta[-1]
    n_tot = sum(len(y) for _, y in envs)
    pooled, risks, dummies = 0.0, [], []
    for x, y in envs:
        f = x @ beta + b
        r = np.mean((f - y) ** 2)
        risks.append(r)
        pooled += r * len(y) / n_tot
        # derivative of mean((w f - y)^2) in w at w = 1
        dummies.append(np.mean(2 * f * (f - y)))
    out = pooled + l2 * beta @ beta
    if kind == "irmv1":
        out += lam * np.mean(np.square(dummies))
    elif kind == "vrex":
        out += lam * np.var(risks)
    return out


def central_difference(fn, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        step = h * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (fn(up) - fn(dn)) / (2 * step)
    return g


def relative_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def random_instance(rng, max_d=10, max_n=50, n_env=None):
    d = int(rng.integers(1, max_d + 1))
    k = int(n_env or rng.integers(2, 5))
    envs = []
    for _ in range(k):
        n = int(rng.integers(2, max_n + 1))
        x = rng.normal(size=(n, d)) * rng.uniform(0.2, 3.0)
        y = x @ rng.normal(size=d) + rng.normal(size=n) * rng.uniform(0.1, 2.0)
        envs.append((x, y))
    theta = rng.normal(size=d + 1)
    return envs, theta
