"""Synthetic benchmark data with known structure."""

import numpy as np

from .numeric import make_rng


def boston_like(n=506, n_signal=13, n_noise=13, noise_std=0.5, seed=0):
    """Regression with ``n_signal`` informative features plus pure-noise columns.

    Informative features are correlated Gaussians (AR(1), rho = 0.3); the
    response is linear in them with a mild nonlinear component. Returns
    ``(x, y, support)`` where ``support`` indexes the informative columns,
    which come first.
    """
    rng = make_rng(seed, task_id=11)
    rho = 0.3
    z = rng.standard_normal((n, n_signal))
    xs = np.empty_like(z)
    xs[:, 0] = z[:, 0]
    for j in range(1, n_signal):
        xs[:, j] = rho * xs[:, j - 1] + np.sqrt(1 - rho * rho) * z[:, j]
    beta = rng.uniform(0.5, 1.5, n_signal) * rng.choice([-1.0, 1.0], n_signal)
    y = xs @ beta
    y += 0.5 * np.sin(2.0 * xs[:, 0]) + 0.3 * xs[:, 1] * xs[:, 2] + 0.25 * np.maximum(xs[:, 3], 0.0) ** 2
    y += noise_std * rng.standard_normal(n)
    xn = rng.standard_normal((n, n_noise))
    return np.hstack([xs, xn]), y, np.arange(n_signal)


def cubic_manifold(m=500, n=20, latent=2, noise_std=0.05, seed=0):
    """Rows ``x = g(t)`` for latent ``t`` in R^latent and a random cubic map ``g``.

    Each column is a random combination of all monomials of degree 1 to 3 in
    ``t``, so the data lie near a curved ``latent``-dimensional surface that no
    rank-``latent`` linear model captures.
    """
    rng = make_rng(seed, task_id=12)
    t = rng.uniform(-1.0, 1.0, (m, latent))
    monos = [t[:, i] for i in range(latent)]
    for i in range(latent):
        for j in range(i, latent):
            monos.append(t[:, i] * t[:, j])
            for k in range(j, latent):
                monos.append(t[:, i] * t[:, j] * t[:, k])
    basis = np.column_stack(monos)
    coef = rng.standard_normal((basis.shape[1], n))
    x = basis @ coef
    x += noise_std * x.std(axis=0) * rng.standard_normal(x.shape)
    return x


def classification_blobs(n=1080, d=77, n_classes=8, n_informative=20, seed=0):
    """Gaussian class clusters separated along ``n_informative`` of ``d`` features."""
    rng = make_rng(seed, task_id=13)
    y = np.arange(n) % n_classes
    rng.shuffle(y)
    centers = rng.standard_normal((n_classes, n_informative)) * 1.2
    x = rng.standard_normal((n, d))
    x[:, :n_informative] += centers[y]
    return x, y.astype(np.int64)
