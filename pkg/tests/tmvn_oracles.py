"""Brute-force rejection oracle and random problem generator shared by tmvn tests."""

from __future__ import annotations

import numpy as np

from factorsvar.model import LinearConstraint
from factorsvar.tmvn import TruncatedGaussianProblem


def rejection_sample(problem: TruncatedGaussianProblem, size: int, rng, chunk: int = 1_000_000) -> np.ndarray:
    chol = np.linalg.cholesky(problem.cov)
    c = problem.constraint
    out, have = [], 0
    while have < size:
        X = problem.mean + rng.standard_normal((chunk, chol.shape[0])) @ chol.T
        V = X @ c.R.T
        X = X[np.all((c.lower < V) & (V < c.upper), axis=1)]
        out.append(X)
        have += X.shape[0]
    return np.concatenate(out)[:size]


def region_mass(problem: TruncatedGaussianProblem, rng, draws: int = 200_000) -> float:
    chol = np.linalg.cholesky(problem.cov)
    c = problem.constraint
    X = problem.mean + rng.standard_normal((draws, chol.shape[0])) @ chol.T
    V = X @ c.R.T
    return float(np.all((c.lower < V) & (V < c.upper), axis=1).mean())


def random_problem(rng, min_mass: float = 1e-3) -> tuple[TruncatedGaussianProblem, float]:
    """Random problem with ``d <= 4``, one to ``d + 1`` rows and estimated mass ``>= min_mass``."""
    while True:
        d = int(rng.integers(1, 5))
        q = int(rng.integers(1, d + 2))
        A = rng.standard_normal((d, d))
        cov = A @ A.T / d + 0.2 * np.eye(d)
        mean = rng.normal(0.0, 1.0, d)
        R = rng.standard_normal((q, d))
        sd = np.sqrt(np.einsum("ij,jk,ik->i", R, cov, R))
        centre = R @ mean + sd * rng.normal(0.0, 1.5, q)
        lower = np.where(rng.random(q) < 0.3, -np.inf, centre - sd * rng.uniform(0.2, 2.0, q))
        upper = np.where(rng.random(q) < 0.3, np.inf, centre + sd * rng.uniform(0.2, 2.0, q))
        both_open = np.isinf(lower) & np.isinf(upper)
        lower[both_open] = centre[both_open]
        problem = TruncatedGaussianProblem(mean, cov, LinearConstraint(R, lower, upper))
        mass = region_mass(problem, rng)
        if mass >= min_mass:
            return problem, mass


def ks_2samp(a: np.ndarray, b: np.ndarray) -> float:
    from scipy import stats

    return float(stats.ks_2samp(a, b).statistic)
