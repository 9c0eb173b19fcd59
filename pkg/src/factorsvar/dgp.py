"""Synthetic factor-error VAR systems and truth-consistent sign restrictions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import PatternSearchExhausted, StabilityNotFound, ValidationError
from .model import Dataset, RestrictionSet, expand_signs, shock_signs
from .structural import companion

__all__ = [
    "DgpConfig",
    "Coefficients",
    "SimulatedSystem",
    "generate_coefficients",
    "generate_loadings",
    "simulate",
    "generate_restrictions",
    "simulate_system",
    "spectral_radius",
]


@dataclass(frozen=True)
class DgpConfig:
    """Design of the synthetic system.

    ``shock_var`` is the variance of each structural shock; ``obs_mu`` and
    ``obs_sigma`` are the constant and noise scale added to every equation.
    """

    n: int = 10
    m: int = 5
    T: int = 148
    p: int = 4
    burn_in: int = 100
    stability_bound: float = 0.95
    shock_var: float = 0.02
    obs_mu: float = 1.0
    obs_sigma: float = 0.5
    max_attempts: int = 10_000

    def __post_init__(self):
        if not self.stability_bound < 1:
            raise ValidationError("stability_bound must be < 1")
        for name in ("n", "m", "T", "p", "max_attempts"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.burn_in < 0 or self.shock_var < 0 or self.obs_sigma < 0:
            raise ValidationError("burn_in, shock_var and obs_sigma must be non-negative")

    def with_overrides(self, **kw) -> "DgpConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class Coefficients:
    b0: np.ndarray  # (n,)
    lags: np.ndarray  # (p, n, n)

    @property
    def beta(self) -> np.ndarray:
        """``n x (1 + n p)`` matrix in the sampler's column layout."""
        return np.column_stack([self.b0, *self.lags])


def spectral_radius(lags: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion(lags)))))


def generate_coefficients(cfg: DgpConfig, rng: np.random.Generator) -> Coefficients:
    """Draw a stable coefficient set, redrawing everything until the bound holds."""
    n, p = cfg.n, cfg.p
    for _ in range(cfg.max_attempts):
        b0 = rng.uniform(-1.0, 1.0, n)
        B1 = rng.uniform(-0.1, 0.1, (n, n))
        B1[np.diag_indices(n)] = rng.uniform(0.0, 0.3, n)
        lags = [B1] + [rng.normal(0.0, 0.05 / np.sqrt(lag), (n, n)) for lag in range(2, p + 1)]
        lags = np.stack(lags)
        if spectral_radius(lags) < cfg.stability_bound:
            return Coefficients(b0, lags)
    raise StabilityNotFound(f"no stable draw in {cfg.max_attempts} attempts")


def generate_loadings(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    """``n x m`` Gaussian loadings with unit-norm rows."""
    L = rng.standard_normal((cfg.n, cfg.m))
    norms = np.linalg.norm(L, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        L[bad] = rng.standard_normal((int(bad.sum()), cfg.m))
        norms = np.linalg.norm(L, axis=1)
    return L / norms[:, None]


def simulate(cfg: DgpConfig, coeffs: Coefficients, L: np.ndarray, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    """Simulate ``burn_in + T`` periods from zero initial conditions and keep the last ``T``.

    Returns the dataset and the ``T x m`` structural shocks of the kept rows.
    """
    n, p = cfg.n, cfg.p
    total = cfg.burn_in + cfg.T
    F = rng.normal(0.0, np.sqrt(cfg.shock_var), (total, L.shape[1]))
    eps = rng.standard_normal((total, n))
    y = np.zeros((total + p, n))
    for t in range(total):
        acc = coeffs.b0 + F[t] @ L.T + cfg.obs_mu + cfg.obs_sigma * eps[t]
        for lag in range(1, p + 1):
            acc = acc + coeffs.lags[lag - 1] @ y[p + t - lag]
        y[p + t] = acc
    kept = y[p + cfg.burn_in :]
    names = tuple(f"y{i + 1}" for i in range(n))
    return Dataset(kept, names, tuple(range(cfg.T))), F[cfg.burn_in :]


def _unique_up_to_sign(table: np.ndarray) -> bool:
    m = table.shape[1]
    for a in range(m):
        for b in range(a + 1, m):
            if np.array_equal(table[:, a], table[:, b]) or np.array_equal(table[:, a], -table[:, b]):
                return False
    return True


def generate_restrictions(
    L_true: np.ndarray,
    F_true: np.ndarray,
    n_impact: int,
    n_shock: int,
    rng: np.random.Generator,
    max_attempts: int = 10_000,
) -> RestrictionSet:
    """Random sign restrictions that the truth satisfies.

    Impact positions are distinct cells of ``L_true`` signed by the truth,
    with at least two per column and column patterns distinct up to sign
    reversal.  Shock restrictions read the sign of ``F_true`` at random
    distinct ``(period, shock)`` cells; rows of ``F_true`` are estimation
    periods.
    """
    n, m = L_true.shape
    if n_impact < 2 * m:
        raise ValidationError(f"need at least {2 * m} impact restrictions for {m} shocks")
    if n_impact > n * m:
        raise ValidationError(f"cannot place {n_impact} restrictions in a {n} x {m} matrix")
    if n_shock > F_true.size:
        raise ValidationError("more shock restrictions than shock cells")
    if np.any(L_true == 0) or np.any(F_true == 0):
        raise ValidationError("truth has exact zeros; signs are undefined")
    for _ in range(max_attempts):
        mask = np.zeros((n, m), dtype=bool)
        for j in range(m):
            mask[rng.choice(n, 2, replace=False), j] = True
        free = np.flatnonzero(~mask.ravel())
        extra = rng.choice(free, n_impact - 2 * m, replace=False)
        mask.flat[extra] = True
        table = np.where(mask, np.sign(L_true), 0).astype(int)
        if _unique_up_to_sign(table):
            break
    else:
        raise PatternSearchExhausted(f"no unique sign pattern after {max_attempts} attempts")
    cells = rng.choice(F_true.size, n_shock, replace=False)
    entries = [(int(c // m), int(c % m), int(np.sign(F_true.flat[c]))) for c in cells]
    return expand_signs(table).merged(shock_signs(entries, m))


@dataclass(frozen=True)
class SimulatedSystem:
    """A synthetic dataset with its generating truth."""

    config: DgpConfig
    data: Dataset
    coeffs: Coefficients
    L: np.ndarray  # (n, m) unit-norm rows
    F: np.ndarray  # (T, m) shocks of the kept rows
    restrictions: RestrictionSet

    @property
    def F_estimation(self) -> np.ndarray:
        """Shocks aligned with the sampler's periods (first ``p`` rows dropped)."""
        return self.F[self.config.p :]

    @property
    def L_model(self) -> np.ndarray:
        """Loadings of unit-variance shocks, ``sqrt(shock_var) * L``."""
        return np.sqrt(self.config.shock_var) * self.L

    @property
    def F_model(self) -> np.ndarray:
        """Unit-variance shocks over the estimation periods."""
        sd = np.sqrt(self.config.shock_var)
        return self.F_estimation / sd if sd > 0 else self.F_estimation

    def error_covariance(self) -> np.ndarray:
        """True ``L L' + Sigma`` in unit-variance shock units."""
        Lm = self.L_model
        return Lm @ Lm.T + self.config.obs_sigma**2 * np.eye(self.config.n)

    def save(self, directory) -> dict[str, Path]:
        """Write ``data.csv``, ``truth.npz`` and ``truth.json`` into ``directory``."""
        from .io import save_dataset_csv, save_restrictions

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"data": d / "data.csv", "truth": d / "truth.json", "restrictions": d / "restrictions.json"}
        save_dataset_csv(self.data, paths["data"])
        save_restrictions(self.restrictions, paths["restrictions"], self.data, self.config.p)
        truth = {
            "config": asdict(self.config),
            "b0": self.coeffs.b0.tolist(),
            "lags": self.coeffs.lags.tolist(),
            "L": self.L.tolist(),
            "F": self.F.tolist(),
        }
        paths["truth"].write_text(json.dumps(truth, indent=1))
        return paths


def simulate_system(cfg: DgpConfig, n_impact: int, n_shock: int, rng: np.random.Generator) -> SimulatedSystem:
    """Coefficients, loadings, data and restrictions from one generator, in that order."""
    coeffs = generate_coefficients(cfg, rng)
    L = generate_loadings(cfg, rng)
    data, F = simulate(cfg, coeffs, L, rng)
    restr = generate_restrictions(L, F[cfg.p :], n_impact, n_shock, rng)
    return SimulatedSystem(cfg, data, coeffs, L, F, restr)
