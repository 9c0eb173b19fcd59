"""Accept-reject identification over reduced-form draws and Haar rotations.

This is the comparison method for the runtime benchmark: reduced-form VAR
draws from the flat-prior normal-inverse-Wishart posterior, each combined
with random orthogonal rotations until the implied impact matrix and shocks
satisfy the sign restrictions.  Accepted draws carry importance weights
``1 / P(narrative restrictions hold)`` estimated by Monte Carlo.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, stats

from .errors import ImproperPosterior, ValidationError
from .model import ChainConfig, Dataset, ModelDims, RestrictionSet, design_matrices

__all__ = [
    "BaselineConfig",
    "ReducedFormPosterior",
    "Candidate",
    "BaselineResult",
    "draw_reduced_form",
    "draw_rotation",
    "accept_or_weight",
    "run_baseline",
    "BenchmarkTask",
    "BenchmarkCell",
    "BenchmarkReport",
    "benchmark",
    "REFERENCE_MINUTES",
]

log = logging.getLogger(__name__)

# Reference runtimes in minutes: (impact, shock) -> (baseline, proposed)
REFERENCE_MINUTES = {(15, 0): (32.09, 0.18), (15, 3): (33.32, 0.23), (15, 6): (34.58, 0.23)}


@dataclass(frozen=True)
class BaselineConfig:
    """Search caps and importance-weight settings.

    For every admissible draw sought, up to ``max_rf_attempts`` reduced-form
    draws are tried, each with up to ``max_q_attempts`` rotations.
    ``n_importance`` is the number of weighted draws a standalone run
    collects; ``weight_mc_paths`` the Monte Carlo size of each weight.
    """

    max_rf_attempts: int = 100
    max_q_attempts: int = 100
    n_importance: int = 1000
    weight_mc_paths: int = 1000

    def __post_init__(self):
        for name in ("max_rf_attempts", "max_q_attempts", "n_importance", "weight_mc_paths"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(frozen=True)
class ReducedFormPosterior:
    """Flat-prior posterior of the unrestricted VAR ``Y = X B + U``.

    ``Sigma ~ IW(S, T - k)`` and ``vec(B) | Sigma ~ N(vec(B_ols), Sigma (x) (X'X)^-1)``.
    """

    Y: np.ndarray
    X: np.ndarray
    B_ols: np.ndarray  # (k, n)
    S: np.ndarray
    xtx_inv_chol: np.ndarray
    df: int

    @classmethod
    def from_values(cls, values, p: int) -> "ReducedFormPosterior":
        Y, X = design_matrices(np.asarray(values, dtype=float), p)
        T, n = Y.shape
        k = X.shape[1]
        if T <= k + n + 1:
            raise ImproperPosterior(f"flat-prior posterior needs T > k + n + 1 ({T} <= {k + n + 1})")
        B, *_ = np.linalg.lstsq(X, Y, rcond=None)
        U = Y - X @ B
        xtx_inv = np.linalg.inv(X.T @ X)
        return cls(Y, X, B, U.T @ U, np.linalg.cholesky(0.5 * (xtx_inv + xtx_inv.T)), T - k)

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(beta, Sigma)`` with ``beta`` in the sampler's ``n x k`` layout."""
        Sigma = stats.invwishart.rvs(df=self.df, scale=self.S, random_state=rng)
        Sigma = np.atleast_2d(Sigma)
        Z = rng.standard_normal(self.B_ols.shape)
        B = self.B_ols + self.xtx_inv_chol @ Z @ np.linalg.cholesky(Sigma).T
        return B.T, Sigma


def draw_reduced_form(data, dims: ModelDims, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One flat-prior draw ``(beta, Sigma)`` of the unrestricted VAR."""
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    return ReducedFormPosterior.from_values(values, dims.p).draw(rng)


def draw_rotation(r: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed ``r x r`` orthogonal matrix (or a stack of ``size``)."""
    if r < 1:
        raise ValidationError("r must be >= 1")
    return _haar_columns(r, r, rng, size)


def _haar_columns(n: int, r: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """First ``r`` columns of Haar ``n x n`` orthogonal matrices, via QR with sign correction."""
    shape = (n, r) if size is None else (size, n, r)
    Q, R = np.linalg.qr(rng.standard_normal(shape))
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    d = np.where(d == 0, 1.0, d)
    return Q * d[..., None, :]


@dataclass
class Candidate:
    """Impact matrix (``n x r``) and implied structural shocks (``T x r``) of one rotation."""

    impact: np.ndarray
    shocks: np.ndarray


def narrative_probability(restr: RestrictionSet, r: int, paths: int, rng: np.random.Generator) -> float:
    """Monte Carlo probability that independent standard normal shocks meet the shock restrictions."""
    if not restr.shock:
        return 1.0
    periods = sorted(restr.shock)
    E = rng.standard_normal((paths, len(periods), r))
    ok = np.ones(paths, dtype=bool)
    for j, t in enumerate(periods):
        c = restr.shock[t]
        v = E[:, j, :] @ c.R.T
        ok &= np.all((c.lower < v) & (v < c.upper), axis=1)
    return float(ok.mean())


def _impact_ok(impact: np.ndarray, restr: RestrictionSet) -> bool:
    return all(c.satisfied(impact[i]) for i, c in restr.impact.items())


def _shocks_ok(cand: Candidate, restr: RestrictionSet) -> bool:
    if not all(c.satisfied(cand.shocks[t]) for t, c in restr.shock.items()):
        return False
    return all(c.satisfied(cand.impact[i] * cand.shocks[t]) for (i, t), c in restr.product.items())


def accept_or_weight(
    candidate: Candidate, restr: RestrictionSet, cfg: BaselineConfig, rng: np.random.Generator
) -> tuple[bool, float]:
    """Check every restriction; accepted draws get weight ``1 / P_hat`` (1 without shock restrictions).

    ``P_hat`` is floored at ``1 / (2 * weight_mc_paths)`` so weights stay finite.
    """
    if not _impact_ok(candidate.impact, restr) or not _shocks_ok(candidate, restr):
        return False, 0.0
    if not restr.shock:
        return True, 1.0
    p = narrative_probability(restr, candidate.impact.shape[1], cfg.weight_mc_paths, rng)
    return True, 1.0 / max(p, 0.5 / cfg.weight_mc_paths)


class _ImpactCheck:
    """Vectorised impact sign test for a stack of candidate impact matrices."""

    def __init__(self, restr: RestrictionSet):
        self.items = [(i, c.R, c.lower, c.upper) for i, c in sorted(restr.impact.items())]

    def __call__(self, impacts: np.ndarray) -> np.ndarray:
        ok = np.ones(impacts.shape[0], dtype=bool)
        for i, R, lo, hi in self.items:
            v = impacts[:, i, :] @ R.T
            ok &= np.all((lo < v) & (v < hi), axis=1)
        return ok


@dataclass
class BaselineResult:
    """Outcome of one accept-reject run."""

    impacts: list[np.ndarray]
    shocks: list[np.ndarray]
    weights: np.ndarray
    seconds: float
    rf_draws: int
    rotations: int
    failed_searches: int
    timed_out: bool

    @property
    def n_accepted(self) -> int:
        return len(self.impacts)

    def resample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of accepted draws resampled with probability proportional to weight."""
        if not self.impacts:
            return np.zeros(0, dtype=int)
        w = self.weights / self.weights.sum()
        return rng.choice(len(self.impacts), size=size, replace=True, p=w)


def run_baseline(
    data,
    dims: ModelDims,
    restr: RestrictionSet,
    cfg: BaselineConfig | None = None,
    rng: np.random.Generator | None = None,
    *,
    target: int | None = None,
    timeout: float | None = None,
) -> BaselineResult:
    """Collect ``target`` admissible draws (default ``cfg.n_importance``).

    Each admissible draw is sought with at most ``max_rf_attempts`` reduced-form
    draws times ``max_q_attempts`` rotations; a search that exhausts its caps
    counts as failed and the next search starts.  The run stops early once
    ``timeout`` seconds have elapsed.
    """
    cfg = cfg or BaselineConfig()
    rng = rng if rng is not None else np.random.default_rng()
    target = cfg.n_importance if target is None else int(target)
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    start = time.perf_counter()
    post = ReducedFormPosterior.from_values(values, dims.p)
    check = _ImpactCheck(restr)
    n, r = dims.n, dims.r
    impacts, shocks, weights = [], [], []
    rf_draws = rotations = failed = 0
    timed_out = False
    while len(impacts) < target and not timed_out:
        found = False
        for _ in range(cfg.max_rf_attempts):
            if timeout is not None and time.perf_counter() - start > timeout:
                timed_out = True
                break
            beta, Sigma = post.draw(rng)
            rf_draws += 1
            P = np.linalg.cholesky(Sigma)
            W = linalg.solve_triangular(P, (post.Y - post.X @ beta.T).T, lower=True)  # (n, T)
            Qs = _haar_columns(n, r, rng, size=cfg.max_q_attempts)
            ok = check(P @ Qs)
            for q in np.flatnonzero(ok):
                rotations_here = q + 1
                cand = Candidate(P @ Qs[q], (Qs[q].T @ W).T)
                accepted, w = accept_or_weight(cand, restr, cfg, rng)
                if accepted:
                    rotations += rotations_here
                    impacts.append(cand.impact)
                    shocks.append(cand.shocks)
                    weights.append(w)
                    found = True
                    break
            if found:
                break
            rotations += cfg.max_q_attempts
        if not found and not timed_out:
            failed += 1
    return BaselineResult(
        impacts, shocks, np.array(weights), time.perf_counter() - start, rf_draws, rotations, failed, timed_out
    )


# ---------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchmarkTask:
    """Runtime comparison grid.

    Each configuration ``(n_impact, n_shock)`` is run on ``replications``
    synthetic datasets.  Both methods stop at ``target_draws`` admissible
    (baseline) or retained (proposed) draws.
    """

    configs: tuple[tuple[int, int], ...] = ((15, 0), (15, 3), (15, 6))
    replications: int = 10
    target_draws: int = 100
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0
    timeout_seconds: float | None = 600.0
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    dgp_overrides: dict = field(default_factory=dict)


@dataclass
class BenchmarkCell:
    n_impact: int
    n_shock: int
    method: str
    seconds: list[float] = field(default_factory=list)
    completed: list[bool] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.n_impact} impact / {self.n_shock} shock"

    @property
    def mean_minutes(self) -> float:
        return float(np.mean(self.seconds)) / 60.0 if self.seconds else float("nan")


@dataclass
class BenchmarkReport:
    cells: list[BenchmarkCell]
    task: BenchmarkTask

    def cell(self, n_impact: int, n_shock: int, method: str) -> BenchmarkCell:
        for c in self.cells:
            if (c.n_impact, c.n_shock, c.method) == (n_impact, n_shock, method):
                return c
        raise KeyError((n_impact, n_shock, method))

    def speedup(self, n_impact: int, n_shock: int) -> float:
        """Mean baseline time over mean proposed time; a lower bound when the baseline timed out."""
        b = self.cell(n_impact, n_shock, "baseline").mean_minutes
        p = self.cell(n_impact, n_shock, "proposed").mean_minutes
        return b / p if p > 0 else float("inf")

    def rows(self) -> list[dict]:
        out = []
        for c in self.cells:
            out.append(
                {
                    "restriction_config": c.label,
                    "method": c.method,
                    "mean_minutes": c.mean_minutes,
                    "replications": len(c.seconds),
                    "speedup": self.speedup(c.n_impact, c.n_shock) if c.method == "proposed" else 1.0,
                    "completed": int(sum(c.completed)),
                }
            )
        return out

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["restriction_config", "method", "mean_minutes", "replications", "speedup"])
            for row in self.rows():
                w.writerow([row["restriction_config"], row["method"], f"{row['mean_minutes']:.6f}",
                            row["replications"], f"{row['speedup']:.3f}"])

    def table(self) -> str:
        """Human-readable table with the reference minutes alongside."""
        lines = [
            "baseline: flat-prior accept-reject with importance weights (no shrinkage)",
            "proposed: Gibbs sampler with horseshoe shrinkage and truncated conditionals",
            f"{'config':<22}{'baseline min':>14}{'proposed min':>14}{'speedup':>10}{'ref speedup':>13}{'baseline done':>15}",
        ]
        for n_i, n_s in self.task.configs:
            b = self.cell(n_i, n_s, "baseline")
            p = self.cell(n_i, n_s, "proposed")
            ref = REFERENCE_MINUTES.get((n_i, n_s))
            ref_s = f"{ref[0] / ref[1]:.0f}" if ref else "-"
            done = f"{sum(b.completed)}/{len(b.completed)}"
            lines.append(
                f"{b.label:<22}{b.mean_minutes:>14.4f}{p.mean_minutes:>14.4f}{self.speedup(n_i, n_s):>10.1f}{ref_s:>13}{done:>15}"
            )
        return "\n".join(lines)


def _time_proposed(system, task: BenchmarkTask, seed: int) -> float:
    from .sampler import run_gibbs

    cfg = system.config
    dims = ModelDims(cfg.n, cfg.p, cfg.m, cfg.T)
    chain_cfg = ChainConfig(task.burn_in + task.target_draws * task.thin, task.burn_in, task.thin, seed)
    t0 = time.perf_counter()
    chain = run_gibbs(chain_cfg, dims, system.data, system.restrictions, allow_underidentified=True, check_uniqueness=False)
    elapsed = time.perf_counter() - t0
    assert len(chain) == task.target_draws
    return elapsed


def benchmark(task: BenchmarkTask, progress: Callable[[str], None] | None = None) -> BenchmarkReport:
    """Time both methods on every configuration and dataset, single-threaded."""
    from .dgp import DgpConfig, simulate_system
    from .sampler import Streams

    dgp_cfg = DgpConfig().with_overrides(**task.dgp_overrides)
    dims = ModelDims(dgp_cfg.n, dgp_cfg.p, dgp_cfg.m, dgp_cfg.T)
    cells = []
    _warm_up(dgp_cfg)
    for ci, (n_i, n_s) in enumerate(task.configs):
        base = BenchmarkCell(n_i, n_s, "baseline")
        prop = BenchmarkCell(n_i, n_s, "proposed")
        for rep in range(task.replications):
            streams = Streams(task.seed, ci, rep)
            system = simulate_system(dgp_cfg, n_i, n_s, streams.get(0))
            res = run_baseline(
                system.data, dims, system.restrictions, task.baseline, streams.get(1),
                target=task.target_draws, timeout=task.timeout_seconds,
            )
            base.seconds.append(res.seconds)
            base.completed.append(res.n_accepted >= task.target_draws)
            prop.seconds.append(_time_proposed(system, task, seed=task.seed + 1000 * ci + rep))
            prop.completed.append(True)
            if progress is not None:
                progress(
                    f"{base.label} rep {rep + 1}/{task.replications}: baseline {res.seconds:.2f}s "
                    f"({res.n_accepted} accepted{', timed out' if res.timed_out else ''}), proposed {prop.seconds[-1]:.2f}s"
                )
        cells += [base, prop]
    return BenchmarkReport(cells, task)


def _warm_up(dgp_cfg) -> None:
    """Load compiled kernels before any timing."""
    from .dgp import simulate_system

    system = simulate_system(dgp_cfg, 2 * dgp_cfg.m, 1, np.random.default_rng(0))
    _time_proposed(system, BenchmarkTask(target_draws=1, burn_in=2, thin=1), seed=0)
