"""Structural post-processing of posterior draws.

Impulse responses, forecast error variance decompositions, historical
decompositions, the shock projection ``A (y_t - B x_t)`` and the check that
realized sign patterns single out every shock.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import RankDeficientLoadings, ValidationError
from .model import Dataset, ModelDims, ParameterDraw, design_matrices

__all__ = [
    "vma_coefficients",
    "irf",
    "fevd",
    "HistoricalDecomposition",
    "historical_decomposition",
    "ShockProjection",
    "project_shocks",
    "check_sign_uniqueness",
    "band",
    "StructuralOutput",
    "summarize_chain",
    "write_long_csv",
]


def companion(lags: np.ndarray) -> np.ndarray:
    """Companion matrix of ``B_1 .. B_p`` (``lags`` has shape ``(p, n, n)``)."""
    p, n, _ = lags.shape
    C = np.zeros((n * p, n * p))
    C[:n] = np.concatenate(list(lags), axis=1)
    if p > 1:
        C[n:, :-n] = np.eye(n * (p - 1))
    return C


def vma_coefficients(lags: np.ndarray, H: int) -> np.ndarray:
    """``Psi_0 .. Psi_{H-1}``, the top-left blocks of powers of the companion matrix."""
    if H < 1:
        raise ValidationError("H must be >= 1")
    p, n, _ = lags.shape
    C = companion(lags)
    out = np.empty((H, n, n))
    P = np.eye(n * p)
    for h in range(H):
        out[h] = P[:n, :n]
        P = C @ P
    return out


def irf(draw: ParameterDraw, H: int) -> np.ndarray:
    """Responses ``Psi_h L`` to one-standard-deviation shocks, shape ``(H, n, r)``."""
    return vma_coefficients(draw.lag_matrices(), H) @ draw.L


def fevd(draw: ParameterDraw, H: int, renormalize_shocks: bool = False) -> np.ndarray:
    """Forecast error variance shares, shape ``(H, n, r + 1)``.

    Columns ``0..r-1`` are the structural shocks and the last column is the
    idiosyncratic part.  Each ``(h, i)`` slice sums to one.  With
    ``renormalize_shocks`` the idiosyncratic column is dropped from the
    denominator and set to zero, so the shock shares sum to one instead.
    """
    Psi = vma_coefficients(draw.lag_matrices(), H)
    resp = Psi @ draw.L  # (H, n, r)
    shock = np.cumsum(resp**2, axis=0)
    idio = np.cumsum(np.einsum("hij,j->hi", Psi**2, draw.sigma2), axis=0)
    parts = np.concatenate([shock, idio[:, :, None]], axis=2)
    if renormalize_shocks:
        parts[:, :, -1] = 0.0
    total = parts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, parts / total, 0.0)
    return out


@dataclass(frozen=True)
class HistoricalDecomposition:
    """Additive split of the estimation-sample observations.

    ``contributions[t, i, j]`` is the part of ``y_{t,i}`` due to shock ``j``
    from the start of the sample, ``idiosyncratic`` the part due to ``v``,
    and ``remainder`` the deterministic path from the intercept and the
    pre-sample initial conditions.
    """

    contributions: np.ndarray  # (T_eff, n, r)
    idiosyncratic: np.ndarray  # (T_eff, n)
    remainder: np.ndarray  # (T_eff, n)

    def reconstruct(self) -> np.ndarray:
        return self.contributions.sum(axis=2) + self.idiosyncratic + self.remainder


def _filter(lags: np.ndarray, impulses: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
    """Run ``z_t = sum_l B_l z_{t-l} + u_t`` over ``impulses`` (leading axis time).

    ``start`` holds the ``p`` pre-sample values (oldest first); zeros if None.
    Trailing axes of ``impulses`` beyond the variable axis are carried along.
    """
    p = lags.shape[0]
    T = impulses.shape[0]
    z = np.zeros((T + p,) + impulses.shape[1:])
    if start is not None:
        z[:p] = start
    for t in range(T):
        acc = impulses[t].copy()
        for lag in range(1, p + 1):
            acc += np.tensordot(lags[lag - 1], z[p + t - lag], axes=(1, 0))
        z[p + t] = acc
    return z[p:]


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)


def historical_decomposition(draw: ParameterDraw, data, dims: ModelDims | None = None) -> HistoricalDecomposition:
    """Shock-by-shock historical contributions over the estimation sample."""
    values = _values(data)
    lags = draw.lag_matrices()
    p = lags.shape[0]
    if dims is not None and dims.p != p:
        raise ValidationError(f"draw has {p} lags but dims.p = {dims.p}")
    Y, X = design_matrices(values, p)
    if draw.F.shape[0] != Y.shape[0]:
        raise ValidationError(f"F has {draw.F.shape[0]} periods, data give {Y.shape[0]}")
    V = Y - X @ draw.beta.T - draw.F @ draw.L.T
    shock_imp = draw.L[None, :, :] * draw.F[:, None, :]  # (T, n, r)
    contributions = _filter(lags, shock_imp)
    idio = _filter(lags, V)
    n = values.shape[1]
    remainder = _filter(lags, np.broadcast_to(draw.intercept, (Y.shape[0], n)), start=values[:p])
    return HistoricalDecomposition(contributions, idio, remainder)


@dataclass(frozen=True)
class ShockProjection:
    shocks: np.ndarray  # (T_eff, r)
    correlation: np.ndarray  # (r,) with the sampled F


def project_shocks(draw: ParameterDraw, data) -> ShockProjection:
    """Project reduced-form residuals on the loadings, ``A = (L'L)^-1 L'``."""
    L = draw.L
    s = np.linalg.svd(L, compute_uv=False)
    if s[-1] <= s[0] * L.shape[0] * np.finfo(float).eps:
        raise RankDeficientLoadings(f"L has numerical rank below {L.shape[1]}")
    p = draw.lag_matrices().shape[0]
    Y, X = design_matrices(_values(data), p)
    U = Y - X @ draw.beta.T
    shocks = np.linalg.lstsq(L, U.T, rcond=None)[0].T
    corr = np.array([_corr(shocks[:, j], draw.F[:, j]) for j in range(L.shape[1])])
    return ShockProjection(shocks, corr)


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else float("nan")


def check_sign_uniqueness(L, F, sign_table=None, shock_sign_table=None) -> bool:
    """Whether every shock column has its own realized sign pattern.

    The pattern of column ``j`` collects ``sign(L[i, j])`` over every
    impact-restricted row ``i`` and ``sign(F[t, j])`` over every
    narrative-restricted period ``t``.  Returns False when two columns share
    a pattern or one is the exact negation of the other.
    """
    L = np.asarray(L, dtype=float)
    F = np.asarray(F, dtype=float)
    parts = []
    if sign_table is not None:
        rows = np.flatnonzero(np.any(np.asarray(sign_table) != 0, axis=1))
        parts.append(np.sign(L[rows]))
    if shock_sign_table is not None and F.size:
        periods = np.flatnonzero(np.any(np.asarray(shock_sign_table) != 0, axis=1))
        parts.append(np.sign(F[periods]))
    if not parts:
        return L.shape[1] <= 1
    pat = np.vstack(parts)  # (positions, r)
    r = pat.shape[1]
    for a in range(r):
        for b in range(a + 1, r):
            if np.array_equal(pat[:, a], pat[:, b]) or np.array_equal(pat[:, a], -pat[:, b]):
                return False
    return True


# ---------------------------------------------------------------------------
# summaries


def band(stack: np.ndarray, lower: float = 16.0, upper: float = 84.0) -> dict[str, np.ndarray]:
    """Pointwise median and percentile band over the leading (draw) axis."""
    q = np.percentile(stack, [lower, 50.0, upper], axis=0)
    return {"lower": q[0], "median": q[1], "upper": q[2]}


@dataclass
class StructuralOutput:
    irf: np.ndarray  # (S, H, n, r)
    fevd: np.ndarray  # (S, H, n, r+1)
    hd: np.ndarray  # (S, T_eff, n, r)
    quantiles: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def summarize_chain(
    draws: Sequence[ParameterDraw], data, H: int, renormalize_shocks: bool = False
) -> StructuralOutput:
    """IRF, FEVD and HD for every draw plus their median and 16/84 bands."""
    if not draws:
        raise ValidationError("no draws to summarize")
    irfs = np.stack([irf(d, H) for d in draws])
    fevds = np.stack([fevd(d, H, renormalize_shocks) for d in draws])
    hds = np.stack([historical_decomposition(d, data).contributions for d in draws])
    out = StructuralOutput(irfs, fevds, hds)
    out.quantiles = {"irf": band(irfs), "fevd": band(fevds), "hd": band(hds)}
    return out


def write_long_csv(
    path, bands: dict[str, np.ndarray], index_name: str, variables: Sequence[str], shocks: Sequence[str],
    index_labels: Iterable | None = None,
) -> None:
    """Write one summary in long format: ``stat, <index_name>, variable, shock, value``."""
    median = bands["median"]
    H, n, m = median.shape
    labels = list(index_labels) if index_labels is not None else list(range(H))
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stat", index_name, "variable", "shock", "value"])
        for stat in ("median", "lower", "upper"):
            arr = bands[stat]
            for h in range(H):
                for i in range(n):
                    for j in range(m):
                        w.writerow([stat, labels[h], variables[i], shocks[j], repr(float(arr[h, i, j]))])
