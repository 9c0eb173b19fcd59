"""Domain types, restriction algebra and input validation.

Index conventions used throughout the package (all 0-based):

* variables / equations ``i`` in ``range(n)``;
* shocks / factors ``j`` in ``range(r)``;
* periods ``t`` index rows of the factor matrix ``F``, i.e. the estimation
  sample.  Row ``t`` of ``F`` belongs to row ``t + p`` of the dataset, because
  the first ``p`` observations only serve as initial lags.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "ModelDims",
    "Dataset",
    "LinearConstraint",
    "RestrictionSet",
    "PriorConfig",
    "HorseshoeState",
    "ParameterDraw",
    "ChainConfig",
    "ValidationReport",
    "validate",
    "expand_signs",
    "shock_signs",
    "design_matrices",
]


@dataclass(frozen=True)
class ModelDims:
    """Model dimensions.

    ``T`` is the number of observations in the dataset; the likelihood uses the
    last ``T - p`` of them (``T_eff``), so ``F`` has ``T_eff`` rows.
    """

    n: int
    p: int
    r: int
    T: int

    def __post_init__(self):
        for name in ("n", "p", "r", "T"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def k(self) -> int:
        return 1 + self.n * self.p

    @property
    def T_eff(self) -> int:
        return self.T - self.p

    @property
    def identified(self) -> bool:
        return self.r <= (self.n - 1) / 2


@dataclass(frozen=True)
class Dataset:
    """A ``T x n`` panel of already transformed observations."""

    values: np.ndarray
    names: tuple[str, ...]
    time_index: tuple = ()
    transform_tags: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("dataset values must be a 2-D array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        T, n = values.shape
        names = tuple(str(s) for s in self.names) if self.names else tuple(f"y{i + 1}" for i in range(n))
        if len(names) != n:
            raise ValidationError(f"{len(names)} names for {n} columns")
        object.__setattr__(self, "names", names)
        time_index = tuple(self.time_index) if len(self.time_index) else tuple(range(T))
        if len(time_index) != T:
            raise ValidationError(f"time index has {len(time_index)} labels for {T} rows")
        object.__setattr__(self, "time_index", time_index)
        tags = tuple(self.transform_tags) if self.transform_tags else ("identity",) * n
        if len(tags) != n:
            raise ValidationError("one transform tag per variable is required")
        object.__setattr__(self, "transform_tags", tags)

    @classmethod
    def from_raw(cls, raw, names, time_index=(), transforms: Sequence[str] | None = None) -> "Dataset":
        """Build a dataset from untransformed levels, applying per-column ``log`` tags."""
        raw = np.array(raw, dtype=float)
        n = raw.shape[1]
        tags = tuple(transforms) if transforms is not None else ("identity",) * n
        out = raw.copy()
        for i, tag in enumerate(tags):
            if tag == "log":
                if np.any(raw[:, i] <= 0):
                    raise ValidationError(f"log transform of non-positive series {names[i]!r}")
                out[:, i] = np.log(raw[:, i])
            elif tag != "identity":
                raise ValidationError(f"unknown transform tag {tag!r}")
        if not np.all(np.isfinite(out)):
            raise ValidationError("dataset contains non-finite values after transformation")
        return cls(out, tuple(names), tuple(time_index), tags)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def period_of(self, label, p: int) -> int:
        """Map a time label to an estimation-sample period index."""
        labels = [str(x) for x in self.time_index]
        try:
            row = labels.index(str(label))
        except ValueError:
            raise ValidationError(f"time label {label!r} not found in dataset index") from None
        if row < p:
            raise ValidationError(f"time label {label!r} falls in the first {p} (initial-lag) rows")
        return row - p


@dataclass(frozen=True)
class LinearConstraint:
    """Two-sided constraint ``lower < R @ x < upper`` (open bounds, may be infinite)."""

    R: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.array(self.R, dtype=float))
        lo = np.atleast_1d(np.array(self.lower, dtype=float))
        hi = np.atleast_1d(np.array(self.upper, dtype=float))
        if lo.shape != (R.shape[0],) or hi.shape != (R.shape[0],):
            raise ValidationError(f"bounds must have length {R.shape[0]} to match R")
        if R.shape[0] < 1:
            raise ValidationError("a constraint needs at least one row")
        for a in (R, lo, hi):
            a.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def q(self) -> int:
        return self.R.shape[0]

    @property
    def d(self) -> int:
        return self.R.shape[1]

    def violations(self) -> list[str]:
        out = []
        for row in np.flatnonzero(~(self.lower < self.upper)):
            out.append(f"row {row}: lower < upper required (got {self.lower[row]} >= {self.upper[row]})")
        if np.any(np.isnan(self.R)) or np.any(np.isinf(self.R)):
            out.append("R must be finite")
        return out

    def satisfied(self, x) -> bool:
        v = self.R @ np.asarray(x, dtype=float)
        return bool(np.all(self.lower < v) and np.all(v < self.upper))

    @classmethod
    def stack(cls, constraints: Iterable["LinearConstraint"]) -> "LinearConstraint | None":
        cs = list(constraints)
        if not cs:
            return None
        return cls(
            np.vstack([c.R for c in cs]),
            np.concatenate([c.lower for c in cs]),
            np.concatenate([c.upper for c in cs]),
        )

    def scaled(self, diag) -> "LinearConstraint":
        """Return the constraint on ``x`` implied by this constraint on ``diag * x``."""
        return LinearConstraint(self.R * np.asarray(diag, dtype=float)[None, :], self.lower, self.upper)


def _sign_rows(signs: Mapping[int, int], d: int) -> LinearConstraint:
    cols = sorted(signs)
    R = np.zeros((len(cols), d))
    lo = np.empty(len(cols))
    hi = np.empty(len(cols))
    for row, j in enumerate(cols):
        R[row, j] = 1.0
        if signs[j] > 0:
            lo[row], hi[row] = 0.0, np.inf
        else:
            lo[row], hi[row] = -np.inf, 0.0
    return LinearConstraint(R, lo, hi)


def _sign_of_row(c: LinearConstraint, row: int) -> tuple[int, int] | None:
    """Return ``(column, sign)`` if constraint row is a pure sign restriction."""
    nz = np.flatnonzero(c.R[row])
    if nz.size != 1 or c.R[row, nz[0]] <= 0:
        return None
    lo, hi = c.lower[row], c.upper[row]
    if lo == 0 and hi == np.inf:
        return int(nz[0]), 1
    if lo == -np.inf and hi == 0:
        return int(nz[0]), -1
    return None


@dataclass(frozen=True)
class RestrictionSet:
    """Impact, shock and product restrictions.

    ``impact[i]`` constrains the loadings row ``l_i``; ``shock[t]`` constrains
    ``f_t``; ``product[(i, t)]`` constrains the element-wise product
    ``l_i * f_t``.  All constraints have ``d = r`` columns.
    """

    impact: Mapping[int, LinearConstraint] = field(default_factory=dict)
    shock: Mapping[int, LinearConstraint] = field(default_factory=dict)
    product: Mapping[tuple[int, int], LinearConstraint] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "impact", {int(k): v for k, v in dict(self.impact).items()})
        object.__setattr__(self, "shock", {int(k): v for k, v in dict(self.shock).items()})
        object.__setattr__(
            self, "product", {(int(k[0]), int(k[1])): v for k, v in dict(self.product).items()}
        )

    @property
    def restricted_periods(self) -> frozenset[int]:
        return frozenset(self.shock) | frozenset(t for _, t in self.product)

    @property
    def is_empty(self) -> bool:
        return not (self.impact or self.shock or self.product)

    def counts(self) -> dict[str, int]:
        return {
            "impact": sum(c.q for c in self.impact.values()),
            "shock": sum(c.q for c in self.shock.values()),
            "product": sum(c.q for c in self.product.values()),
        }

    def products_at(self, t: int) -> list[tuple[int, LinearConstraint]]:
        return [(i, c) for (i, s), c in sorted(self.product.items()) if s == t]

    def products_for(self, i: int) -> list[tuple[int, LinearConstraint]]:
        return [(t, c) for (e, t), c in sorted(self.product.items()) if e == i]

    def merged(self, other: "RestrictionSet") -> "RestrictionSet":
        def join(a, b):
            out = dict(a)
            for key, c in b.items():
                out[key] = LinearConstraint.stack([out[key], c]) if key in out else c
            return out

        return RestrictionSet(
            join(self.impact, other.impact), join(self.shock, other.shock), join(self.product, other.product)
        )

    def impact_sign_table(self, n: int, r: int) -> np.ndarray:
        """Recover the ``n x r`` sign table from pure sign rows of the impact map."""
        table = np.zeros((n, r), dtype=int)
        for i, c in self.impact.items():
            for row in range(c.q):
                hit = _sign_of_row(c, row)
                if hit is not None:
                    table[i, hit[0]] = hit[1]
        return table

    def shock_sign_table(self, T: int, r: int) -> np.ndarray:
        table = np.zeros((T, r), dtype=int)
        for t, c in self.shock.items():
            for row in range(c.q):
                hit = _sign_of_row(c, row)
                if hit is not None:
                    table[t, hit[0]] = hit[1]
        return table

    def violations(self, L, F) -> list[str]:
        """List every constraint row not strictly satisfied by ``(L, F)``."""
        L = np.asarray(L, dtype=float)
        F = np.asarray(F, dtype=float)
        out = []

        def check(tag, c, x):
            v = c.R @ x
            bad = np.flatnonzero(~((c.lower < v) & (v < c.upper)))
            for row in bad:
                out.append(f"{tag} row {row}: {c.lower[row]} < {v[row]:.6g} < {c.upper[row]} fails")

        for i, c in self.impact.items():
            check(f"impact[{i}]", c, L[i])
        for t, c in self.shock.items():
            check(f"shock[{t}]", c, F[t])
        for (i, t), c in self.product.items():
            check(f"product[{i},{t}]", c, L[i] * F[t])
        return out

    def satisfied_by(self, L, F) -> bool:
        return not self.violations(L, F)

    def permuted(self, perm: Sequence[int]) -> "RestrictionSet":
        """Relabel equations: new equation ``a`` is old equation ``perm[a]``."""
        inv = {int(old): new for new, old in enumerate(perm)}
        return RestrictionSet(
            {inv[i]: c for i, c in self.impact.items()},
            dict(self.shock),
            {(inv[i], t): c for (i, t), c in self.product.items()},
        )


def expand_signs(sign_table) -> RestrictionSet:
    """Expand an ``n x r`` table over {-1, 0, +1} into impact sign constraints."""
    table = np.asarray(sign_table)
    if table.ndim != 2:
        raise ValidationError("sign table must be 2-D")
    if not np.all(np.isin(table, (-1, 0, 1))):
        raise ValidationError("sign table entries must be -1, 0 or +1")
    r = table.shape[1]
    impact = {}
    for i in range(table.shape[0]):
        signs = {j: int(table[i, j]) for j in range(r) if table[i, j] != 0}
        if signs:
            impact[i] = _sign_rows(signs, r)
    return RestrictionSet(impact=impact)


def shock_signs(entries: Iterable[tuple[int, int, int]], r: int) -> RestrictionSet:
    """Build shock sign constraints from ``(period, shock, sign)`` triples."""
    by_t: dict[int, dict[int, int]] = {}
    for t, j, s in entries:
        if s not in (-1, 1):
            raise ValidationError(f"shock sign must be +1 or -1, got {s}")
        slot = by_t.setdefault(int(t), {})
        if int(j) in slot and slot[int(j)] != s:
            raise ValidationError(f"conflicting signs for shock {j} in period {t}")
        slot[int(j)] = int(s)
    return RestrictionSet(shock={t: _sign_rows(s, r) for t, s in by_t.items()})


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    ``loading_mean`` may be a scalar, an ``r``-vector or an ``n x r`` array;
    ``loading_cov`` a scalar (times identity), an ``r x r`` matrix or an
    ``n x r x r`` stack.
    """

    loading_mean: float | np.ndarray = 0.0
    loading_cov: float | np.ndarray = 10.0
    alpha0: float = 0.0
    beta0: float = 0.0
    intercept_var: float = 10.0

    def mean_for(self, i: int, r: int) -> np.ndarray:
        m = np.asarray(self.loading_mean, dtype=float)
        if m.ndim == 0:
            return np.full(r, float(m))
        if m.ndim == 1:
            return m.copy()
        return m[i].copy()

    def cov_for(self, i: int, r: int) -> np.ndarray:
        V = np.asarray(self.loading_cov, dtype=float)
        if V.ndim == 0:
            return float(V) * np.eye(r)
        if V.ndim == 2:
            return V.copy()
        return V[i].copy()


@dataclass
class HorseshoeState:
    lam: np.ndarray  # (n,) global variances
    psi: np.ndarray  # (n, k-1) local variances
    z_lam: np.ndarray
    z_psi: np.ndarray

    @classmethod
    def ones(cls, n: int, k: int) -> "HorseshoeState":
        return cls(np.ones(n), np.ones((n, k - 1)), np.ones(n), np.ones((n, k - 1)))

    def copy(self) -> "HorseshoeState":
        return HorseshoeState(self.lam.copy(), self.psi.copy(), self.z_lam.copy(), self.z_psi.copy())

    def is_valid(self) -> bool:
        return all(np.all(np.isfinite(a)) and np.all(a > 0) for a in (self.lam, self.psi, self.z_lam, self.z_psi))


@dataclass
class ParameterDraw:
    beta: np.ndarray  # (n, k), intercept first
    L: np.ndarray  # (n, r)
    sigma2: np.ndarray  # (n,)
    F: np.ndarray  # (T_eff, r)
    hs: HorseshoeState

    def copy(self) -> "ParameterDraw":
        return ParameterDraw(self.beta.copy(), self.L.copy(), self.sigma2.copy(), self.F.copy(), self.hs.copy())

    @property
    def intercept(self) -> np.ndarray:
        return self.beta[:, 0]

    def lag_matrices(self) -> np.ndarray:
        """Return ``(p, n, n)`` stack of ``B_1 .. B_p``."""
        n = self.beta.shape[0]
        p = (self.beta.shape[1] - 1) // n
        return self.beta[:, 1:].reshape(n, p, n).transpose(1, 0, 2)

    def error_covariance(self) -> np.ndarray:
        return self.L @ self.L.T + np.diag(self.sigma2)


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 6000
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < n_iter")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def keeps(self, it: int) -> bool:
        """Whether 0-based iteration ``it`` is stored."""
        j = it - self.burn_in + 1
        return j > 0 and j % self.thin == 0 and j // self.thin <= self.n_retained


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ValidationError("invalid configuration:\n  " + "\n  ".join(self.violations))


def validate(
    dims: ModelDims,
    data: Dataset | None = None,
    restr: RestrictionSet | None = None,
    prior: PriorConfig | None = None,
    *,
    allow_underidentified: bool = False,
) -> ValidationReport:
    """Collect every problem with a model configuration without raising.

    ``allow_underidentified`` waives the ``r <= (n - 1) / 2`` check, for
    designs such as ``n = 10, r = 5`` whose loadings are pinned down by sign
    restrictions rather than by the covariance structure alone.
    """
    out: list[str] = []
    n, r = dims.n, dims.r
    if not dims.identified and not allow_underidentified:
        out.append(f"r ≤ (n−1)/2 fails since {r} > {(n - 1) / 2:g}")
    if dims.T_eff < 1:
        out.append(f"T = {dims.T} leaves no observations after {dims.p} lags")

    if data is not None:
        if data.values.shape != (dims.T, n):
            out.append(f"dataset shape {data.values.shape} does not match (T, n) = ({dims.T}, {n})")
        if not np.all(np.isfinite(data.values)):
            out.append("dataset contains non-finite values")

    if restr is not None:
        for i, c in restr.impact.items():
            if not 0 <= i < n:
                out.append(f"impact restriction on equation {i} outside [0, {n})")
            if c.d != r:
                out.append(f"impact[{i}] has {c.d} columns, expected r = {r}")
            out.extend(f"impact[{i}] {v}" for v in c.violations())
        for t, c in restr.shock.items():
            if not 0 <= t < dims.T_eff:
                out.append(f"shock restriction at period {t} outside [0, {dims.T_eff})")
            if c.d != r:
                out.append(f"shock[{t}] has {c.d} columns, expected r = {r}")
            out.extend(f"shock[{t}] {v}" for v in c.violations())
        for (i, t), c in restr.product.items():
            if not 0 <= i < n:
                out.append(f"product restriction on equation {i} outside [0, {n})")
            if not 0 <= t < dims.T_eff:
                out.append(f"product restriction at period {t} outside [0, {dims.T_eff})")
            if c.d != r:
                out.append(f"product[{i},{t}] has {c.d} columns, expected r = {r}")
            out.extend(f"product[{i},{t}] {v}" for v in c.violations())

    if prior is not None:
        if prior.alpha0 < 0 or prior.beta0 < 0:
            out.append("alpha0 and beta0 must be nonnegative")
        if prior.intercept_var <= 0:
            out.append("intercept_var must be positive")
        for i in range(n):
            try:
                V = prior.cov_for(i, r)
                m = prior.mean_for(i, r)
            except (IndexError, ValueError):
                out.append(f"loading prior for equation {i} has the wrong shape")
                continue
            if V.shape != (r, r) or m.shape != (r,):
                out.append(f"loading prior for equation {i} has the wrong shape")
                continue
            if not np.allclose(V, V.T):
                out.append(f"loading_cov for equation {i} is not symmetric")
                continue
            try:
                np.linalg.cholesky(V)
            except np.linalg.LinAlgError:
                out.append(f"loading_cov for equation {i} is not positive definite")
    return ValidationReport(out)


def design_matrices(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Y, X)`` with ``Y = values[p:]`` and ``X`` rows ``(1, y_{t-1}', ..., y_{t-p}')``."""
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    T_eff = T - p
    X = np.empty((T_eff, 1 + n * p))
    X[:, 0] = 1.0
    for lag in range(1, p + 1):
        X[:, 1 + (lag - 1) * n : 1 + lag * n] = values[p - lag : T - lag]
    return values[p:].copy(), X
