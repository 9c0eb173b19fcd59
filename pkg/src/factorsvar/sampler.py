"""Gibbs sampler for the factor-error SVAR with truncated priors.

One iteration draws the factors ``F`` and then, equation by equation, the
loadings ``l_i``, the VAR coefficients ``beta_i``, the idiosyncratic
variance ``sigma_i^2`` and the horseshoe block (``lam``, ``psi``, ``z_lam``,
``z_psi``).  Given ``F`` the equations are conditionally independent, so
running the four updates equation by equation is the same transition as
running each update across all equations in turn.  Restrictions enter only
as truncation regions of the ``F`` and ``L`` conditionals: every state of the
chain satisfies them and nothing is ever rejected.

Randomness comes from counter-based substreams keyed by
``(seed, iteration, step, index)``.  Serial and threaded execution produce
the same chain, and so does a relabelling of the variables when the
per-equation keys follow the variables (see ``equation_keys``).
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import _kernels as kern
from .errors import DegeneratePosterior, InfeasibleRegionError, NumericallyDegenerate, ValidationError
from .model import (
    ChainConfig,
    Dataset,
    HorseshoeState,
    LinearConstraint,
    ModelDims,
    ParameterDraw,
    PriorConfig,
    RestrictionSet,
    design_matrices,
    validate,
)
from .tmvn import TruncatedGaussian, TruncatedGaussianProblem

__all__ = [
    "Design",
    "Streams",
    "StreamBank",
    "PackedRows",
    "PosteriorChain",
    "factor_posterior",
    "beta_posterior",
    "noise_posterior",
    "loading_posterior",
    "sample_factors",
    "sample_loadings",
    "sample_var_coeffs",
    "sample_noise_vars",
    "sample_horseshoe",
    "initial_state",
    "run_gibbs",
]

log = logging.getLogger(__name__)

VAR_FLOOR = kern.VAR_FLOOR
HS_FLOOR = kern.HS_FLOOR
HS_CAP = kern.HS_CAP
GIBBS_SWEEPS = 5

STEP_INIT, STEP_FACTORS, STEP_EQUATIONS, STEP_LOADINGS, STEP_BETA, STEP_SIGMA, STEP_HORSESHOE = range(7)
_INIT_FACTOR_OFFSET = 1 << 32


# ---------------------------------------------------------------------------
# random streams

_MASK64 = (1 << 64) - 1


class Streams:
    """Per-index substreams for one ``(seed, iteration, step)`` triple.

    Each substream is a Philox generator keyed by the seed whose counter
    starts at ``(0, index, step, iteration)``.  Draws only advance the first
    counter word, so distinct triples never overlap.
    """

    def __init__(self, seed: int, iteration: int, step: int):
        seed = int(seed)
        if seed < 0:
            raise ValidationError("seed must be non-negative")
        self.seed = seed
        self.key = np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)
        self.iteration, self.step = int(iteration), int(step)

    def get(self, index: int) -> np.random.Generator:
        counter = np.array([0, int(index), self.step, self.iteration], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))


class StreamBank:
    """Reusable generators re-pointed at ``(seed, iteration, step, index)`` substreams.

    Re-pointing an existing Philox generator gives the same stream as
    :meth:`Streams.get` at a fraction of the construction cost.
    """

    def __init__(self, seed: int, size: int):
        self.key = Streams(seed, 0, 0).key
        self.generators = [np.random.Generator(np.random.Philox(key=self.key)) for _ in range(size)]
        self._template = self.generators[0].bit_generator.state

    def point(self, slot: int, iteration: int, step: int, index: int) -> np.random.Generator:
        g = self.generators[slot]
        state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, index, step, iteration], dtype=np.uint64), "key": self.key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        g.bit_generator.state = state
        return g


class _Shared:
    """Hands out one generator for every index (plain serial use)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def get(self, index: int) -> np.random.Generator:
        return self.rng


def _streams(rng) -> Streams | _Shared:
    if isinstance(rng, np.random.Generator):
        return _Shared(rng)
    if rng is None:
        return _Shared(np.random.default_rng())
    return rng


# ---------------------------------------------------------------------------
# data and restrictions in array form


@dataclass(frozen=True)
class Design:
    """Regression form of the VAR: ``Y = X beta' + F L' + V``."""

    Y: np.ndarray  # (T_eff, n)
    X: np.ndarray  # (T_eff, k)
    XtX: np.ndarray

    @classmethod
    def from_values(cls, values, p: int) -> "Design":
        Y, X = design_matrices(values, p)
        return cls(np.ascontiguousarray(Y), np.ascontiguousarray(X), X.T @ X)


def _as_design(data, dims: ModelDims) -> Design:
    if isinstance(data, Design):
        return data
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    return Design.from_values(values, dims.p)


@dataclass(frozen=True)
class PackedRows:
    """Constraint rows grouped by owner, in the layout the kernels expect.

    Group ``g`` owns rows ``ptr[g]:ptr[g+1]``.  A row with ``scale[j] >= 0``
    is multiplied elementwise by row ``scale[j]`` of the other parameter
    block (``L`` for factor rows, ``F`` for loading rows), which is how
    product restrictions become linear in the block being drawn.
    """

    owners: np.ndarray
    ptr: np.ndarray
    R: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray

    @classmethod
    def build(cls, groups: Sequence[tuple[int, list[tuple[int, LinearConstraint]]]], r: int) -> "PackedRows":
        owners, ptr, Rs, los, his, scales = [], [0], [], [], [], []
        for owner, parts in groups:
            owners.append(owner)
            for s, c in parts:
                Rs.append(c.R)
                los.append(c.lower)
                his.append(c.upper)
                scales.append(np.full(c.q, s, dtype=np.int64))
            ptr.append(ptr[-1] + sum(c.q for _, c in parts))
        cat = lambda xs, empty: np.ascontiguousarray(np.concatenate(xs)) if xs else empty
        return cls(
            np.array(owners, dtype=np.int64),
            np.array(ptr, dtype=np.int64),
            np.ascontiguousarray(np.vstack(Rs)) if Rs else np.zeros((0, r)),
            cat(los, np.zeros(0)),
            cat(his, np.zeros(0)),
            cat(scales, np.zeros(0, dtype=np.int64)),
        )

    def args(self):
        return self.ptr, self.R, self.lower, self.upper, self.scale


def pack_factor_rows(restr: RestrictionSet, r: int) -> PackedRows:
    """Shock rows, then product rows scaled by ``l_i``, for each restricted period."""
    groups = []
    for t in sorted(restr.restricted_periods):
        parts = [(-1, restr.shock[t])] if t in restr.shock else []
        parts += [(i, c) for i, c in restr.products_at(t)]
        groups.append((t, parts))
    return PackedRows.build(groups, r)


def pack_loading_rows(restr: RestrictionSet, n: int, r: int) -> PackedRows:
    """Impact rows, then product rows scaled by ``f_t``, for every equation."""
    groups = []
    for i in range(n):
        parts = [(-1, restr.impact[i])] if i in restr.impact else []
        parts += [(t, c) for t, c in restr.products_for(i)]
        groups.append((i, parts))
    return PackedRows.build(groups, r)


def factor_constraint(restr: RestrictionSet, t: int, L: np.ndarray) -> LinearConstraint | None:
    """Truncation region of ``f_t`` given ``L``: shock rows plus every product row at ``t``."""
    parts = [restr.shock[t]] if t in restr.shock else []
    parts.extend(c.scaled(L[i]) for i, c in restr.products_at(t))
    return LinearConstraint.stack(parts)


def loading_constraint(restr: RestrictionSet, i: int, F: np.ndarray) -> LinearConstraint | None:
    """Truncation region of ``l_i`` given ``F``: impact rows plus every product row of equation ``i``."""
    parts = [restr.impact[i]] if i in restr.impact else []
    parts.extend(c.scaled(F[t]) for t, c in restr.products_for(i))
    return LinearConstraint.stack(parts)


def _prior_arrays(prior: PriorConfig, n: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    Vinv = np.empty((n, r, r))
    Vinv_l0 = np.empty((n, r))
    for i in range(n):
        Vinv[i] = np.linalg.inv(prior.cov_for(i, r))
        Vinv_l0[i] = Vinv[i] @ prior.mean_for(i, r)
    return Vinv, Vinv_l0


# ---------------------------------------------------------------------------
# closed-form conditionals (before truncation)


def factor_posterior(state: ParameterDraw, design: Design) -> tuple[np.ndarray, np.ndarray]:
    """Means (``T_eff x r``) and shared precision of the untruncated ``f_t`` conditionals.

    ``K = I + L' S^-1 L`` and ``E[f_t] = K^-1 L' S^-1 (y_t - B x_t)``.
    """
    L = state.L
    E = design.Y - design.X @ state.beta.T
    Ls = L / state.sigma2[:, None]
    K = np.eye(L.shape[1]) + L.T @ Ls
    return linalg.solve(K, (E @ Ls).T, assume_a="pos").T, K


def loading_posterior(i: int, state: ParameterDraw, design: Design, prior: PriorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision of the untruncated ``l_i`` conditional."""
    r = state.L.shape[1]
    Vinv = np.linalg.inv(prior.cov_for(i, r))
    e = design.Y[:, i] - design.X @ state.beta[i]
    K = Vinv + state.F.T @ state.F / state.sigma2[i]
    b = Vinv @ prior.mean_for(i, r) + state.F.T @ e / state.sigma2[i]
    return linalg.solve(K, b, assume_a="pos"), K


def coefficient_prior_variance(hs: HorseshoeState, intercept_var: float) -> np.ndarray:
    """``n x k`` prior variances: intercept fixed, slopes ``lam_i * psi_ij``."""
    slopes = np.clip(hs.lam[:, None] * hs.psi, HS_FLOOR, HS_CAP)
    return np.column_stack([np.full(hs.lam.shape, float(intercept_var)), slopes])


def beta_posterior(i: int, state: ParameterDraw, design: Design, prior_var_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision of the ``beta_i`` conditional (prior mean zero)."""
    s2 = state.sigma2[i]
    K = design.XtX / s2 + np.diag(1.0 / prior_var_i)
    target = design.Y[:, i] - state.F @ state.L[i]
    return linalg.solve(K, design.X.T @ target / s2, assume_a="pos"), K


def noise_posterior(state: ParameterDraw, design: Design, prior: PriorConfig) -> tuple[float, np.ndarray]:
    """Inverse-gamma shape and per-equation rates of the ``sigma_i^2`` conditionals."""
    resid = design.Y - design.X @ state.beta.T - state.F @ state.L.T
    shape = prior.alpha0 + 0.5 * design.Y.shape[0]
    rate = prior.beta0 + 0.5 * np.sum(resid**2, axis=0)
    return shape, rate


# ---------------------------------------------------------------------------
# single updates


def _raise_status(status: int, where: str, context: dict | None = None) -> None:
    if status == kern.NOT_PD:
        raise NumericallyDegenerate(f"{where}: precision matrix is not positive definite")
    if status == kern.INFEASIBLE_START:
        raise InfeasibleRegionError(f"{where}: current point violates the truncation region", context=context)
    if status == kern.IMPROPER:
        raise DegeneratePosterior(f"{where}: inverse-gamma posterior is improper (zero residual sum of squares)")


def _check_positive(sigma2) -> None:
    if np.any(~(np.asarray(sigma2) > 0)):
        raise NumericallyDegenerate("sigma2 must be positive")


def _factor_update(state: ParameterDraw, design: Design, packed: PackedRows, rng, n_sweeps: int) -> np.ndarray:
    E = design.Y - design.X @ state.beta.T
    F, status, t = kern.factor_block(
        E, np.ascontiguousarray(state.L), state.sigma2, np.ascontiguousarray(state.F),
        packed.owners, *packed.args(), n_sweeps, rng,
    )
    _raise_status(int(status), f"factors, period {t}", {"period": int(t)})
    return F


def sample_factors(
    state: ParameterDraw, data, dims: ModelDims, restr: RestrictionSet, rng, *, n_sweeps: int = GIBBS_SWEEPS
) -> np.ndarray:
    """Update ``F`` (``T_eff x r``) from its conditional posterior.

    Unrestricted periods get exact Gaussian draws.  Each restricted period
    gets ``n_sweeps`` whitened coordinate-Gibbs sweeps started at the
    current ``f_t``, which leaves its truncated conditional invariant.
    """
    _check_positive(state.sigma2)
    design = _as_design(data, dims)
    return _factor_update(state, design, pack_factor_rows(restr, dims.r), _streams(rng).get(0), n_sweeps)


def sample_loadings(
    state: ParameterDraw,
    data,
    dims: ModelDims,
    restr: RestrictionSet,
    prior: PriorConfig,
    rng,
    *,
    n_sweeps: int = GIBBS_SWEEPS,
) -> np.ndarray:
    """Update ``L`` row by row from the truncated Gaussian regressions on ``F``."""
    _check_positive(state.sigma2)
    design = _as_design(data, dims)
    streams = _streams(rng)
    n, r = state.L.shape
    F = np.ascontiguousarray(state.F)
    FtF = F.T @ F
    Vinv, Vinv_l0 = _prior_arrays(prior, n, r)
    packed = pack_loading_rows(restr, n, r)
    E = design.Y - design.X @ state.beta.T
    L = np.empty((n, r))
    for i in range(n):
        Rs, lo, hi = kern.scaled_rows(*packed.args(), i, F)
        L[i], status = kern.loading_row(
            np.ascontiguousarray(E[:, i]), F, FtF, float(state.sigma2[i]), Vinv[i], Vinv_l0[i],
            np.ascontiguousarray(state.L[i]), Rs, lo, hi, n_sweeps, streams.get(i),
        )
        _raise_status(int(status), f"loadings, equation {i}", {"equation": i})
    return L


def sample_var_coeffs(state: ParameterDraw, data, dims: ModelDims, prior: PriorConfig, hs: HorseshoeState, rng) -> np.ndarray:
    """Draw the ``n x k`` coefficient matrix equation by equation (prior mean zero)."""
    _check_positive(state.sigma2)
    design = _as_design(data, dims)
    streams = _streams(rng)
    V = coefficient_prior_variance(hs, prior.intercept_var)
    target = design.Y - state.F @ state.L.T
    out = np.empty_like(state.beta)
    for i in range(out.shape[0]):
        out[i], status = kern.beta_row(
            np.ascontiguousarray(target[:, i]), design.X, design.XtX, float(state.sigma2[i]), V[i], streams.get(i)
        )
        _raise_status(int(status), f"coefficients, equation {i}")
    return out


def sample_noise_vars(state: ParameterDraw, data, dims: ModelDims, prior: PriorConfig, rng) -> np.ndarray:
    """Inverse-gamma draws of every ``sigma_i^2``; raises on an improper posterior."""
    design = _as_design(data, dims)
    streams = _streams(rng)
    resid = design.Y - design.X @ state.beta.T - state.F @ state.L.T
    out = np.empty(resid.shape[1])
    for i in range(out.size):
        out[i], status = kern.sigma_row(
            np.ascontiguousarray(resid[:, i]), float(prior.alpha0), float(prior.beta0), streams.get(i)
        )
        _raise_status(int(status), f"sigma2, equation {i}")
    return out


def sample_horseshoe(beta: np.ndarray, hs: HorseshoeState, rng) -> HorseshoeState:
    """Update ``lam``, ``psi``, ``z_lam``, ``z_psi`` in that order, equation by equation."""
    streams = _streams(rng)
    new = hs.copy()
    for i in range(beta.shape[0]):
        new.lam[i], new.psi[i], new.z_lam[i], new.z_psi[i] = kern.horseshoe_row(
            np.ascontiguousarray(beta[i, 1:]), float(hs.lam[i]), hs.psi[i].copy(), float(hs.z_lam[i]),
            hs.z_psi[i].copy(), streams.get(i),
        )
    return new


# ---------------------------------------------------------------------------
# chain


@dataclass
class PosteriorChain:
    """Retained draws plus the settings and diagnostics of the run."""

    draws: list[ParameterDraw]
    config: ChainConfig
    dims: ModelDims
    uniqueness_flags: np.ndarray
    timing: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.draws)

    def stack(self, name: str) -> np.ndarray:
        """Stack one parameter across draws, e.g. ``chain.stack("L")``."""
        if name in ("lam", "psi", "z_lam", "z_psi"):
            return np.stack([getattr(d.hs, name) for d in self.draws])
        return np.stack([getattr(d, name) for d in self.draws])

    def error_covariances(self) -> np.ndarray:
        return np.stack([d.error_covariance() for d in self.draws])

    def save(self, path) -> None:
        from .io import save_chain

        save_chain(self, path)

    @classmethod
    def load(cls, path) -> "PosteriorChain":
        from .io import load_chain

        return load_chain(path)


def _exact_draw(mean, cov, constraint, rng, where: str):
    try:
        return TruncatedGaussian(TruncatedGaussianProblem(mean, cov, constraint)).sample(rng)
    except InfeasibleRegionError as exc:
        exc.context.setdefault("where", where)
        raise InfeasibleRegionError(f"{exc} ({where})", context=exc.context) from exc


def initial_state(
    dims: ModelDims, design: Design, restr: RestrictionSet, prior: PriorConfig, seed: int, keys: Sequence[int] | None = None
) -> ParameterDraw:
    """Feasible starting point: prior draws of ``L`` and ``F`` inside their regions.

    ``beta = 0``, ``sigma2`` = sample variances and the horseshoe state all
    ones.  ``L`` respects the impact rows, then ``F`` every row given ``L``.
    """
    n, r, k = dims.n, dims.r, dims.k
    keys = list(range(n)) if keys is None else list(keys)
    T_eff = design.Y.shape[0]
    streams = Streams(seed, 0, STEP_INIT)
    L = np.empty((n, r))
    for i in range(n):
        L[i] = _exact_draw(
            prior.mean_for(i, r), prior.cov_for(i, r), restr.impact.get(i), streams.get(1 + keys[i]),
            f"initial loadings, equation {i}",
        )
    sigma2 = np.maximum(np.var(design.Y, axis=0, ddof=1), VAR_FLOOR)
    F = streams.get(0).standard_normal((T_eff, r))
    for t in sorted(restr.restricted_periods):
        F[t] = _exact_draw(
            np.zeros(r), np.eye(r), factor_constraint(restr, t, L), streams.get(_INIT_FACTOR_OFFSET + t),
            f"initial factors, period {t}",
        )
    return ParameterDraw(np.zeros((n, k)), L, sigma2, F, HorseshoeState.ones(n, k))


def _canonical_order(keys: Sequence[int] | None, n: int) -> np.ndarray:
    if keys is None:
        return np.arange(n)
    keys = [int(x) for x in keys]
    if len(keys) != n or len(set(keys)) != n or min(keys) < 0:
        raise ValidationError("equation_keys must be n distinct non-negative integers")
    return np.argsort(keys, kind="stable")


def _permute_prior(prior: PriorConfig, order: np.ndarray) -> PriorConfig:
    def pick(a, ndim_eq):
        a = np.asarray(a)
        return a[order] if a.ndim == ndim_eq else a

    return PriorConfig(
        pick(prior.loading_mean, 2), pick(prior.loading_cov, 3), prior.alpha0, prior.beta0, prior.intercept_var
    )


def _unpermute_draw(d: ParameterDraw, order: np.ndarray, p: int) -> ParameterDraw:
    """Map a draw computed in canonical variable order back to the caller's order."""
    inv = np.argsort(order)
    n = order.size
    # coefficient columns: lag blocks follow the variable order too
    cols = np.concatenate([[0], *[1 + lag * n + inv for lag in range(p)]])
    beta = d.beta[inv][:, cols]
    hs = HorseshoeState(d.hs.lam[inv], d.hs.psi[inv][:, cols[1:] - 1], d.hs.z_lam[inv], d.hs.z_psi[inv][:, cols[1:] - 1])
    return ParameterDraw(beta, d.L[inv], d.sigma2[inv], d.F, hs)


class _Engine:
    """One Gibbs iteration on prepared arrays."""

    def __init__(self, design: Design, dims: ModelDims, restr: RestrictionSet, prior: PriorConfig, keys, n_sweeps: int):
        self.design = design
        self.keys = list(keys)
        self.n_sweeps = int(n_sweeps)
        self.factor_rows = pack_factor_rows(restr, dims.r)
        self.loading_rows = pack_loading_rows(restr, dims.n, dims.r)
        self.Vinv, self.Vinv_l0 = _prior_arrays(prior, dims.n, dims.r)
        self.prior = prior

    def factors(self, state: ParameterDraw, rng) -> None:
        state.F = _factor_update(state, self.design, self.factor_rows, rng, self.n_sweeps)

    def equation(self, i: int, state: ParameterDraw, F: np.ndarray, FtF: np.ndarray, rng):
        d, hs, pr = self.design, state.hs, self.prior
        return kern.equation_step(
            i, d.Y, d.X, d.XtX, F, FtF, state.beta[i].copy(), state.L[i].copy(), float(state.sigma2[i]),
            float(hs.lam[i]), hs.psi[i].copy(), float(hs.z_lam[i]), hs.z_psi[i].copy(),
            self.Vinv[i], self.Vinv_l0[i], float(pr.intercept_var), float(pr.alpha0), float(pr.beta0),
            *self.loading_rows.args(), self.n_sweeps, rng,
        )

    def equations(self, state: ParameterDraw, rngs: list, pool: ThreadPoolExecutor | None) -> None:
        F = np.ascontiguousarray(state.F)
        FtF = F.T @ F
        jobs = range(len(self.keys))
        if pool is None:
            results = [self.equation(i, state, F, FtF, rngs[i]) for i in jobs]
        else:
            results = list(pool.map(lambda i: self.equation(i, state, F, FtF, rngs[i]), jobs))
        stage_names = ("loadings", "coefficients", "sigma2")
        for i, (l, beta, s2, lam, psi, z_lam, z_psi, status, stage) in enumerate(results):
            if status not in (kern.OK, kern.KEPT_PREVIOUS):
                _raise_status(int(status), f"{stage_names[min(stage, 2)]}, equation {i}", {"equation": i})
            state.L[i], state.beta[i], state.sigma2[i] = l, beta, s2
            state.hs.lam[i], state.hs.psi[i], state.hs.z_lam[i], state.hs.z_psi[i] = lam, psi, z_lam, z_psi

    def iteration(self, state: ParameterDraw, bank: StreamBank, it_key: int, pool: ThreadPoolExecutor | None) -> None:
        """One sweep; the serial path runs entirely inside one compiled call."""
        factor_rng = bank.point(0, it_key, STEP_FACTORS, 0)
        rngs = [bank.point(1 + i, it_key, STEP_EQUATIONS, key) for i, key in enumerate(self.keys)]
        if pool is not None:
            self.factors(state, factor_rng)
            self.equations(state, rngs, pool)
            return
        d, hs, pr = self.design, state.hs, self.prior
        F, status, where, stage = kern.gibbs_iteration(
            d.Y, d.X, d.XtX, state.beta, state.L, state.sigma2, state.F,
            hs.lam, hs.psi, hs.z_lam, hs.z_psi,
            self.Vinv, self.Vinv_l0, float(pr.intercept_var), float(pr.alpha0), float(pr.beta0),
            self.factor_rows.owners, *self.factor_rows.args(), *self.loading_rows.args(),
            self.n_sweeps, factor_rng, rngs,
        )
        if status not in (kern.OK, kern.KEPT_PREVIOUS):
            if stage < 0:
                _raise_status(int(status), f"factors, period {where}", {"period": int(where)})
            names = ("loadings", "coefficients", "sigma2")
            _raise_status(int(status), f"{names[min(stage, 2)]}, equation {where}", {"equation": int(where)})
        state.F = F


def run_gibbs(
    config: ChainConfig,
    dims: ModelDims,
    data,
    restr: RestrictionSet | None = None,
    prior: PriorConfig | None = None,
    *,
    threads: int = 1,
    equation_keys: Sequence[int] | None = None,
    check_uniqueness: bool = True,
    allow_underidentified: bool = False,
    n_sweeps: int = GIBBS_SWEEPS,
    callback: Callable[[int, ParameterDraw], None] | None = None,
) -> PosteriorChain:
    """Run the sampler and return the thinned post-burn-in chain.

    ``equation_keys`` labels each variable's random substream (default
    ``0..n-1``).  Equations are processed in key order, so relabelling the
    variables together with their keys reproduces the same chain, permuted.
    ``threads > 1`` spreads the equation updates over a thread pool without
    changing the result.  ``allow_underidentified`` waives the
    ``r <= (n - 1) / 2`` check.
    """
    from .structural import check_sign_uniqueness

    restr = restr or RestrictionSet()
    prior = prior or PriorConfig()
    dataset = data if isinstance(data, Dataset) else None
    validate(dims, dataset, restr, prior, allow_underidentified=allow_underidentified).raise_if_invalid()
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if values.shape != (dims.T, dims.n):
        raise ValidationError(f"data shape {values.shape} does not match (T, n) = ({dims.T}, {dims.n})")

    order = _canonical_order(equation_keys, dims.n)
    keys = sorted(int(x) for x in equation_keys) if equation_keys is not None else list(range(dims.n))
    identity = np.array_equal(order, np.arange(dims.n))
    if not identity:
        values = values[:, order]
        restr = restr.permuted(order)
        prior = _permute_prior(prior, order)
    design = Design.from_values(values, dims.p)
    engine = _Engine(design, dims, restr, prior, keys, n_sweeps)

    impact_table = restr.impact_sign_table(dims.n, dims.r)
    shock_table = restr.shock_sign_table(dims.T_eff, dims.r)

    timing = dict.fromkeys(("init", "sweeps", "checks"), 0.0)
    bank = StreamBank(config.seed, dims.n + 1)
    t0 = time.perf_counter()
    state = initial_state(dims, design, restr, prior, config.seed, keys)
    timing["init"] += time.perf_counter() - t0

    pool = ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None
    draws: list[ParameterDraw] = []
    flags: list[bool] = []
    try:
        for it in range(config.n_iter):
            it_key = it + 1
            try:
                t0 = time.perf_counter()
                engine.iteration(state, bank, it_key, pool)
                timing["sweeps"] += time.perf_counter() - t0
            except InfeasibleRegionError as exc:
                exc.context["iteration"] = it
                raise
            except (NumericallyDegenerate, DegeneratePosterior) as exc:
                raise type(exc)(f"iteration {it}: {exc}") from exc

            if config.keeps(it):
                t0 = time.perf_counter()
                bad = restr.violations(state.L, state.F)
                if bad:
                    raise AssertionError(f"iteration {it}: stored draw violates restrictions: {bad[:3]}")
                flags.append(
                    bool(check_sign_uniqueness(state.L, state.F, impact_table, shock_table)) if check_uniqueness else True
                )
                draws.append(state.copy())
                timing["checks"] += time.perf_counter() - t0
            if callback is not None:
                callback(it, state)
    finally:
        if pool is not None:
            pool.shutdown()

    if not identity:
        draws = [_unpermute_draw(d, order, dims.p) for d in draws]
    return PosteriorChain(
        draws=draws,
        config=config,
        dims=dims,
        uniqueness_flags=np.array(flags, dtype=bool),
        timing=timing,
        meta={"equation_keys": None if equation_keys is None else [int(x) for x in equation_keys], "n_sweeps": n_sweeps},
    )
