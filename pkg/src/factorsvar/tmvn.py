"""Sampling Gaussians restricted to polyhedra ``lower < R x < upper``.

Two backends share one entry point:

``"tilting"``
    Exact i.i.d. draws by minimax exponential tilting.  Used
    when the constraint rows are linearly independent (``q <= d``, full row
    rank), which covers every sign or narrative restriction.  ``y = R x`` is
    drawn from its box-truncated marginal, then ``x | y`` from the
    (unconstrained) Gaussian conditional.

``"gibbs"``
    Coordinate Gibbs sweeps in whitened coordinates, started from a
    caller-supplied feasible point or from an LP interior point.  Needed when
    rows are dependent or outnumber the dimension, as product restrictions
    across several equations can produce.

Either way the caller receives a strictly feasible draw or an exception.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import InfeasibleRegionError, InvalidBounds, NumericallyDegenerate
from .model import LinearConstraint

__all__ = [
    "TruncatedGaussianProblem",
    "TruncatedGaussian",
    "sample_tmvn",
    "sample_truncated_univariate",
    "truncated_standard_normal",
    "log_normal_prob",
    "find_interior_point",
    "gibbs_update",
]

log = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_ROW_NORM_TOL = 1e-12
_MAX_TILT_ROUNDS = 200


# ---------------------------------------------------------------------------
# univariate kernel


def log_normal_prob(a, b):
    """``log(Phi(b) - Phi(a))`` elementwise, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # reflect intervals in the right tail so that the upper end is the small one
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp_hi = special.log_ndtr(hi)
        lp_lo = special.log_ndtr(lo)
        tail = lp_hi + np.log1p(-np.exp(lp_lo - lp_hi))
        body = np.log1p(-special.ndtr(lo) - special.ndtr(-hi))
    return np.where(hi < 0, tail, body)


def _ntail(l, u, rng):
    # Rayleigh proposal for l > 0: exact in the far tail
    c = 0.5 * l**2
    f = np.expm1(c - 0.5 * u**2)
    x = c - np.log1p(rng.random(l.shape) * f)
    bad = np.flatnonzero(rng.random(l.shape) ** 2 * x > c)
    while bad.size:
        y = c[bad] - np.log1p(rng.random(bad.size) * f[bad])
        ok = rng.random(bad.size) ** 2 * y < c[bad]
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return np.sqrt(2.0 * x)


def _trnd(l, u, rng):
    x = rng.standard_normal(l.shape)
    bad = np.flatnonzero((x < l) | (x > u))
    while bad.size:
        y = rng.standard_normal(bad.size)
        ok = (y > l[bad]) & (y < u[bad])
        x[bad[ok]] = y[ok]
        bad = bad[~ok]
    return x


def _tn(l, u, rng):
    x = np.empty(l.shape)
    wide = np.abs(u - l) > 2.0
    if np.any(wide):
        x[wide] = _trnd(l[wide], u[wide], rng)
    narrow = ~wide
    if np.any(narrow):
        tl, tu = l[narrow], u[narrow]
        pl = 0.5 * special.erfc(tl / _SQRT2)
        pu = 0.5 * special.erfc(tu / _SQRT2)
        x[narrow] = _SQRT2 * special.erfcinv(2.0 * (pl - (pl - pu) * rng.random(tl.shape)))
    return x


def truncated_standard_normal(l, u, rng: np.random.Generator) -> np.ndarray:
    """Vectorised draws of ``Z ~ N(0, 1)`` conditioned on ``l < Z < u``."""
    l = np.atleast_1d(np.asarray(l, dtype=float)).copy()
    u = np.atleast_1d(np.asarray(u, dtype=float)).copy()
    l, u = np.broadcast_arrays(l, u)
    l, u = l.copy(), u.copy()
    x = np.empty(l.shape)
    thr = 0.66
    right = l > thr
    if np.any(right):
        x[right] = _ntail(l[right], u[right], rng)
    left = u < -thr
    if np.any(left):
        x[left] = -_ntail(-u[left], -l[left], rng)
    mid = ~(right | left)
    if np.any(mid):
        x[mid] = _tn(l[mid], u[mid], rng)
    return _inside(x, l, u)


def _inside(x, lo, hi):
    """Nudge values sitting on (or numerically past) an open bound one ulp inward."""
    bad_lo = x <= lo
    if np.any(bad_lo):
        x[bad_lo] = np.nextafter(lo[bad_lo], np.inf)
    bad_hi = x >= hi
    if np.any(bad_hi):
        x[bad_hi] = np.nextafter(hi[bad_hi], -np.inf)
    return x


def sample_truncated_univariate(mu: float, sd: float, a: float, b: float, rng, size=None):
    """Draw from ``N(mu, sd^2)`` restricted to the open interval ``(a, b)``."""
    if not a < b:
        raise InvalidBounds(f"need a < b, got a={a}, b={b}")
    if not sd > 0:
        raise InvalidBounds(f"need sd > 0, got {sd}")
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    m = int(np.prod(shape)) if shape else 1
    z = truncated_standard_normal(np.full(m, (a - mu) / sd), np.full(m, (b - mu) / sd), rng)
    x = _inside(mu + sd * z, np.full(m, float(a)), np.full(m, float(b)))
    return float(x[0]) if size is None else x.reshape(shape)


# ---------------------------------------------------------------------------
# minimax tilting for N(0, Sigma) restricted to a box


def _cholperm(Sig, l, u):
    """Cholesky with a variable ordering that puts the tightest truncations first."""
    d = l.size
    Sig = Sig.copy()
    l = l.copy()
    u = u.copy()
    perm = np.arange(d)
    L = np.zeros((d, d))
    z = np.zeros(d)
    eps = 1e-10
    for j in range(d):
        pr = np.full(d, np.inf)
        s = np.diag(Sig)[j:] - np.sum(L[j:, :j] ** 2, axis=1)
        s = np.sqrt(np.maximum(s, eps))
        shift = L[j:, :j] @ z[:j]
        pr[j:] = log_normal_prob((l[j:] - shift) / s, (u[j:] - shift) / s)
        k = int(np.argmin(pr))
        if k != j:
            Sig[[j, k], :] = Sig[[k, j], :]
            Sig[:, [j, k]] = Sig[:, [k, j]]
            L[[j, k], :] = L[[k, j], :]
            l[[j, k]] = l[[k, j]]
            u[[j, k]] = u[[k, j]]
            perm[[j, k]] = perm[[k, j]]
        s = Sig[j, j] - L[j, :j] @ L[j, :j]
        if s < -0.01:
            raise NumericallyDegenerate("covariance is not positive semi-definite")
        L[j, j] = math.sqrt(max(s, eps))
        L[j + 1 :, j] = (Sig[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        shift = L[j, :j] @ z[:j]
        tl = (l[j] - shift) / L[j, j]
        tu = (u[j] - shift) / L[j, j]
        w = log_normal_prob(tl, tu)
        z[j] = (math.exp(-0.5 * tl**2 - w) - math.exp(-0.5 * tu**2 - w)) / math.sqrt(2 * math.pi)
    return L, perm


def _gradpsi(y, L, l, u):
    d = u.size
    c = np.zeros(d)
    x = np.zeros(d)
    mu = np.zeros(d)
    x[: d - 1] = y[: d - 1]
    mu[: d - 1] = y[d - 1 :]
    c[1:] = L[1:, :] @ x
    lt = l - mu - c
    ut = u - mu - c
    w = log_normal_prob(lt, ut)
    with np.errstate(over="ignore", invalid="ignore"):
        pl = np.exp(-0.5 * lt**2 - w - _LOG_SQRT_2PI)
        pu = np.exp(-0.5 * ut**2 - w - _LOG_SQRT_2PI)
    pl = np.where(np.isfinite(lt), pl, 0.0)
    pu = np.where(np.isfinite(ut), pu, 0.0)
    P = pl - pu
    dfdx = -mu[: d - 1] + (P @ L[:, : d - 1])
    dfdm = mu - x + P
    grad = np.concatenate([dfdx, dfdm[: d - 1]])
    lt = np.where(np.isfinite(lt), lt, 0.0)
    ut = np.where(np.isfinite(ut), ut, 0.0)
    dP = -(P**2) + lt * pl - ut * pu
    DL = dP[:, None] * L
    mx = (DL - np.eye(d))[: d - 1, : d - 1]
    xx = (L.T @ DL)[: d - 1, : d - 1]
    J = np.block([[xx, mx.T], [mx, np.diag(1.0 + dP[: d - 1])]])
    return grad, J


def _psi(x, mu, L, l, u):
    x = np.append(x, 0.0)
    mu = np.append(mu, 0.0)
    c = L @ x
    return float(np.sum(log_normal_prob(l - mu - c, u - mu - c) + 0.5 * mu**2 - x * mu))


def _solve_saddle(L, l, u, tol=1e-10):
    """Root of the tilting gradient: damped Newton, falling back to MINPACK."""
    d = u.size
    y = np.zeros(2 * (d - 1))
    g, J = _gradpsi(y, L, l, u)
    gnorm = float(np.linalg.norm(g))
    for _ in range(60):
        if gnorm < tol:
            return y, True
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        for _ in range(30):
            y_new = y + t * step
            g_new, J_new = _gradpsi(y_new, L, l, u)
            norm_new = float(np.linalg.norm(g_new))
            if np.isfinite(norm_new) and norm_new < (1.0 - 1e-4 * t) * gnorm:
                break
            t *= 0.5
        else:
            break
        y, g, J, gnorm = y_new, g_new, J_new, norm_new
    if gnorm < tol:
        return y, True
    sol = optimize.root(_gradpsi, np.zeros(2 * (d - 1)), args=(L, l, u), method="hybr", jac=True)
    return sol.x, bool(sol.success and np.all(np.isfinite(sol.x)))


class _BoxTilting:
    """Exact sampler for ``X ~ N(0, Sigma)`` given ``l < X < u``."""

    def __init__(self, Sigma, l, u):
        self.d = d = l.size
        Lfull, perm = _cholperm(Sigma, l, u)
        self.Lfull = Lfull
        self.order = np.argsort(perm)
        D = np.diag(Lfull)
        self.l = l[perm] / D
        self.u = u[perm] / D
        self.L = Lfull / D[:, None] - np.eye(d)
        if d == 1:
            self.mu = np.zeros(0)
            self.psistar = 0.0
            return
        y, success = _solve_saddle(self.L, self.l, self.u)
        x, mu = y[: d - 1], y[d - 1 :]
        xt = np.append(x, 0.0)
        # the saddle point must sit inside the region, otherwise drop the tilt
        inside = np.all((self.L + np.eye(d))[: d - 1] @ xt < self.u[: d - 1]) and np.all(
            (self.L + np.eye(d))[: d - 1] @ xt > self.l[: d - 1]
        )
        if success and inside:
            self.mu = mu
            self.psistar = _psi(x, mu, self.L, self.l, self.u)
        else:
            log.debug("minimax tilting did not converge; using untilted proposal")
            self.mu = np.zeros(d - 1)
            self.psistar = 0.0

    def _propose(self, m, rng):
        d = self.d
        mu = np.append(self.mu, 0.0)
        Z = np.zeros((d, m))
        logpr = np.zeros(m)
        for k in range(d):
            col = self.L[k, :k] @ Z[:k]
            tl = self.l[k] - mu[k] - col
            tu = self.u[k] - mu[k] - col
            Z[k] = mu[k] + truncated_standard_normal(tl, tu, rng)
            logpr += log_normal_prob(tl, tu) + 0.5 * mu[k] ** 2 - mu[k] * Z[k]
        return logpr, Z

    def sample(self, m, rng):
        """Return ``(m, d)`` exact draws, or ``None`` if acceptance is hopeless."""
        out = []
        have = 0
        batch = max(4, m)
        for _ in range(_MAX_TILT_ROUNDS):
            logpr, Z = self._propose(batch, rng)
            acc = -np.log(rng.random(batch)) > self.psistar - logpr
            if np.any(acc):
                out.append(Z[:, acc])
                have += int(acc.sum())
                if have >= m:
                    break
            batch = min(2 * batch, 1 << 16) if not np.any(acc) else batch
        else:
            return None
        Z = np.concatenate(out, axis=1)[:, :m]
        X = self.Lfull @ Z
        return X[self.order].T


# ---------------------------------------------------------------------------
# general polyhedral problem


@dataclass(frozen=True)
class TruncatedGaussianProblem:
    """``N(mean, cov)`` restricted to ``constraint`` (``None`` = unrestricted)."""

    mean: np.ndarray
    cov: np.ndarray
    constraint: LinearConstraint | None = None


def find_interior_point(A, lo, hi, *, max_iter: int | None = None):
    """Return ``(z, slack)`` maximising the normalised slack of ``lo < A z < hi``.

    Solves the phase-one LP ``max s`` s.t. every finite bound is cleared by
    ``s * ||A_row||``, with ``s <= 1`` and ``|z| <= 1e3`` keeping it bounded.
    """
    A = np.asarray(A, dtype=float)
    q, d = A.shape
    norms = np.linalg.norm(A, axis=1)
    rows, rhs = [], []
    for i in range(q):
        if np.isfinite(hi[i]):
            rows.append(np.append(A[i], norms[i]))
            rhs.append(hi[i])
        if np.isfinite(lo[i]):
            rows.append(np.append(-A[i], norms[i]))
            rhs.append(-lo[i])
    if not rows:
        return np.zeros(d), 1.0
    c = np.zeros(d + 1)
    c[-1] = -1.0
    budget = max_iter if max_iter is not None else max(10 * q * d, 100)
    res = optimize.linprog(
        c,
        A_ub=np.array(rows),
        b_ub=np.array(rhs),
        bounds=[(-1e3, 1e3)] * d + [(None, 1.0)],
        method="highs",
        options={"maxiter": budget},
    )
    if res.status != 0:
        return None, -np.inf
    return res.x[:d], float(res.x[-1])


class TruncatedGaussian:
    """Prepared sampler for one :class:`TruncatedGaussianProblem`.

    The factorisations are computed once; :meth:`sample` may be called
    repeatedly.
    """

    def __init__(self, problem: TruncatedGaussianProblem, *, backend: str = "auto"):
        mean = np.asarray(problem.mean, dtype=float).reshape(-1)
        cov = np.asarray(problem.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d):
            raise NumericallyDegenerate(f"covariance shape {cov.shape} does not match mean of length {d}")
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericallyDegenerate("covariance Cholesky failed") from exc
        self.mean, self.cov, self.d = mean, cov, d
        c = problem.constraint
        self.constraint = c
        if c is None:
            self.backend = "none"
            return
        if c.d != d:
            raise NumericallyDegenerate(f"constraint has {c.d} columns for a {d}-dimensional Gaussian")
        if np.any(~(c.lower < c.upper)):
            raise InvalidBounds("every constraint row needs lower < upper")
        if np.any(np.linalg.norm(c.R, axis=1) < _ROW_NORM_TOL):
            raise NumericallyDegenerate("constraint row with near-zero norm")
        self.R = c.R
        self.lo = c.lower - c.R @ mean
        self.hi = c.upper - c.R @ mean
        independent = c.q <= d and np.linalg.matrix_rank(c.R) == c.q
        if backend == "auto":
            backend = "tilting" if independent else "gibbs"
        if backend == "tilting" and not independent:
            raise ValueError("tilting backend needs linearly independent constraint rows")
        self.backend = backend
        if backend == "tilting":
            self._setup_tilting()
        elif backend == "gibbs":
            self._setup_gibbs()
        else:
            raise ValueError(f"unknown backend {backend!r}")

    # -- tilting ---------------------------------------------------------
    def _setup_tilting(self):
        R, S = self.R, self.cov
        SRt = S @ R.T
        self.box_cov = R @ SRt
        # x = mean + gain @ y + (w - gain @ R w), w ~ N(0, cov)
        self.gain = np.linalg.solve(self.box_cov, SRt.T).T
        if R.shape[0] == 1:
            self.box = None
            self.box_sd = math.sqrt(self.box_cov[0, 0])
        else:
            self.box = _BoxTilting(self.box_cov, self.lo.copy(), self.hi.copy())

    def _sample_tilting(self, m, rng):
        if self.box is None:
            y = self.box_sd * truncated_standard_normal(
                np.full(m, self.lo[0] / self.box_sd), np.full(m, self.hi[0] / self.box_sd), rng
            )[:, None]
        else:
            y = self.box.sample(m, rng)
            if y is None:
                return None
        y = _inside(y, np.broadcast_to(self.lo, y.shape), np.broadcast_to(self.hi, y.shape))
        x = y @ self.gain.T
        if self.R.shape[0] < self.d:
            w = rng.standard_normal((m, self.d)) @ self.chol.T
            x += w - (w @ self.R.T) @ self.gain.T
        return self.mean + x

    # -- gibbs -----------------------------------------------------------
    def _setup_gibbs(self):
        self.A = self.R @ self.chol
        self._z0 = None

    def _interior(self):
        if self._z0 is None:
            z, s = find_interior_point(self.A, self.lo, self.hi)
            if z is None or not s > 1e-10:
                raise InfeasibleRegionError(
                    "no interior point for the truncation region", context={"slack": s}
                )
            self._z0 = z
        return self._z0

    def _to_white(self, x0):
        z = np.linalg.solve(self.chol, np.asarray(x0, dtype=float) - self.mean)
        v = self.A @ z
        return z if np.all((self.lo < v) & (v < self.hi)) else None

    def _sweeps(self, Z, n_sweeps, rng):
        A, lo, hi = self.A, self.lo, self.hi
        AZ = Z @ A.T
        for _ in range(n_sweeps):
            for k in range(self.d):
                a = A[:, k]
                rest = AZ - Z[:, k : k + 1] * a
                pos = a > _ROW_NORM_TOL
                neg = a < -_ROW_NORM_TOL
                low = np.full(Z.shape[0], -np.inf)
                high = np.full(Z.shape[0], np.inf)
                if np.any(pos):
                    low = np.maximum(low, np.max((lo[pos] - rest[:, pos]) / a[pos], axis=1))
                    high = np.minimum(high, np.min((hi[pos] - rest[:, pos]) / a[pos], axis=1))
                if np.any(neg):
                    low = np.maximum(low, np.max((hi[neg] - rest[:, neg]) / a[neg], axis=1))
                    high = np.minimum(high, np.min((lo[neg] - rest[:, neg]) / a[neg], axis=1))
                # degenerate intervals can only arise from rounding at a vertex
                keep = ~(low < high)
                znew = np.where(keep, Z[:, k], 0.0)
                ok = ~keep
                if np.any(ok):
                    znew[ok] = truncated_standard_normal(low[ok], high[ok], rng)
                Z[:, k] = znew
                AZ = rest + znew[:, None] * a
        return Z

    def _sample_gibbs(self, m, rng, x0, n_sweeps):
        z0 = self._to_white(x0) if x0 is not None else None
        warm = z0 is not None
        if z0 is None:
            z0 = self._interior()
        if n_sweeps is None:
            n_sweeps = 5 if warm else 50
        Z = np.repeat(z0[None, :], m, axis=0)
        Z = self._sweeps(Z, n_sweeps, rng)
        return self.mean + Z @ self.chol.T

    # -- public ----------------------------------------------------------
    def is_feasible(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.constraint is None:
            return np.ones(X.shape[0], dtype=bool)
        V = X @ self.constraint.R.T
        return np.all((self.constraint.lower < V) & (V < self.constraint.upper), axis=1)

    def sample(self, rng: np.random.Generator, size: int | None = None, *, x0=None, n_sweeps: int | None = None):
        """Draw ``size`` vectors (a single ``(d,)`` vector when ``size`` is None).

        ``x0`` is a feasible warm start used only by the Gibbs backend; with it
        the result is one Markov transition that leaves the target invariant.
        """
        m = 1 if size is None else int(size)
        if self.backend == "none":
            X = self.mean + rng.standard_normal((m, self.d)) @ self.chol.T
            return X[0] if size is None else X
        X = None
        if self.backend == "tilting":
            X = self._sample_tilting(m, rng)
            if X is None:
                log.warning("tilting acceptance too low; switching to Gibbs sweeps")
                self._setup_gibbs()
                self.backend = "gibbs"
        if X is None:
            X = self._sample_gibbs(m, rng, x0, n_sweeps)
        ok = self.is_feasible(X)
        for _ in range(20):
            if ok.all():
                break
            # rounding on a bound after the change of variables: redraw those rows
            bad = np.flatnonzero(~ok)
            if self.backend == "tilting":
                redo = self._sample_tilting(bad.size, rng)
            else:
                redo = self._sample_gibbs(bad.size, rng, x0, n_sweeps)
            if redo is not None:
                X[bad] = redo
            ok = self.is_feasible(X)
        if not ok.all():
            raise NumericallyDegenerate("could not produce a strictly feasible draw")
        return X[0] if size is None else X


def sample_tmvn(
    problem: TruncatedGaussianProblem,
    rng: np.random.Generator,
    *,
    x0=None,
    backend: str = "auto",
    n_sweeps: int | None = None,
) -> np.ndarray:
    """One strictly feasible draw from a truncated multivariate normal."""
    return TruncatedGaussian(problem, backend=backend).sample(rng, x0=x0, n_sweeps=n_sweeps)


def gibbs_update(precision, b, constraint: LinearConstraint, x0, rng: np.random.Generator, n_sweeps: int = 5) -> np.ndarray:
    """One Markov transition for ``N(precision^-1 b, precision^-1)`` restricted to ``constraint``.

    Coordinate Gibbs sweeps in whitened coordinates starting from ``x0``.
    The truncated law is invariant under the transition, so inside an outer
    Gibbs sampler this replaces an exact draw at a fraction of the cost.  An
    infeasible ``x0`` falls back to an exact draw from a cold start.
    """
    from ._kernels import precision_gibbs

    K = np.ascontiguousarray(precision, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    x, status = precision_gibbs(
        K, b, np.ascontiguousarray(constraint.R), constraint.lower, constraint.upper, x0, int(n_sweeps), rng
    )
    if status == 0:
        return x
    if status == 1:
        raise NumericallyDegenerate("precision matrix is not positive definite")
    if status == 2:
        cov = np.linalg.inv(K)
        cov = 0.5 * (cov + cov.T)
        return TruncatedGaussian(TruncatedGaussianProblem(cov @ b, cov, constraint)).sample(rng)
    log.debug("gibbs_update kept the previous point after repeated rounding failures")
    return x
