"""Deterministic least-squares kernels used by every estimator.

* :func:`solve_simplex_wls` -- V-weighted least squares over the probability
  simplex (canonical synthetic-control weights).
* :func:`solve_l1_ball_ls` -- least squares over an l1 ball (constrained lasso).
* :func:`solve_ols` -- ordinary least squares with optional intercept.

The constrained problems are solved by a primal active-set method: each
candidate support is solved exactly under the equality constraint, and a
result is returned only when it passes a KKT check. The first attempt starts
at the best single vertex. If it cannot be certified, accelerated projected
gradient (exact sort-based projections, fixed step ``1/L``, function-value
restart, uniform start) supplies a warm start, first at a coarse tolerance
and then at the full one. Because every accepted answer is an exact support
solve, the result depends on the identified support, not on the path taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import NonFiniteInput, UnderdeterminedSystem

__all__ = [
    "SolverSettings",
    "Solution",
    "project_l1_ball",
    "project_simplex",
    "simplex_kkt_residual",
    "solve_l1_ball_ls",
    "solve_ols",
    "solve_simplex_wls",
]


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-12          # stop when |f_k - f_{k-1}| <= tol * max(1, f_k)
    max_iter: int = 10_000
    clamp_tol: float = 1e-10    # entries below this are treated as zero
    sum_tol: float = 1e-8
    singular_tol: float = 1e-10
    kkt_tol: float = 1e-12      # relative KKT tolerance for accepting a polished support
    coarse_tol: float = 1e-7    # first-pass APG tolerance before the support is polished
    start_frac: float = 1e-3    # polish starts from entries above this fraction of the largest
    polish: bool = True


@dataclass(frozen=True, eq=False)
class Solution:
    weights: np.ndarray
    objective: float
    iterations: int = 0
    converged: bool = True
    polished: bool = False
    rank_deficient: bool = False
    intercept: float = 0.0


@numba.njit(cache=True)
def _proj_simplex(v, radius):
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        t = (css - radius) / (i + 1)
        if u[i] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        d = v[i] - theta
        out[i] = d if d > 0.0 else 0.0
    return out


@numba.njit(cache=True)
def _proj_l1(v, radius):
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    p = _proj_simplex(a, radius)
    return p * np.sign(v)


@numba.njit(cache=True)
def _apg(A, b, w0, step, radius, ball, tol, max_iter):
    w = w0.copy()
    y = w0.copy()
    t = 1.0
    r = A @ w - b
    f = r @ r
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        g = 2.0 * (A.T @ (A @ y - b))
        z = y - step * g
        wn = _proj_l1(z, radius) if ball else _proj_simplex(z, radius)
        r = A @ wn - b
        fn = r @ r
        if fn > f:
            # restart momentum from the last accepted iterate
            t = 1.0
            y = w.copy()
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = wn + ((t - 1.0) / tn) * (wn - w)
        stalled = abs(f - fn) <= tol * max(1.0, fn)
        w = wn
        f = fn
        t = tn
        if stalled:
            # momentum can stall on a face; confirm with a plain projected step
            g = 2.0 * (A.T @ (A @ w - b))
            z = w - step * g
            wp = _proj_l1(z, radius) if ball else _proj_simplex(z, radius)
            r = A @ wp - b
            fp = r @ r
            it += 1
            if abs(f - fp) <= tol * max(1.0, f):
                if fp < f:
                    w = wp
                    f = fp
                converged = True
                break
            if fp < f:
                w = wp
                f = fp
            y = w.copy()
            t = 1.0
    return w, f, it, converged


def project_simplex(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = radius}``."""
    return _proj_simplex(np.ascontiguousarray(v, dtype=float), float(radius))


def project_l1_ball(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{w : ||w||_1 <= radius}``."""
    return _proj_l1(np.ascontiguousarray(v, dtype=float), float(radius))


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("solver inputs contain NaN or infinite values")


def _lipschitz(A: np.ndarray) -> float:
    gram = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    return 2.0 * float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0


def _rank_deficient(A: np.ndarray, tol: float, affine: bool = False) -> bool:
    """Whether the Gram matrix is singular (relative ``tol``), i.e. the
    minimiser may not be unique. With ``affine`` only directions summing to
    zero count, which is what matters on the simplex."""
    k, j = A.shape
    if affine:
        if j == 1:
            return False
        # orthonormal basis of {d : sum(d) = 0}
        q, _ = np.linalg.qr(np.column_stack([np.ones(j), np.eye(j)[:, : j - 1]]))
        A = A @ q[:, 1:]
        j -= 1
    if j > k:
        return True
    s = np.linalg.svd(A, compute_uv=False)
    return bool(s[-1] ** 2 <= tol * max(1.0, s[0] ** 2))


@numba.njit(cache=True)
def _affine_ls(A_S, b):
    """Minimise ||A_S u - b|| subject to sum(u) = 1 (minimum-norm when singular)."""
    n = A_S.shape[1]
    u_p = np.full(n, 1.0 / n)
    if n == 1:
        return u_p
    # orthonormal basis of the complement of the ones vector
    m = np.zeros((n, n))
    m[:, 0] = 1.0
    for i in range(n - 1):
        m[i, i + 1] = 1.0
    q, _ = np.linalg.qr(m)
    basis = np.ascontiguousarray(q[:, 1:n])
    z = np.linalg.lstsq(A_S @ basis, b - A_S @ u_p)[0]
    return u_p + basis @ z


def simplex_kkt_residual(A, b, w, active_tol: float = 1e-10) -> float:
    """Largest KKT violation of ``w`` for ``min ||A w - b||^2`` on the simplex.

    Active coordinates must share a common partial derivative; inactive ones
    must not fall below it.
    """
    g = 2.0 * (A.T @ (A @ w - b))
    active = w > active_tol
    if not active.any():
        return float("inf")
    mu = float(np.mean(g[active]))
    res = float(np.max(np.abs(g[active] - mu)))
    if (~active).any():
        res = max(res, float(np.max(np.maximum(mu - g[~active], 0.0))))
    return res


@numba.njit(cache=True)
def _grad_scale(A, b, w):
    # magnitude bound of the gradient terms; rounding error scales with it
    na = np.sqrt(np.sum(A * A))
    return max(1.0, 2.0 * na * (na * np.sqrt(w @ w) + np.sqrt(b @ b)))


@numba.njit(cache=True)
def _refine_kernel(A, b, w, clamp_tol, kkt_tol, A_kkt, b_kkt, start_frac):
    j = w.size
    # start from the dominant coordinates; the active set adds back what is needed
    x = np.where(w > max(clamp_tol, start_frac * w.max()), w, 0.0)
    x = x / x.sum()
    support = x > 0.0
    for _ in range(3 * j + 3):
        idx = np.flatnonzero(support)
        u = _affine_ls(np.ascontiguousarray(A[:, idx]), b)
        if np.all(u >= 0.0):
            x = np.zeros(j)
            x[idx] = u
            g = 2.0 * (A_kkt.T @ (A_kkt @ x - b_kkt))
            mu = np.mean(g[idx])
            tol = kkt_tol * _grad_scale(A_kkt, b_kkt, x)
            best, k = -np.inf, -1
            for i in range(j):
                if not support[i] and mu - g[i] > best:
                    best, k = mu - g[i], i
            if k < 0 or best <= tol:
                return x, True
            support[k] = True
            continue
        # move toward u until the first coordinate reaches zero
        xs = x[idx]
        alpha, hit = np.inf, -1
        for i in range(idx.size):
            if u[i] < 0.0:
                ratio = xs[i] / (xs[i] - u[i])
                if ratio < alpha:
                    alpha, hit = ratio, idx[i]
        x = np.zeros(j)
        x[idx] = np.maximum(xs + alpha * (u - xs), 0.0)
        x[hit] = 0.0
        support = x > clamp_tol
        if not support.any():
            return x, False
        x = np.where(support, x, 0.0)
        x = x / x.sum()
    return x, False


def _refine_simplex(A, b, w, settings: SolverSettings, A_kkt=None, b_kkt=None):
    """Primal active-set refinement on the simplex, warm-started at feasible ``w``.

    Subproblems are solved with ``(A, b)``; gradients for the optimality test
    use ``(A_kkt, b_kkt)``, which may be a row-centred copy with the same
    minimisers and smaller rounding scale. Returns the KKT-certified optimum or
    ``None`` if certification fails.
    """
    if A_kkt is None:
        A_kkt, b_kkt = A, b
    x, ok = _refine_kernel(
        np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(b, dtype=float),
        np.ascontiguousarray(w, dtype=float), settings.clamp_tol, settings.kkt_tol,
        np.ascontiguousarray(A_kkt, dtype=float), np.ascontiguousarray(b_kkt, dtype=float),
        settings.start_frac,
    )
    return x if ok else None


def _as_problem(x1, X0):
    x1 = np.asarray(x1, dtype=float).ravel()
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim == 1:
        X0 = X0.reshape(1, -1)
    if X0.ndim != 2 or X0.shape[0] != x1.size:
        raise ValueError(f"X0 must have shape ({x1.size}, J); got {X0.shape}")
    if X0.shape[0] < 1 or X0.shape[1] < 1:
        raise ValueError("need at least one row and one donor column")
    return x1, X0


def _staged(apg, refine, w0, vertex, settings: SolverSettings):
    """Active set from the best single vertex; if that cannot be certified,
    coarse APG then polish, and full-tolerance APG as the last resort."""
    if not settings.polish:
        w, _, it, conv = apg(w0, settings.tol)
        return w, it, conv, False
    cand = refine(vertex)
    if cand is not None:
        return cand, 0, True, True
    w, _, it, conv = apg(w0, max(settings.coarse_tol, settings.tol))
    cand = refine(w)
    if cand is not None:
        return cand, it, True, True
    w, _, it2, conv = apg(w, settings.tol)
    cand = refine(w)
    if cand is not None:
        return cand, it + it2, True, True
    return w, it + it2, conv, False


def _best_vertex(A, b) -> np.ndarray:
    e = np.zeros(A.shape[1])
    e[int(np.argmin(((A - b[:, None]) ** 2).sum(axis=0)))] = 1.0
    return e


def solve_simplex_wls(x1, X0, v=None, settings: SolverSettings | None = None) -> Solution:
    """Minimise ``(x1 - X0 w)' diag(v) (x1 - X0 w)`` over the probability simplex.

    Parameters
    ----------
    x1 : (K,) array
        Target vector (treated unit).
    X0 : (K, J) array
        One column per donor.
    v : (K,) array, optional
        Non-negative row importances; uniform ``1/K`` when omitted.

    Returns
    -------
    Solution
        ``weights`` on the simplex and the achieved (not square-rooted)
        ``objective``.
    """
    settings = settings or SolverSettings()
    x1, X0 = _as_problem(x1, X0)
    k, j = X0.shape
    v = np.full(k, 1.0 / k) if v is None else np.asarray(v, dtype=float).ravel()
    if v.size != k:
        raise ValueError("v must have one entry per row of X0")
    _check_finite(x1, X0, v)
    if np.any(v < 0):
        raise ValueError("importances must be non-negative")

    sv = np.sqrt(v)
    # Row centring leaves the objective unchanged on the simplex and shrinks L.
    centre = X0.mean(axis=1)
    A = np.ascontiguousarray(sv[:, None] * (X0 - centre[:, None]))
    b = np.ascontiguousarray(sv * (x1 - centre))
    w0 = np.full(j, 1.0 / j)
    lip = _lipschitz(A)
    if j == 1 or lip == 0.0:
        w, it, conv, polished = w0, 0, True, False
    else:
        # raw columns keep the result independent of which other donors exist
        A_raw = sv[:, None] * X0
        w, it, conv, polished = _staged(
            lambda w_, tol: _apg(A, b, w_, 1.0 / lip, 1.0, False, tol, settings.max_iter),
            lambda w_: _refine_simplex(A_raw, sv * x1, w_, settings, A, b),
            w0, _best_vertex(A, b), settings,
        )
    w = np.where(w < settings.clamp_tol, 0.0, w)
    w = w / w.sum()
    resid = x1 - X0 @ w
    obj = float(resid @ (v * resid))
    return Solution(w, obj, int(it), bool(conv), polished,
                    _rank_deficient(A, settings.singular_tol, affine=True))


def solve_l1_ball_ls(y1, Y0, bound: float = 1.0, settings: SolverSettings | None = None) -> Solution:
    """Minimise ``||y1 - Y0 w||^2`` subject to ``||w||_1 <= bound``.

    Weights may be negative and need not sum to one.
    """
    settings = settings or SolverSettings()
    if not bound > 0:
        raise ValueError("bound must be positive")
    y1, Y0 = _as_problem(y1, Y0)
    _check_finite(y1, Y0)
    j = Y0.shape[1]
    A = np.ascontiguousarray(Y0)
    b = np.ascontiguousarray(y1)
    w0 = np.full(j, float(bound) / j)
    lip = _lipschitz(A)
    r = float(bound)
    # ||w||_1 <= r  <=>  w = r (p - n) with (p, n, slack) on the simplex
    lifted = np.ascontiguousarray(np.hstack([r * A, -r * A, np.zeros((A.shape[0], 1))]))

    def refine(w_):
        q = np.concatenate([np.maximum(w_, 0.0), np.maximum(-w_, 0.0), [0.0]]) / r
        q[-1] = max(0.0, 1.0 - q[:-1].sum())
        cand = _refine_simplex(lifted, b, q, settings)
        return None if cand is None else r * (cand[:j] - cand[j: 2 * j])

    vertex = _best_vertex(lifted, b)
    if lip == 0.0:
        w, it, conv, polished = w0, 0, True, False
    else:
        w, it, conv, polished = _staged(
            lambda w_, tol: _apg(A, b, w_, 1.0 / lip, r, True, tol, settings.max_iter),
            refine, w0, r * (vertex[:j] - vertex[j: 2 * j]), settings,
        )
    w = np.where(np.abs(w) < settings.clamp_tol, 0.0, w)
    norm = np.abs(w).sum()
    if norm > bound:
        w = w * (bound / norm)
    resid = y1 - Y0 @ w
    return Solution(w, float(resid @ resid), int(it), bool(conv), polished,
                    _rank_deficient(A, settings.singular_tol))


def solve_ols(y1, Y0, intercept: bool = True) -> Solution:
    """Least squares of ``y1`` on the columns of ``Y0`` (plus a constant).

    Requires strictly more observations than parameters; raises
    :class:`UnderdeterminedSystem` otherwise.
    """
    y1 = np.asarray(y1, dtype=float).ravel()
    Y0 = np.asarray(Y0, dtype=float).reshape(y1.size, -1)
    _check_finite(y1, Y0)
    n_obs, j = Y0.shape
    n_params = j + int(intercept)
    if n_obs <= n_params:
        raise UnderdeterminedSystem(n_obs, n_params)
    design = np.column_stack([np.ones(n_obs), Y0]) if intercept else Y0
    if design.shape[1] == 0:
        return Solution(np.zeros(0), float(y1 @ y1))
    coef, _, rank, _ = np.linalg.lstsq(design, y1, rcond=None)
    resid = y1 - design @ coef
    c0 = float(coef[0]) if intercept else 0.0
    w = coef[1:] if intercept else coef
    return Solution(np.array(w), float(resid @ resid), rank_deficient=bool(rank < design.shape[1]),
                    intercept=c0)
