"""L1-penalized least squares and entry times along a penalty grid.

The solver minimizes 0.5 ||y - A b||_2^2 + lam ||b||_1 by cyclic
coordinate descent on the Gram matrix with an active set strategy: sweep
the coordinates currently in play, then rescan the maintained gradient for
stationarity violators and pull them in. Warm starts across a descending
geometric grid make whole-path computation cheap, which is what
entry_times uses to record the largest penalty at which each coefficient
is active.

A sweep stops refining once the stationarity residual on the active set is
comfortably inside the 1e-6 contract every caller relies on, or once
coefficient changes fall below COEF_TOL, whichever happens first. The
equicorrelated knockoff construction makes augmented designs exactly rank
deficient, and near the bottom of the grid nearly every column is active,
where cyclic sweeping contracts too slowly to be usable. Any block of
STALL_SWEEPS that fails to converge therefore hands the grid point to a
direct least-norm solve of the stationarity system on the current sign
pattern, which lands the answer in one step once the pattern has settled.
The same solve yields the in-pattern path direction, so while the pattern
keeps certifying, later grid points come from a one-step extrapolation
instead of sweeping; plain sweeps resume whenever certification fails.
Every shortcut candidate is accepted only after passing the full
stationarity check, so the contract never rests on the shortcut being
right. The inner loop is compiled with numba; it is plain IEEE arithmetic
(no fast-math), so results are reproducible across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceError, DegenerateFeatureError, InvalidInputError
from .numerics import as_matrix, as_vector

# Default iteration budget and coefficient-change tolerance for the solver.
MAX_SWEEPS = 100_000
COEF_TOL = 1e-8

# Active-coordinate stationarity residual at which a sweep may stop early.
# Five-fold margin under the 1e-6 contract.
KKT_STOP = 2e-7

# Sweeps attempted between stall checks. A block that fails to converge
# hands the grid point to the direct stationarity solve before sweeping on.
STALL_SWEEPS = 200

# Direct-solve attempts per grid point; past these, sweeping must finish.
POLISH_TRIES = 8


@dataclass(frozen=True)
class LambdaGrid:
    """Geometric penalty grid from lam_max down to lam_max * ratio_min."""

    num: int = 200
    ratio_min: float = 1e-3

    def __post_init__(self):
        if self.num < 2:
            raise InvalidInputError(f"grid needs at least 2 points, got {self.num}")
        if not 0.0 < self.ratio_min < 1.0:
            raise InvalidInputError(f"ratio_min must be in (0, 1), got {self.ratio_min}")

    def values(self, lam_max: float) -> np.ndarray:
        """Descending grid values; lam_max must be positive."""
        if not lam_max > 0.0 or not math.isfinite(lam_max):
            raise InvalidInputError(f"lam_max must be positive finite, got {lam_max}")
        exponents = np.arange(self.num) / (self.num - 1)
        return lam_max * self.ratio_min**exponents


@njit(cache=True)
def _cd_single(G, diag, lam, b, grad, budget, tol, kkt_stop):  # pragma: no cover
    """Budgeted coordinate descent at one penalty, in place.

    b and grad (= A^T y - G b) carry the warm start across calls. Returns
    the sweeps consumed on convergence, -1 when the budget ran out first.
    """
    q = diag.shape[0]
    active = np.zeros(q, np.bool_)
    for j in range(q):
        active[j] = b[j] != 0.0
    slack = 1e-12 * max(lam, 1.0)
    sweeps = 0
    while True:
        while True:
            any_active = False
            max_delta = 0.0
            for j in range(q):
                if not active[j]:
                    continue
                any_active = True
                bj = b[j]
                z = grad[j] + diag[j] * bj
                az = abs(z) - lam
                if az > 0.0:
                    new = az / diag[j] if z > 0.0 else -az / diag[j]
                else:
                    new = 0.0
                delta = new - bj
                if delta != 0.0:
                    b[j] = new
                    for k in range(q):
                        grad[k] -= G[j, k] * delta
                    ad = abs(delta)
                    if ad > max_delta:
                        max_delta = ad
            if not any_active:
                break
            sweeps += 1
            if sweeps > budget:
                return -1
            if max_delta <= tol:
                break
            kkt = 0.0
            for j in range(q):
                if b[j] != 0.0:
                    target = lam if b[j] > 0.0 else -lam
                    r = abs(grad[j] - target)
                    if r > kkt:
                        kkt = r
            if kkt <= kkt_stop:
                break
        found = False
        for j in range(q):
            if b[j] == 0.0 and not active[j] and abs(grad[j]) > lam + slack:
                active[j] = True
                found = True
        if not found:
            break
    return sweeps


def _certified(cand, grad, lam, slack, kkt_stop):
    """Full stationarity check: active residual within kkt_stop, inactive
    correlations within lam + slack."""
    act = cand != 0.0
    if act.any() and np.abs(grad[act] - lam * np.sign(cand[act])).max() > kkt_stop:
        return False
    if not act.all() and np.abs(grad[~act]).max() > lam + slack:
        return False
    return True


def _pattern_solve(Gss, rhs):
    """Solve the restricted system, least-norm when rank deficient.

    LU first because it is an order of magnitude cheaper; its answer is
    kept only when the linear residual is tiny, so near-singular blocks
    fall through to lstsq.
    """
    try:
        x = np.linalg.solve(Gss, rhs)
        if np.abs(Gss @ x - rhs).max() <= 1e-9 * max(1.0, np.abs(rhs).max()):
            return x
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.lstsq(Gss, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None


def _stationarity_solve(G, c, lam, b, kkt_stop):
    """Active-set solve of the stationarity system, seeded by sgn(b).

    Repeatedly solves G[S, S] x = c[S] - lam * sgn_S over the working set
    S, dropping coordinates whose solution crosses their sign and pulling
    in the worst stationarity violator outside S, the way an exchange
    algorithm walks sign patterns. Returns the candidate plus the
    in-pattern path direction d = solve(G[S, S], sgn_S) (b moves by
    (lam - lam') * d between penalties while the pattern holds), or
    (None, None) to send the caller back to plain sweeping. Candidates
    are returned only when the full stationarity check passes.
    """
    q = c.shape[0]
    slack = 1e-12 * max(lam, 1.0)
    keep = b != 0.0
    sign = np.sign(b)
    for _ in range(40):
        S = np.flatnonzero(keep)
        cand = np.zeros(q)
        d = np.zeros(q)
        if S.size:
            rhs = np.stack([c[S] - lam * sign[S], sign[S]], axis=1)
            sol = _pattern_solve(G[np.ix_(S, S)], rhs)
            if sol is None:
                return None, None
            x = sol[:, 0]
            crossed = x * sign[S] < 0.0
            if crossed.any():
                keep[S[crossed]] = False
                continue
            cand[S] = x
            d[S] = sol[:, 1]
        grad = c - G @ cand
        if _certified(cand, grad, lam, slack, kkt_stop):
            return cand, d
        act = cand != 0.0
        if act.any() and np.abs(grad[act] - lam * np.sign(cand[act])).max() > kkt_stop:
            return None, None  # inconsistent pattern; sweeping must move it
        outside = np.abs(np.where(keep, 0.0, grad))
        worst = int(np.argmax(outside))
        if outside[worst] <= lam + slack:
            return None, None
        keep[worst] = True
        sign[worst] = 1.0 if grad[worst] > 0.0 else -1.0
    return None, None


def _prepare(A, y):
    A = as_matrix(A, "A")
    y = as_vector(y, "y")
    if y.shape[0] != A.shape[0]:
        raise InvalidInputError(f"y has {y.shape[0]} rows, A has {A.shape[0]}")
    if A.shape[1] == 0:
        raise InvalidInputError("A has no columns")
    G = A.T @ A
    diag = np.diag(G).copy()
    if diag.min() <= 0.0:
        raise DegenerateFeatureError("A has a zero column; coefficient undefined")
    c = A.T @ y
    return np.ascontiguousarray(G), diag, c


def _run_path(G, diag, c, lams, max_sweeps, tol):
    q = diag.shape[0]
    b = np.zeros(q)
    grad = c.copy()
    entry = np.full(q, -1, dtype=np.int64)
    coefs = np.zeros((lams.shape[0], q))
    left = max_sweeps
    hint = None  # (reference solution, its penalty, path direction)
    for li in range(lams.shape[0]):
        lam = float(lams[li])
        solved = False
        tries = 0
        if hint is not None:
            b_ref, lam_ref, d = hint
            cand = b_ref + (lam_ref - lam) * d
            g = c - G @ cand
            if _certified(cand, g, lam, 1e-12 * max(lam, 1.0), KKT_STOP):
                b[:] = cand
                grad[:] = g
                hint = (b.copy(), lam, d)
                solved = True
            else:
                # pattern broke, usually by one entering coordinate; the
                # exchange solve patches that far cheaper than sweeping
                hint = None
                tries = 1
                cand, d = _stationarity_solve(G, c, lam, b, KKT_STOP)
                if cand is not None:
                    b[:] = cand
                    grad[:] = c - G @ b
                    hint = (b.copy(), lam, d)
                    solved = True
        while not solved:
            if left <= 0:
                raise ConvergenceError(
                    f"coordinate descent exhausted {max_sweeps} sweeps at lam={lam:.6g}"
                )
            chunk = STALL_SWEEPS if left > STALL_SWEEPS else left
            used = _cd_single(G, diag, lam, b, grad, chunk, tol, KKT_STOP)
            if used >= 0:
                left -= used
                break
            left -= chunk
            if chunk == STALL_SWEEPS and tries < POLISH_TRIES:
                tries += 1
                cand, d = _stationarity_solve(G, c, lam, b, KKT_STOP)
                if cand is not None:
                    b[:] = cand
                    grad[:] = c - G @ b
                    hint = (b.copy(), lam, d)
                    break
        newly = (entry < 0) & (b != 0.0)
        entry[newly] = li
        coefs[li] = b
    return b, entry, coefs


def lasso_solve(A, y, lam, *, max_sweeps: int = MAX_SWEEPS, tol: float = COEF_TOL):
    """Coefficients minimizing 0.5 ||y - A b||^2 + lam ||b||_1.

    Stationarity at the result holds to 1e-6: active coordinates have
    correlation lam * sign(b_j) with the residual, inactive ones at most
    lam, both up to that slack.
    """
    if not lam >= 0.0 or not math.isfinite(lam):
        raise InvalidInputError(f"lam must be non-negative finite, got {lam}")
    G, diag, c = _prepare(A, y)
    b, _, _ = _run_path(G, diag, c, np.array([float(lam)]), max_sweeps, tol)
    return b


def lasso_path(A, y, lams, *, max_sweeps: int = MAX_SWEEPS, tol: float = COEF_TOL):
    """Solutions at every penalty of a descending sequence, warm-started.

    Returns an array of shape (len(lams), cols). Each row satisfies the
    same stationarity contract as lasso_solve at its penalty.
    """
    lams = as_vector(lams, "lams")
    if lams.shape[0] == 0:
        raise InvalidInputError("lams is empty")
    if lams.min() < 0.0 or np.any(np.diff(lams) > 0):
        raise InvalidInputError("lams must be non-negative and non-increasing")
    G, diag, c = _prepare(A, y)
    _, _, coefs = _run_path(G, diag, c, lams, max_sweeps, tol)
    return coefs


def entry_times(A, y, grid: LambdaGrid | None = None, *,
                max_sweeps: int = MAX_SWEEPS, tol: float = COEF_TOL):
    """Largest grid penalty at which each coefficient is nonzero.

    The grid runs geometrically from lam_max = ||A^T y||_inf down to
    lam_max * ratio_min. Coefficients that never activate get 0. When
    y is orthogonal to every column (lam_max = 0) all times are 0.
    """
    if grid is None:
        grid = LambdaGrid()
    G, diag, c = _prepare(A, y)
    lam_max = float(np.abs(c).max())
    if lam_max == 0.0:
        return np.zeros(diag.shape[0])
    lams = grid.values(lam_max)
    _, entry, _ = _run_path(G, diag, c, lams, max_sweeps, tol)
    Z = np.zeros(diag.shape[0])
    seen = entry >= 0
    Z[seen] = lams[entry[seen]]
    return Z
