"""Trust-region subproblem with a rank-one structured Hessian.

    minimize  0.5 y^T A y + p^T y   subject to  ||y|| <= radius,
    A = eta I + gamma w w^T,  eta > 0, gamma >= 0.

Two independent solvers are provided: :func:`solve_trs_eigen` reads the
optimal multiplier off the largest real eigenvalue of a 6x6 nonsymmetric
matrix; :func:`solve_trs_secular` finds it as the root of the secular
equation ``||(A + lam I)^{-1} p|| = radius`` using Sherman-Morrison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .eigen import _balance, _hessenberg, _hqr


class TrsNumericalError(ArithmeticError):
    def __init__(self, message, residual=math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class TrsProblem:
    eta: float
    gamma: float
    direction: np.ndarray
    p: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).reshape(3))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    @property
    def rank_one_weight(self):
        """gamma ||w||^2: the eigenvalue of A along ``direction`` minus eta."""
        return self.gamma * float(self.direction @ self.direction)

    def matrix(self):
        w = self.direction
        return self.eta * np.eye(3) + self.gamma * np.outer(w, w)

    def shifted_solve(self, lam, rhs=None):
        """(A + lam I)^{-1} rhs by Sherman-Morrison; ``rhs`` defaults to p."""
        rhs = self.p if rhs is None else np.asarray(rhs, dtype=float)
        w = self.direction
        shift = self.eta + lam
        denom = shift + self.rank_one_weight
        return (rhs - (self.gamma * float(w @ rhs) / denom) * w) / shift

    def objective(self, y):
        y = np.asarray(y, dtype=float)
        w = self.direction
        return 0.5 * (self.eta * float(y @ y) + self.gamma * float(w @ y) ** 2) + float(self.p @ y)

    def eigen_matrix(self):
        """The 6x6 matrix [[-A, I], [p p^T / r^2, -A]]."""
        a = self.matrix()
        m = np.zeros((6, 6))
        m[:3, :3] = -a
        m[:3, 3:] = np.eye(3)
        m[3:, :3] = np.outer(self.p, self.p) / self.radius**2
        m[3:, 3:] = -a
        return m


@dataclass(frozen=True)
class TrsSolution:
    y_star: np.ndarray
    lambda_star: float
    on_boundary: bool


def structured_determinant(eta, gamma, direction, lam=0.0):
    """det(eta I + gamma w w^T + lam I) by the matrix determinant lemma."""
    w = np.asarray(direction, dtype=float)
    shift = eta + lam
    return (1.0 + gamma * float(w @ w) / shift) * shift**3


def _interior(problem):
    y = -problem.shifted_solve(0.0)
    return y, float(np.linalg.norm(y))


def solve_trs_secular(problem: TrsProblem, rtol=1e-10, max_iter=200) -> TrsSolution:
    """Safeguarded Newton on ``1/||y(lam)|| - 1/radius`` inside a shrinking bracket."""
    p = problem.p
    pnorm = float(np.linalg.norm(p))
    if pnorm == 0.0:
        return TrsSolution(np.zeros(3), 0.0, False)
    y, ynorm = _interior(problem)
    d = problem.radius
    if ynorm <= d:
        return TrsSolution(y, 0.0, ynorm >= d * (1.0 - rtol))

    # spectral split of p: along the rank-one direction and orthogonal to it
    w = problem.direction
    wnorm = float(np.linalg.norm(w))
    if wnorm > 0.0 and problem.gamma > 0.0:
        c_par = float(w @ p) / wnorm
        c_perp2 = max(pnorm * pnorm - c_par * c_par, 0.0)
    else:
        c_par, c_perp2 = 0.0, pnorm * pnorm
    mu_par = problem.eta + problem.rank_one_weight
    mu_perp = problem.eta

    def norm_and_slope(lam):
        a = c_par / (mu_par + lam)
        b2 = c_perp2 / (mu_perp + lam) ** 2
        n2 = a * a + b2
        dn2 = -2.0 * (a * a / (mu_par + lam) + b2 / (mu_perp + lam))
        n = math.sqrt(n2)
        return n, dn2 / (2.0 * n)

    lo, hi = 0.0, pnorm / d  # ||y(hi)|| < ||p|| / (eta + hi) < d
    lam = 0.0
    for _ in range(max_iter):
        n, dn = norm_and_slope(lam)
        if abs(n - d) <= rtol * d:
            break
        if n > d:
            lo = lam
        else:
            hi = lam
        # Newton on the nearly linear function 1/n - 1/d
        step = (1.0 / n - 1.0 / d) / (dn / (n * n))
        cand = lam + step
        if not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        lam = cand
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    y = -problem.shifted_solve(lam)
    return TrsSolution(y, lam, True)


@njit(cache=True)
def _eigen_multipliers(eta, gamma, w, P, radius, max_sweeps, lam, status):
    # Rightmost real eigenvalue of [[-A_k, I], [p_k p_k^T / r_k^2, -A_k]] for every row k,
    # A_k = eta_k I + gamma_k w w^T.  status: 0 ok, 1 QR not converged, 2 no real eigenvalue.
    m = np.empty((6, 6))
    wr = np.empty(6)
    wi = np.empty(6)
    for k in range(P.shape[0]):
        r2 = radius[k] * radius[k]
        for i in range(3):
            for j in range(3):
                a_ij = gamma[k] * w[i] * w[j]
                if i == j:
                    a_ij += eta[k]
                m[i, j] = -a_ij
                m[i + 3, j + 3] = -a_ij
                m[i, j + 3] = 1.0 if i == j else 0.0
                m[i + 3, j] = P[k, i] * P[k, j] / r2
        wr[:] = np.nan
        wi[:] = np.nan
        _balance(m)
        _hessenberg(m)
        ok, _ = _hqr(m, wr, wi, max_sweeps)
        best = -np.inf
        found = False
        for i in range(6):
            if wi[i] == 0.0 and np.isfinite(wr[i]) and wr[i] > best:
                best = wr[i]
                found = True
        lam[k] = best
        if not ok:
            status[k] = 1
        elif not found:
            status[k] = 2
        else:
            status[k] = 0


def _shifted_solve_rows(eta, gamma, w, P, lam):
    shift = eta + lam
    denom = shift + gamma * float(w @ w)
    return (P - (gamma * (P @ w) / denom)[:, None] * w[None, :]) / shift[:, None]


def _polish_multipliers(eta, gamma, w, P, radius, lam, steps=2):
    # Newton on 1/||y(lam)|| - 1/r for boundary rows; the eigenvalue carries an
    # absolute error that (A + lam I)^{-1} amplifies when eta + lam is small
    lam = lam.copy()
    edge = lam > 0.0
    if not np.any(edge):
        return lam
    e, g, Pe, r = eta[edge], gamma[edge], P[edge], radius[edge]
    cur = lam[edge]
    for _ in range(steps):
        y = _shifted_solve_rows(e, g, w, Pe, cur)
        n = np.linalg.norm(y, axis=1)
        My = _shifted_solve_rows(e, g, w, y, cur)
        slope = np.einsum("ij,ij->i", y, My) / n**3
        ok = (n > 0.0) & (slope > 0.0)
        step = np.where(ok, (1.0 / n - 1.0 / r) / np.where(ok, slope, 1.0), 0.0)
        cur = np.maximum(cur - step, 0.0)
    lam[edge] = cur
    return lam


def solve_trs_batch(eta, gamma, direction, P, radius, method="eigen", max_sweeps=500):
    """Solve many subproblems sharing one rank-one direction.

    ``eta``, ``gamma``, ``radius`` have shape (N,), ``P`` shape (N, 3).
    Returns ``(Y, lam)``.  Rows whose eigenvalue iteration fails are
    re-solved by the secular solver.
    """
    eta = np.ascontiguousarray(eta, dtype=float)
    gamma = np.ascontiguousarray(gamma, dtype=float)
    w = np.ascontiguousarray(direction, dtype=float).reshape(3)
    P = np.ascontiguousarray(P, dtype=float).reshape(-1, 3)
    radius = np.ascontiguousarray(radius, dtype=float)
    n = P.shape[0]
    if method == "secular":
        Y = np.empty((n, 3))
        lam = np.empty(n)
        for k in range(n):
            sol = solve_trs_secular(TrsProblem(eta[k], gamma[k], w, P[k], radius[k]))
            Y[k], lam[k] = sol.y_star, sol.lambda_star
        return Y, lam
    if method != "eigen":
        raise ValueError(f"unknown TRS method {method!r}")
    lam = np.empty(n)
    status = np.zeros(n, dtype=np.int64)
    _eigen_multipliers(eta, gamma, w, P, radius, max_sweeps, lam, status)
    lam = np.where(lam > 0.0, lam, 0.0)
    lam = _polish_multipliers(eta, gamma, w, P, radius, lam)
    Y = -_shifted_solve_rows(eta, gamma, w, P, lam)
    zero_p = ~np.any(P != 0.0, axis=1)
    Y[zero_p] = 0.0
    lam[zero_p] = 0.0
    for k in np.flatnonzero((status != 0) & ~zero_p):
        sol = solve_trs_secular(TrsProblem(eta[k], gamma[k], w, P[k], radius[k]))
        Y[k], lam[k] = sol.y_star, sol.lambda_star
    return Y, lam


def solve_trs_eigen(problem: TrsProblem, max_sweeps=500) -> TrsSolution:
    """Multiplier from the rightmost real eigenvalue of the 6x6 matrix
    ``[[-A, I], [p p^T / r^2, -A]]``.

    A positive eigenvalue is the boundary multiplier; otherwise the
    unconstrained minimiser is interior and the multiplier is zero (a tie at
    exactly zero counts as interior).
    """
    if not np.any(problem.p):
        return TrsSolution(np.zeros(3), 0.0, False)
    lam = np.empty(1)
    status = np.zeros(1, dtype=np.int64)
    _eigen_multipliers(
        np.array([problem.eta]),
        np.array([problem.gamma]),
        problem.direction,
        problem.p.reshape(1, 3),
        np.array([problem.radius]),
        max_sweeps,
        lam,
        status,
    )
    if status[0] != 0:
        y, ynorm = _interior(problem)
        raise TrsNumericalError(
            "eigenvalue iteration failed to isolate a real eigenvalue",
            residual=ynorm - problem.radius,
        )
    if lam[0] > 0.0:
        lam = _polish_multipliers(
            np.array([problem.eta]),
            np.array([problem.gamma]),
            problem.direction,
            problem.p.reshape(1, 3),
            np.array([problem.radius]),
            lam,
        )
        return TrsSolution(-problem.shifted_solve(lam[0]), float(lam[0]), True)
    y, _ = _interior(problem)
    return TrsSolution(y, 0.0, False)


def solve_trs(problem: TrsProblem, method="eigen") -> TrsSolution:
    """Dispatch to one solver; the eigenvalue route falls back to the secular one on failure."""
    if method == "secular":
        return solve_trs_secular(problem)
    if method != "eigen":
        raise ValueError(f"unknown TRS method {method!r}")
    try:
        return solve_trs_eigen(problem)
    except TrsNumericalError:
        return solve_trs_secular(problem)


@dataclass(frozen=True)
class KktResiduals:
    primal: float
    stationarity: float
    psd: float
    dual: float
    slackness: float
    scales: tuple

    def as_tuple(self):
        return (self.primal, self.stationarity, self.psd, self.dual, self.slackness)

    def scaled(self):
        """Each residual divided by (1 + its natural scale)."""
        return tuple(r / (1.0 + s) for r, s in zip(self.as_tuple(), self.scales))

    def max_scaled(self):
        return max(self.scaled())


def check_kkt(problem: TrsProblem, solution: TrsSolution) -> KktResiduals:
    y = np.asarray(solution.y_star, dtype=float)
    lam = float(solution.lambda_star)
    d = problem.radius
    ynorm = float(np.linalg.norm(y))
    shifted = problem.matrix() + lam * np.eye(3)
    primal = max(ynorm - d, 0.0)
    stationarity = float(np.linalg.norm(shifted @ y + problem.p))
    psd = max(-float(np.linalg.eigvalsh(shifted)[0]), 0.0)
    dual = max(-lam, 0.0)
    slackness = abs(lam * (ynorm * ynorm - d * d))
    scales = (
        d,
        float(np.linalg.norm(problem.p)) + float(np.linalg.norm(shifted, 2)) * ynorm,
        problem.eta + problem.rank_one_weight + abs(lam),
        abs(lam),
        abs(lam) * d * d,
    )
    return KktResiduals(primal, stationarity, psd, dual, slackness, scales)


def random_problem(rng: np.random.Generator) -> TrsProblem:
    """A structured instance with scales spread over several decades.

    About one draw in five has gamma = 0 and one in five an unconstrained
    minimiser strictly inside the ball.
    """
    eta = 10.0 ** rng.uniform(-3, 3)
    gamma = 0.0 if rng.random() < 0.2 else 10.0 ** rng.uniform(-4, 4)
    w = rng.normal(size=3) * 10.0 ** rng.uniform(-2, 2)
    p = rng.normal(size=3) * 10.0 ** rng.uniform(-3, 3)
    radius = 10.0 ** rng.uniform(-2, 3)
    problem = TrsProblem(eta, gamma, w, p, radius)
    if rng.random() < 0.2:
        y, ynorm = _interior(problem)
        if ynorm > 0.0:
            problem = TrsProblem(eta, gamma, w, p, ynorm * rng.uniform(1.05, 3.0))
    return problem
