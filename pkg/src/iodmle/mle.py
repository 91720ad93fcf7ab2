"""Approximate maximum-likelihood state estimation by block coordinate descent.

The exact negative log-likelihood (range + vMF angle + Doppler terms) is
non-convex in (x, v).  Introducing one auxiliary vector ``y_i`` per
measurement, standing in for ``x - t_i`` with ``||y_i|| <= d_i``, gives a
relaxed cost that is a convex quadratic in (x, v) for fixed y and splits
into independent trust-region subproblems in y for fixed (x, v).  The
solver alternates exact minimisation over the two blocks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .frames import StateVector
from .measmodel import SPEED_OF_LIGHT, DegenerateGeometryError, MeasurementSet
from .trs import TrsProblem, solve_trs_batch

log = logging.getLogger(__name__)

MIN_RADIUS = 1.0  # m, floor for the trust-region radius when a noisy range is not positive


class SingularSystemError(np.linalg.LinAlgError):
    pass


class UnderdeterminedError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemWeights:
    alpha: np.ndarray  # 1 / sigma_d
    beta: np.ndarray  # 1 / sigma_f
    omega: np.ndarray  # 2 f_c / (c d)
    b: np.ndarray  # (kappa / d) u, shape (N, 3)
    radius: np.ndarray  # trust-region radius, max(d, MIN_RADIUS)
    sites: np.ndarray  # site position per row, shape (N, 3)

    @classmethod
    def from_data(cls, data: MeasurementSet, sites):
        t, fc, sigma_d, sigma_f, kappa = data.site_arrays(sites)
        radius = np.maximum(data.ranges, MIN_RADIUS)
        if np.any(data.ranges < MIN_RADIUS):
            log.warning(
                "%d range(s) below %.1f m; trust-region radius clamped",
                int(np.sum(data.ranges < MIN_RADIUS)),
                MIN_RADIUS,
            )
        return cls(
            alpha=1.0 / sigma_d,
            beta=1.0 / sigma_f,
            omega=2.0 * fc / (SPEED_OF_LIGHT * radius),
            b=(kappa / radius)[:, None] * data.directions,
            radius=radius,
            sites=t,
        )


@dataclass
class BcdState:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray  # (N, 3)
    iteration: int = 0
    relaxed_cost: float = np.nan


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 500
    rel_cost_tolerance: float = 1e-10
    init_strategy: str = "angle_range"
    trs_method: str = "eigen"
    initial_state: StateVector | None = None  # used by init_strategy="custom"
    accelerate: bool = True  # try a Newton-extrapolated pass each iteration
    max_backtracks: int = 60

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.rel_cost_tolerance > 0:
            raise ValueError("rel_cost_tolerance must be positive")
        if self.init_strategy not in ("angle_range", "custom"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.init_strategy == "custom" and self.initial_state is None:
            raise ValueError("init_strategy='custom' needs initial_state")
        if self.trs_method not in ("eigen", "secular"):
            raise ValueError(f"unknown trs_method {self.trs_method!r}")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    final_relaxed_cost: float
    final_original_cost: float
    cost_trace: list = field(default_factory=list)


# ---------------------------------------------------------------- original cost


def _geometry(x, t):
    los = x[None, :] - t
    dist = np.linalg.norm(los, axis=1)
    if np.any(dist == 0.0):
        raise DegenerateGeometryError("estimate coincides with a radar site")
    return los, dist


def cost_original_terms(x, v, data: MeasurementSet, sites):
    """(f_range, f_angle, f_doppler) of the exact negative log-likelihood."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t, fc, sigma_d, sigma_f, kappa = data.site_arrays(sites)
    los, dist = _geometry(x, t)
    unit = los / dist[:, None]
    f_range = np.sum((dist - data.ranges) ** 2 / (2.0 * sigma_d**2))
    f_angle = -np.sum(kappa * np.einsum("ij,ij->i", data.directions, unit))
    doppler_res = 2.0 * fc / SPEED_OF_LIGHT * (unit @ v) - data.dopplers
    f_doppler = np.sum(doppler_res**2 / (2.0 * sigma_f**2))
    return float(f_range), float(f_angle), float(f_doppler)


def cost_original(x, v, data: MeasurementSet, sites) -> float:
    return sum(cost_original_terms(x, v, data, sites))


def cost_original_grad(x, v, data: MeasurementSet, sites):
    """Gradient of :func:`cost_original` with respect to x and v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t, fc, sigma_d, sigma_f, kappa = data.site_arrays(sites)
    los, dist = _geometry(x, t)
    unit = los / dist[:, None]
    # d(unit)/dx = (I - unit unit^T) / dist, applied to a vector g: (g - unit (unit.g)) / dist
    def unit_jac_t(g):
        return (g - unit * np.einsum("ij,ij->i", unit, g)[:, None]) / dist[:, None]

    grad_x = np.sum(((dist - data.ranges) / sigma_d**2)[:, None] * unit, axis=0)
    grad_x -= np.sum(kappa[:, None] * unit_jac_t(data.directions), axis=0)
    scale = 2.0 * fc / SPEED_OF_LIGHT
    doppler_res = scale * (unit @ v) - data.dopplers
    coef = (doppler_res * scale / sigma_f**2)[:, None]
    grad_x += np.sum(coef * unit_jac_t(np.broadcast_to(v, unit.shape)), axis=0)
    grad_v = np.sum(coef * unit, axis=0)
    return grad_x, grad_v


# ----------------------------------------------------------------- relaxed cost


def cost_relaxed_terms(state: BcdState, data: MeasurementSet, weights: ProblemWeights):
    y = np.asarray(state.y, dtype=float)
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms > weights.radius * (1.0 + 1e-9)):
        raise InfeasibleError("auxiliary vector outside its range ball")
    resid = state.x[None, :] - weights.sites - y
    f_range = 0.5 * np.sum(weights.alpha**2 * np.einsum("ij,ij->i", resid, resid))
    f_angle = -np.sum(np.einsum("ij,ij->i", weights.b, y))
    doppler_res = weights.omega * (y @ state.v) - data.dopplers
    f_doppler = 0.5 * np.sum(weights.beta**2 * doppler_res**2)
    return float(f_range), float(f_angle), float(f_doppler)


def cost_relaxed(state: BcdState, data: MeasurementSet, weights: ProblemWeights, sites=None) -> float:
    return sum(cost_relaxed_terms(state, data, weights))


def relaxed_excess(state: BcdState, data: MeasurementSet, weights: ProblemWeights) -> float:
    """Relaxed cost minus its lower bound ``-sum kappa_i ||u_i||``, computed without cancellation.

    The bound holds because ``||y_i|| <= d_i``.  The angle part is evaluated
    as ``(kappa/d)||u|| [(d - ||y||) + ||y|| ||u_hat - y_hat||^2 / 2]``, which
    keeps full relative precision where the raw cost (about ``-sum kappa``)
    cannot resolve changes below its last bit.
    """
    y = np.asarray(state.y, dtype=float)
    resid = state.x[None, :] - weights.sites - y
    f_range = 0.5 * np.sum(weights.alpha**2 * np.einsum("ij,ij->i", resid, resid))
    doppler_res = weights.omega * (y @ state.v) - data.dopplers
    f_doppler = 0.5 * np.sum(weights.beta**2 * doppler_res**2)
    pull = np.linalg.norm(weights.b, axis=1)  # kappa ||u|| / d
    ynorm = np.linalg.norm(y, axis=1)
    safe = np.where(ynorm > 0.0, ynorm, 1.0)
    u_hat = weights.b / np.where(pull > 0.0, pull, 1.0)[:, None]
    gap = u_hat - y / safe[:, None]
    chord2 = np.where(ynorm > 0.0, np.einsum("ij,ij->i", gap, gap), 2.0)
    f_angle = np.sum(pull * ((weights.radius - ynorm) + ynorm * 0.5 * chord2))
    return float(f_range + f_angle + f_doppler)


def cost_relaxed_grad(state: BcdState, data: MeasurementSet, weights: ProblemWeights):
    """Gradient of the relaxed cost with respect to (x, v, y)."""
    y = np.asarray(state.y, dtype=float)
    a2 = weights.alpha**2
    resid = state.x[None, :] - weights.sites - y
    doppler_res = weights.omega * (y @ state.v) - data.dopplers
    coef = weights.beta**2 * doppler_res * weights.omega
    grad_x = np.sum(a2[:, None] * resid, axis=0)
    grad_v = np.sum(coef[:, None] * y, axis=0)
    grad_y = -a2[:, None] * resid - weights.b + coef[:, None] * state.v[None, :]
    return grad_x, grad_v, grad_y


# ------------------------------------------------------------------ block steps


def update_x(y, weights: ProblemWeights):
    """Weighted mean of ``t_i + y_i``: the x-part of the closed-form block step."""
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    a2 = weights.alpha**2
    return np.sum(a2[:, None] * (weights.sites + y), axis=0) / np.sum(a2)


def update_v(y, data: MeasurementSet, weights: ProblemWeights):
    """Least-squares velocity from the normal equations ``(Y^T B Y) v = Y^T B f``."""
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    if len(y) < 3:
        raise SingularSystemError(f"velocity needs at least 3 auxiliary vectors, got {len(y)}")
    Y = weights.omega[:, None] * y
    B = weights.beta**2
    sv = np.linalg.svd(Y * weights.beta[:, None], compute_uv=False)
    if not sv[-1] > 1e-12 * sv[0]:
        raise SingularSystemError(
            f"auxiliary vectors span fewer than 3 dimensions (singular values {sv})"
        )
    return np.linalg.solve(Y.T @ (B[:, None] * Y), Y.T @ (B * data.dopplers))


def update_xv(state: BcdState, data: MeasurementSet, weights: ProblemWeights, sites=None):
    """Closed-form minimiser of the relaxed cost over (x, v) with y fixed."""
    return update_x(state.y, weights), update_v(state.y, data, weights)


def assemble_subproblem(i, state: BcdState, data: MeasurementSet, weights: ProblemWeights, sites=None) -> TrsProblem:
    """Trust-region subproblem for ``y_i`` with x and v fixed (constant term dropped).

    Expanding ``a2/2 ||a_i - y||^2 - b_i.y + b2/2 (om y.v - f_i)^2`` gives the
    linear coefficient ``p = -b_i - a2 a_i - b2 om f_i v``; the angle pull
    enters with a minus sign.
    """
    a2 = weights.alpha[i] ** 2
    b2 = weights.beta[i] ** 2
    om = weights.omega[i]
    a_i = state.x - weights.sites[i]
    p = -weights.b[i] - a2 * a_i - b2 * om * data.dopplers[i] * state.v
    return TrsProblem(eta=a2, gamma=om * om * b2, direction=state.v, p=p, radius=weights.radius[i])


def _y_step(x, v, data: MeasurementSet, weights: ProblemWeights, method):
    a2 = weights.alpha**2
    b2 = weights.beta**2
    om = weights.omega
    P = -weights.b - a2[:, None] * (x[None, :] - weights.sites)
    P -= (b2 * om * data.dopplers)[:, None] * v[None, :]
    return solve_trs_batch(a2, om * om * b2, v, P, weights.radius, method)


def update_y(state: BcdState, data: MeasurementSet, weights: ProblemWeights, method="eigen"):
    """Minimise over every ``y_i`` at once; rows are the subproblems of :func:`assemble_subproblem`."""
    Y, _ = _y_step(state.x, state.v, data, weights, method)
    return Y


def newton_direction(x, v, Y, lam, weights: ProblemWeights):
    """Regularised Newton step on ``F(x) = min_y cost`` at fixed v.

    ``Y`` and ``lam`` are the optimal auxiliary vectors and multipliers at x.
    The gradient is ``sum a2 (x - t - y)`` and the Hessian follows from
    differentiating the subproblem optimality conditions: a row on its
    sphere is stiff radially and soft tangentially, an interior row adds
    almost nothing.  A plain block pass is the gradient step ``-g / sum a2``,
    so it cannot cross the flat regions where every row is interior.
    """
    a2 = weights.alpha**2
    gam = (weights.omega * weights.beta) ** 2
    grad = np.sum(a2[:, None] * (x[None, :] - weights.sites - Y), axis=0)
    eye = np.eye(3)
    shift = a2 + lam
    vv = np.outer(v, v)
    # (A + lam I)^{-1} row by row, Sherman-Morrison
    M = eye[None] - (gam / (shift + gam * float(v @ v)))[:, None, None] * vv[None]
    M /= shift[:, None, None]
    D = a2[:, None, None] * M
    My = np.einsum("nij,nj->ni", M, Y)
    yMy = np.einsum("ni,ni->n", Y, My)
    edge = (lam > 0.0) & (yMy > 0.0)
    D[edge] -= (a2[edge] / yMy[edge])[:, None, None] * np.einsum("ni,nj->nij", My[edge], My[edge])
    H = np.sum(a2[:, None, None] * (eye[None] - D), axis=0)
    H = 0.5 * (H + H.T) + 1e-10 * np.sum(a2) * eye
    return -np.linalg.solve(H, grad)


def initial_state(data: MeasurementSet, weights: ProblemWeights, config: SolverConfig) -> BcdState:
    if config.init_strategy == "custom":
        guess = config.initial_state
        y = guess.position[None, :] - weights.sites
        norms = np.linalg.norm(y, axis=1)
        over = norms > weights.radius
        y[over] *= (weights.radius[over] / norms[over])[:, None]
        return BcdState(guess.position.copy(), guess.velocity.copy(), y)
    y = weights.radius[:, None] * data.directions
    state = BcdState(np.zeros(3), np.zeros(3), y)
    state.x, state.v = update_xv(state, data, weights)
    return state


def _block_pass(x, v, data, weights, method):
    """y-step at (x, v) followed by the (x, v)-step."""
    Y, lam = _y_step(x, v, data, weights, method)
    state = BcdState(x, v, Y)
    state.x, state.v = update_xv(state, data, weights)
    return state, lam


def _accelerated_pass(state, plain_excess, data, weights, config):
    """Block pass started from a Newton-extrapolated x, or None if none beats the plain pass."""
    Y, lam = _y_step(state.x, state.v, data, weights, config.trs_method)
    step = newton_direction(state.x, state.v, Y, lam, weights)
    length = float(np.linalg.norm(step))
    if not np.isfinite(length) or length == 0.0:
        return None
    t = min(1.0, float(weights.radius.min()) / length)
    for _ in range(config.max_backtracks):
        try:
            cand, _ = _block_pass(state.x + t * step, state.v, data, weights, config.trs_method)
            excess = relaxed_excess(cand, data, weights)
        except (np.linalg.LinAlgError, InfeasibleError):
            excess = np.inf
        if excess < plain_excess:
            return cand, excess
        t *= 0.5
    return None


def solve(data: MeasurementSet, sites, config: SolverConfig = SolverConfig()):
    """Run the block coordinate descent; returns ``(StateVector, SolverReport)``.

    Every iteration is one exact pass over the two blocks.  With
    ``config.accelerate`` the pass may instead start from a Newton step on x,
    kept only when it ends lower than the plain pass, so the cost trace stays
    nonincreasing and the fixed points are those of plain descent.
    """
    if len(data) < 3:
        raise UnderdeterminedError(f"need at least 3 measurement triples, got {len(data)}")
    weights = ProblemWeights.from_data(data, sites)
    state = initial_state(data, weights, config)
    cost = cost_relaxed(state, data, weights)
    excess = relaxed_excess(state, data, weights)
    trace = [cost]
    converged = False
    for k in range(1, config.max_iterations + 1):
        nxt, _ = _block_pass(state.x, state.v, data, weights, config.trs_method)
        new_excess = relaxed_excess(nxt, data, weights)
        if config.accelerate:
            better = _accelerated_pass(state, new_excess, data, weights, config)
            if better is not None:
                nxt, new_excess = better
        state = nxt
        state.iteration = k
        cost = cost_relaxed(state, data, weights)
        if not np.isfinite(cost):
            raise DivergenceError(f"relaxed cost became {cost} at iteration {k}")
        trace.append(cost)
        # exact block steps never increase the cost: no decrease means rounding-level stagnation
        decrease = excess - new_excess
        excess = new_excess
        if decrease <= config.rel_cost_tolerance * (1.0 + abs(new_excess)):
            converged = True
            break
    state.relaxed_cost = cost
    report = SolverReport(
        converged=converged,
        iterations=state.iteration,
        final_relaxed_cost=cost,
        final_original_cost=cost_original(state.x, state.v, data, sites),
        cost_trace=trace,
    )
    return StateVector(state.x, state.v), report
