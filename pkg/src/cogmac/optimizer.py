"""Protocol design: maximise secondary utilisation subject to a collision cap.

The search is a dense grid over ``[eps, 1 - eps]^2`` followed by a pattern
search polish from the best grid point.  Under a collision cap, trial points
above the cap are pulled back onto it along ``q``, so the polish can follow
the boundary; nothing is penalised.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from scipy.optimize import brentq

from .analytics import MetricGrid, collision_profile, full_metrics, metric_grid
from .core import (
    DesignProblem,
    InfeasibleError,
    Metrics,
    ModelDomainError,
    NetworkConfig,
    make_protocol,
)

DEFAULT_RESOLUTION = 200
CONTOUR_TOL = 1e-2
TIE_TOL = 1e-12

# compass directions plus diagonals; diagonals let the search slide along
# a curved constraint boundary
_DIRECTIONS = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)], dtype=float
)


@dataclass(frozen=True)
class DesignSolution:
    q_opt: float
    r_opt: float
    c_s: float
    t_col: float
    p_s: float
    binding: bool
    grid_resolution: int
    refined: bool
    on_contour: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SweepPoint:
    value: float
    result: Optional[Union[DesignSolution, Metrics]]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SweepResult:
    axis: str
    points: list = field(default_factory=list)

    def values(self) -> list:
        return [p.value for p in self.points]

    def to_rows(self) -> list[dict]:
        """Flat long-form rows, one per sweep point."""
        rows = []
        for p in self.points:
            row = {self.axis: p.value, "error": p.error or ""}
            if p.result is not None:
                row.update(p.result.to_dict())
            rows.append(row)
        return rows


def search_axis(epsilon: float, resolution: int) -> np.ndarray:
    if resolution == 1:
        return np.array([0.5])
    return np.linspace(epsilon, 1.0 - epsilon, resolution)


def _point_metrics(q: float, r: float, theta: float, config: NetworkConfig) -> Optional[Metrics]:
    try:
        return full_metrics(make_protocol(q, r, theta), config)
    except ModelDomainError:
        return None


def _t_col(q: float, r: float, theta: float, n: int) -> float:
    return collision_profile(make_protocol(q, r, theta), n).t_col


def _project_onto_cap(
    q: float, r: float, theta: float, config: NetworkConfig, gamma: float, eps: float
) -> Optional[float]:
    """Move ``q`` down to a point with ``T_col(q', r) <= gamma`` at fixed ``r``.

    Points already under the cap are returned unchanged.  Otherwise a root of
    ``T_col(., r) = gamma`` in ``[eps, q]`` is bracketed and nudged to the
    feasible side.  ``T_col`` need not be monotone in ``q`` (it dips at small
    ``r``), so the root is a feasible point on the cap, not necessarily the
    largest one.  Returns None when even ``q = eps`` breaks the cap.
    """
    n = config.n_secondary
    if _t_col(q, r, theta, n) <= gamma:
        return q
    if _t_col(eps, r, theta, n) > gamma:
        return None
    root = brentq(lambda x: _t_col(x, r, theta, n) - gamma, eps, q, xtol=1e-13)
    while root > eps and _t_col(root, r, theta, n) > gamma:
        root = max(eps, root - 1e-13)
    return root


def _best_index(c_s: np.ndarray, mask: np.ndarray) -> tuple[int, int]:
    vals = np.where(mask, c_s, -np.inf)
    best = vals.max()
    # row-major order over (q, r) grids that increase along both axes, so
    # the first near-tie is the lexicographically smallest point
    flat = np.flatnonzero(vals >= best - TIE_TOL)[0]
    return np.unravel_index(flat, vals.shape)


def pattern_search(
    objective: Callable[[float, float], Optional[float]],
    start: tuple[float, float],
    start_value: float,
    lower: float,
    upper: float,
    step: float,
    min_step: float = 1e-6,
    project: Optional[Callable[[np.ndarray], Optional[np.ndarray]]] = None,
) -> tuple[float, float, float]:
    """Maximise ``objective`` from ``start`` by polling a shrinking stencil.

    ``objective`` returns ``None`` for rejected (infeasible) points.  When
    ``project`` is given, each trial point is first mapped through it (a
    ``None`` result rejects the trial).  Moves are accepted only on strict
    improvement, so the returned value never falls below ``start_value``.
    """
    x = np.array(start, dtype=float)
    fx = start_value
    while step >= min_step:
        improved = False
        for direction in _DIRECTIONS:
            trial = np.clip(x + step * direction, lower, upper)
            if project is not None:
                trial = project(trial)
                if trial is None:
                    continue
            if np.array_equal(trial, x):
                continue
            ft = objective(float(trial[0]), float(trial[1]))
            if ft is not None and ft > fx:
                x, fx = trial, ft
                improved = True
                break
        if not improved:
            step *= 0.5
    return float(x[0]), float(x[1]), fx


def _solve(
    problem: DesignProblem,
    gamma: Optional[float],
    resolution: int,
    refine: bool,
    grid: Optional[MetricGrid] = None,
) -> DesignSolution:
    config, theta, eps = problem.config, problem.theta, problem.epsilon
    axis = search_axis(eps, resolution)
    if grid is None:
        grid = metric_grid(axis, axis, theta, config)
    stable = grid.stable
    if not stable.any():
        raise InfeasibleError("every grid point violates t_col < t_int - t_pac", float(np.nanmin(grid.t_col)))
    feasible = stable if gamma is None else stable & (grid.t_col <= gamma)
    if not feasible.any():
        raise InfeasibleError(
            f"no grid point satisfies t_col <= {gamma}; minimum t_col is {np.nanmin(grid.t_col):.6g}",
            float(np.nanmin(grid.t_col)),
        )
    i, j = _best_index(grid.c_s, feasible)
    q, r = float(axis[i]), float(axis[j])
    m = _point_metrics(q, r, theta, config)

    if refine and m is not None and resolution > 1:
        def objective(qq: float, rr: float) -> Optional[float]:
            mm = _point_metrics(qq, rr, theta, config)
            return None if mm is None else mm.c_s

        def to_cap(x: np.ndarray) -> Optional[np.ndarray]:
            qq = _project_onto_cap(float(x[0]), float(x[1]), theta, config, gamma, eps)
            return None if qq is None else np.array([qq, x[1]])

        project = None if gamma is None else to_cap

        step = float(axis[1] - axis[0])
        q, r, _ = pattern_search(objective, (q, r), m.c_s, eps, 1.0 - eps, step, project=project)
        m = _point_metrics(q, r, theta, config)

    on_contour = gamma is not None and abs(m.t_col - gamma) <= CONTOUR_TOL
    return DesignSolution(
        q_opt=q,
        r_opt=r,
        c_s=m.c_s,
        t_col=m.t_col,
        p_s=m.p_s,
        binding=False,
        grid_resolution=resolution,
        refined=refine,
        on_contour=on_contour,
    )


def solve_unconstrained(
    problem: DesignProblem, resolution: int = DEFAULT_RESOLUTION, refine: bool = True
) -> DesignSolution:
    """Maximise ``C_s`` over ``[eps, 1-eps]^2`` ignoring any collision cap."""
    return _solve(problem, None, resolution, refine)


def solve_constrained(
    problem: DesignProblem, resolution: int = DEFAULT_RESOLUTION, refine: bool = True
) -> DesignSolution:
    """Maximise ``C_s`` subject to ``T_col <= gamma``.

    Without a ``gamma`` the problem is unconstrained.  The constraint is
    reported as binding exactly when the unconstrained optimum violates it.
    """
    axis = search_axis(problem.epsilon, resolution)
    grid = metric_grid(axis, axis, problem.theta, problem.config)
    free = _solve(problem, None, resolution, refine, grid)
    gamma = problem.gamma
    if gamma is None or free.t_col <= gamma:
        return free
    sol = _solve(problem, gamma, resolution, refine, grid)
    return DesignSolution(**{**sol.to_dict(), "binding": True})


def evaluate_mismatched(
    problem: DesignProblem,
    n_true: int,
    n_hat: int,
    resolution: int = DEFAULT_RESOLUTION,
    refine: bool = True,
) -> Metrics:
    """Design for ``n_hat`` users, then evaluate the protocol with ``n_true``."""
    cfg = problem.config
    assumed = NetworkConfig(n_hat, cfg.t_int, cfg.t_pac, cfg.traffic_model)
    sol = solve_constrained(problem.replace(config=assumed), resolution, refine)
    actual = NetworkConfig(n_true, cfg.t_int, cfg.t_pac, cfg.traffic_model)
    return full_metrics(make_protocol(sol.q_opt, sol.r_opt, problem.theta), actual)


SWEEP_AXES = ("gamma", "n", "theta", "n_hat")


def sweep(
    problem: DesignProblem,
    axis: str,
    values: Sequence[float],
    resolution: int = DEFAULT_RESOLUTION,
    refine: bool = True,
) -> SweepResult:
    """Solve the design problem once per axis value.

    Failed points are recorded with their error message instead of aborting
    the sweep.  The ``n_hat`` axis evaluates mismatched designs against the
    problem's own ``n_secondary``.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be strictly increasing")

    points = []
    cfg = problem.config
    for v in values:
        try:
            if axis == "gamma":
                g = None if math.isinf(v) else v
                res = solve_constrained(problem.replace(gamma=g), resolution, refine)
            elif axis == "n":
                c = NetworkConfig(int(v), cfg.t_int, cfg.t_pac, cfg.traffic_model)
                res = solve_constrained(problem.replace(config=c), resolution, refine)
            elif axis == "theta":
                res = solve_constrained(problem.replace(theta=v), resolution, refine)
            else:
                res = evaluate_mismatched(problem, cfg.n_secondary, int(v), resolution, refine)
            points.append(SweepPoint(v, res))
        except (InfeasibleError, ModelDomainError, ArithmeticError, ValueError) as exc:
            points.append(SweepPoint(v, None, f"{type(exc).__name__}: {exc}"))
    return SweepResult(axis=axis, points=points)
