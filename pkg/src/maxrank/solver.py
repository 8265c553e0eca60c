"""Damped Newton solver with cone safeguard, plus continuation drivers.

The iterate is updated only on interior time slices, so converged solutions
match the Dirichlet data bit for bit.  A step is accepted only if it both
reduces the residual max-norm and keeps every interior point strictly inside
the ellipticity cone; cone violations alone trigger backtracking, since the
linearization degenerates on the cone boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, InitialGuessError, SolveError
from .grid import ScalarField
from .operators import (OperatorKind, Problem, assemble_jacobian,
                        margin_blocks, matrix_value)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 50
    backtrack: float = 0.5
    min_step: float = 1e-6
    cone_safeguard: bool = True
    direct_limit: int = 3000    # unknowns at or below this use a direct factorization

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ConfigError("backtrack factor must lie in (0, 1)")


@dataclass(frozen=True)
class SolveReport:
    converged: bool
    iterations: int
    residuals: tuple[float, ...]
    cone_margin: float
    min_accepted_margin: float
    message: str = ""

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "cone_margin": self.cone_margin,
            "min_accepted_margin": self.min_accepted_margin,
            "message": self.message,
        }


@dataclass(frozen=True)
class ContinuationSchedule:
    """Monotone parameter ladder: homotopy values 0..1 or decreasing levels."""

    values: tuple[float, ...]
    mode: str  # "homotopy" | "level"

    def __post_init__(self):
        v = self.values
        if self.mode == "homotopy":
            if not v or v[0] != 0.0 or v[-1] != 1.0 or any(
                    b <= a for a, b in zip(v, v[1:])):
                raise ConfigError("homotopy schedule must increase from 0 to 1")
        elif self.mode == "level":
            if not v or any(x <= 0 for x in v) or any(
                    b >= a for a, b in zip(v, v[1:])):
                raise ConfigError("level schedule must be positive and decreasing")
        else:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")

    @staticmethod
    def homotopy(steps: int) -> "ContinuationSchedule":
        return ContinuationSchedule(tuple(np.linspace(0.0, 1.0, steps + 1)), "homotopy")

    @staticmethod
    def levels(values) -> "ContinuationSchedule":
        return ContinuationSchedule(tuple(float(v) for v in values), "level")


def _residual_values(problem: Problem, values: np.ndarray) -> np.ndarray:
    from .grid import hessian_blocks
    from .operators import augment
    M = augment(hessian_blocks(values, problem.spec), problem.spec.n)
    return matrix_value(problem.kind, M) - problem.eps


def _min_margin(problem: Problem, values: np.ndarray) -> float:
    from .grid import hessian_blocks
    from .operators import augment
    M = augment(hessian_blocks(values, problem.spec), problem.spec.n)
    return float(margin_blocks(problem.kind, M).min())


def initial_guess(problem: Problem) -> ScalarField:
    """Convex time interpolation of the boundary data plus a bulge in time.

    The bulge coefficient doubles until every interior point clears the cone;
    large time convexity always wins eventually for admissible boundary data.
    """
    spec = problem.spec
    tt = np.arange(spec.Nt + 1) * spec.ht
    base = (problem.u0[..., None] * (1.0 - tt) + problem.u1[..., None] * tt)
    bulge = tt * (tt - 1.0)
    coef = 1.0
    while coef <= 2.0**30:
        values = base + coef * bulge
        if _min_margin(problem, values) > 0.0:
            return ScalarField(spec, values)
        coef *= 2.0
    from .grid import hessian_blocks
    from .operators import augment
    M = augment(hessian_blocks(values, spec), spec.n)
    worst = np.unravel_index(np.argmin(margin_blocks(problem.kind, M)), M.shape[:-2])
    raise InitialGuessError(f"no cone entry up to coefficient 2^30; worst point {worst}")


def _linear_solve(J, rhs: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Solve J x = rhs.

    Direct factorization only for small systems: the periodic lattice makes
    sparse LU fill in badly, so larger systems go to algebraic multigrid
    accelerated Krylov, with LU as the last resort.  Every path is checked
    against the actual residual.
    """
    scale = float(np.abs(rhs).max())
    if scale == 0.0:
        return np.zeros_like(rhs)
    n = J.shape[0]
    attempts = []
    if n <= config.direct_limit:
        attempts.append("direct")
    attempts += ["amg", "direct"]
    last_err = ""
    for method in attempts:
        try:
            if method == "direct":
                sol = spla.spsolve(J.tocsc(), rhs)
            else:
                import pyamg
                ml = pyamg.smoothed_aggregation_solver(J.tocsr(), max_coarse=300)
                sol = ml.solve(rhs, tol=1e-13, accel="bicgstab", maxiter=300)
        except Exception as exc:  # fall through to the next method
            last_err = str(exc)
            continue
        if not np.all(np.isfinite(sol)):
            last_err = "non-finite solution"
            continue
        resid = float(np.abs(J @ sol - rhs).max())
        if resid <= 1e-9 * scale:
            return sol
        last_err = f"linear residual {resid:.2e} vs scale {scale:.2e}"
    raise SolveError(f"linear solve failed ({last_err}); Jacobian may be degenerate")


def newton_solve(problem: Problem, config: SolverConfig,
                 start: ScalarField) -> tuple[ScalarField, SolveReport]:
    """Damped Newton iteration from a cone-interior, boundary-exact start."""
    spec = problem.spec
    values = np.array(start.values, copy=True)
    if not (np.array_equal(values[..., 0], problem.u0)
            and np.array_equal(values[..., -1], problem.u1)):
        raise SolveError("start does not match the prescribed boundary slices")
    margin = _min_margin(problem, values)
    if margin <= 0.0:
        raise SolveError(f"start is outside the ellipticity cone (margin {margin})")
    res = _residual_values(problem, values)
    rnorm = float(np.abs(res).max())
    history = [rnorm]
    min_margin_seen = margin
    message = ""
    iterations = 0
    converged = rnorm <= config.tol
    while not converged and iterations < config.max_iter:
        field_now = ScalarField(spec, values)
        J = assemble_jacobian(problem, field_now)
        delta = _linear_solve(J, -res.ravel(), config)
        delta = delta.reshape(spec.space_shape + (spec.Nt - 1,))
        step = 1.0
        accepted = False
        while step >= config.min_step:
            trial = values.copy()
            trial[..., 1:-1] += step * delta
            if config.cone_safeguard:
                m_trial = _min_margin(problem, trial)
                if m_trial <= 0.0:
                    step *= config.backtrack
                    continue
            else:
                m_trial = _min_margin(problem, trial)
            res_trial = _residual_values(problem, trial)
            rn_trial = float(np.abs(res_trial).max())
            if rn_trial < rnorm:
                values, res, rnorm, margin = trial, res_trial, rn_trial, m_trial
                accepted = True
                break
            step *= config.backtrack
        if not accepted:
            message = f"line search collapsed below {config.min_step}"
            break
        iterations += 1
        history.append(rnorm)
        min_margin_seen = min(min_margin_seen, margin)
        converged = rnorm <= config.tol
    if not converged and not message:
        message = f"residual {rnorm:.3e} after {iterations} iterations"
    report = SolveReport(converged=converged, iterations=iterations,
                         residuals=tuple(history), cone_margin=margin,
                         min_accepted_margin=min_margin_seen, message=message)
    return ScalarField(spec, values), report


def quadratic_reference(spec) -> np.ndarray:
    """The closed-form solution 1 + t^2 of the flat quadratic problem."""
    tt = np.arange(spec.Nt + 1) * spec.ht
    return np.broadcast_to(1.0 + tt**2, spec.shape).copy()


def _stage_problem(problem: Problem, s: float) -> Problem:
    n = problem.spec.n
    eps_s = s * problem.eps + 2.0 * n * (1.0 - s)
    u0_s = s * problem.u0 + (1.0 - s)
    u1_s = s * problem.u1 + 2.0 * (1.0 - s)
    return replace(problem, eps=eps_s, u0=u0_s, u1=u1_s)


def _with_boundary(values: np.ndarray, problem: Problem) -> np.ndarray:
    out = np.array(values, copy=True)
    out[..., 0] = problem.u0
    out[..., -1] = problem.u1
    return out


def continuation_s(problem: Problem, schedule: ContinuationSchedule,
                   config: SolverConfig) -> tuple[ScalarField, list[tuple[float, SolveReport]]]:
    """Walk the homotopy from the flat quadratic problem to the target.

    Each stage scales the level and the boundary data between the explicitly
    solvable flat problem (s=0, solution 1 + t^2) and the requested one (s=1),
    warm-starting from the previous stage.  A failed stage halves the
    increment, at most six times.
    """
    if problem.kind is not OperatorKind.DONALDSON:
        raise ConfigError("the homotopy is defined for the quadratic operator only")
    if schedule.mode != "homotopy":
        raise ConfigError("continuation_s needs a homotopy schedule")
    spec = problem.spec
    reports: list[tuple[float, SolveReport]] = []
    stage0 = _stage_problem(problem, 0.0)
    current, rep = newton_solve(stage0, config, ScalarField(spec, quadratic_reference(spec)))
    reports.append((0.0, rep))
    if not rep.converged:
        raise SolveError("the flat stage failed; grid or configuration is inconsistent")
    pending = list(schedule.values[1:])
    s_done = 0.0
    halvings = 0
    while pending:
        s_next = pending[0]
        stage = _stage_problem(problem, s_next)
        start = ScalarField(spec, _with_boundary(current.values, stage))
        if _min_margin(stage, start.values) <= 0.0:
            start = initial_guess(stage)
        sol, rep = newton_solve(stage, config, start)
        if rep.converged:
            reports.append((s_next, rep))
            current = sol
            s_done = s_next
            pending.pop(0)
            continue
        halvings += 1
        if halvings > 6:
            raise SolveError(f"continuation stuck between s={s_done} and s={s_next}")
        pending.insert(0, 0.5 * (s_done + s_next))
    return current, reports


def epsilon_sweep(problem: Problem, schedule: ContinuationSchedule,
                  config: SolverConfig, verify_tol: float | None = None):
    """Solve a decreasing ladder of levels, warm-starting down the ladder.

    Returns a list of (eps, field or None, SolveReport, RankReport or None);
    failed levels fall back to a fresh initial guess once, then are recorded
    and skipped.
    """
    from .verifier import check_theorems
    if schedule.mode != "level":
        raise ConfigError("epsilon_sweep needs a level schedule")
    spec = problem.spec
    out = []
    prev: ScalarField | None = None
    for eps in schedule.values:
        stage = replace(problem, eps=eps)
        if verify_tol is None:
            tol_here = 5.0 * max(spec.hx, spec.ht) ** 2
        else:
            tol_here = verify_tol
        candidates = ([prev] if prev is not None else []) + ["fresh"]
        sol = rep = None
        for cand in candidates:
            try:
                start = initial_guess(stage) if cand == "fresh" else cand
                if _min_margin(stage, start.values) <= 0.0:
                    continue
                sol, rep = newton_solve(stage, config, start)
            except (SolveError, InitialGuessError) as exc:
                rep = SolveReport(False, 0, (), float("nan"), float("nan"), str(exc))
                continue
            if rep.converged:
                break
        if rep is None or not rep.converged:
            out.append((eps, None, rep, None))
            prev = None
            continue
        rank = check_theorems(sol, stage, tol_here)
        out.append((eps, sol, rep, rank))
        prev = sol
    return out
