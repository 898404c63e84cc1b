"""Small dense semidefinite programming core.

Minimizes a linear objective over affine PSD blocks by primal log-det
barrier path following: starting from a phase-I interior point, repeatedly
minimize t*c'x - sum_b log det(block_b(x)) - sum log(x_i - lb_i) by damped
Newton with backtracking, then increase t until the certified suboptimality
bound m_total/t (m_total = total barrier degree) meets the gap tolerance.

The solver works on margin-shifted constraints: every strict block B(x) is
replaced by B(x) - delta*I, so a returned point satisfies the original
strict inequalities with margin >= delta.  Decision variables are
pre-scaled so coefficient matrices have O(1) norms.

Problems whose feasible set is unbounded in a direction the objective does
not penalize have no analytic centers; centering then exhausts its
iteration budget.  The synthesis layer avoids this by construction (gain
norm regularization); arbitrary user problems should be bounded.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalFailureError
from .lmi import LmiProblem, check_point

logger = logging.getLogger("lipobs.sdp")

NEWTON_TOL = 1e-7           # centering decrement target
CENTER_LOOSE = 1e-3         # decrement below which a stalled center is usable
PHASE1_MARGIN_TARGET = 1e-3  # early exit: accept interior points this deep
PHASE1_SLACK_FLOOR = -2.0   # lower bound keeping the phase-I objective finite
PHASE1_BOX = 1e4            # hard box on scaled coordinates during phase I;
                            # keeps the auxiliary barrier bounded along
                            # directions the slack objective does not penalize
STALL_STEP = 1e-14
OBJECTIVE_FLOOR = -1e12
HESS_REG = 1e-12
ARMIJO = 0.01
MIN_LINESEARCH_STEP = 1e-16


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverSettings:
    tol_gap: float = 1e-8
    tol_feas: float = 1e-9
    max_outer: int = 60
    max_newton: int = 50
    barrier_reduction: float = 0.1
    line_search_backtrack: float = 0.5
    initial_t: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.barrier_reduction < 1.0):
            raise ValueError("barrier_reduction must lie in (0, 1)")
        for name in ("tol_gap", "tol_feas", "initial_t", "line_search_backtrack"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer <= 0 or self.max_newton <= 0:
            raise ValueError("iteration limits must be positive")


@dataclass
class SdpSolution:
    x: np.ndarray
    objective: float
    status: SolveStatus
    worst_margin: float
    iterations: int
    certified_gap: float
    note: str = ""


class _Barrier:
    """Barrier oracle over raw block data (already margin-shifted/scaled)."""

    def __init__(self, blocks, bounds, c, dim):
        # blocks: list of (idx int array, coeff stack (k,d,d), const (d,d))
        self.blocks = blocks
        self.bounds = bounds  # list of (index, lower)
        self.c = c
        self.dim = dim
        self.m_total = sum(cst.shape[0] for _, _, cst in blocks) + len(bounds)

    @classmethod
    def from_problem(cls, problem: LmiProblem, scale=None):
        dim = problem.layout.dim
        scale = np.ones(dim) if scale is None else scale
        blocks = []
        for b, (idx, stack) in zip(problem.blocks, problem.stacks()):
            const = b.constant.copy()
            if b.strict:
                const -= problem.margin * np.eye(b.dim)
            blocks.append((idx, stack * scale[idx, None, None], const))
        bounds = [(i, lo / scale[i]) for i, lo in problem.layout.bounds()]
        return cls(blocks, bounds, problem.objective * scale, dim)

    def block_values(self, z):
        out = []
        for idx, stack, const in self.blocks:
            V = const.copy()
            if len(idx):
                V += np.tensordot(z[idx], stack, axes=1)
            out.append(V)
        return out

    def margin(self, z):
        vals = [np.linalg.eigvalsh(V).min() for V in self.block_values(z)]
        vals += [z[i] - lo for i, lo in self.bounds]
        return min(vals) if vals else np.inf

    def cholesky_all(self, z):
        """Lower factors of every block, or None if any is not PD."""
        for i, lo in self.bounds:
            if not z[i] - lo > 0.0:
                return None
        chols = []
        for V in self.block_values(z):
            try:
                chols.append(np.linalg.cholesky(V))
            except np.linalg.LinAlgError:
                return None
        return chols

    def value(self, z, t, chols=None):
        """t*c'z plus the barrier; +inf outside the domain."""
        chols = self.cholesky_all(z) if chols is None else chols
        if chols is None:
            return np.inf
        val = t * float(self.c @ z)
        for L in chols:
            val -= 2.0 * float(np.log(np.diag(L)).sum())
        for i, lo in self.bounds:
            val -= float(np.log(z[i] - lo))
        return val

    def grad_hess(self, z, t, chols=None):
        chols = self.cholesky_all(z) if chols is None else chols
        if chols is None:
            raise NumericalFailureError("gradient requested outside the barrier domain")
        g = t * self.c.copy()
        H = np.zeros((self.dim, self.dim))
        for (idx, stack, _), L in zip(self.blocks, chols):
            if not len(idx):
                continue
            d = L.shape[0]
            Binv = cho_solve((L, True), np.eye(d), check_finite=False)
            M = np.einsum("ab,kbc->kac", Binv, stack)
            g[idx] -= np.einsum("kaa->k", M)
            H[np.ix_(idx, idx)] += np.einsum("kab,lba->kl", M, M)
        for i, lo in self.bounds:
            slack = z[i] - lo
            g[i] -= 1.0 / slack
            H[i, i] += 1.0 / slack**2
        return g, H


def _try_solve_spd(H, g):
    try:
        d = cho_solve(cho_factor(H, check_finite=False), -g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    return d if np.isfinite(d).all() else None


def _newton_direction(g, H):
    Hs = 0.5 * (H + H.T)
    d = _try_solve_spd(Hs, g)
    if d is None:
        # escalate regularization relative to the Hessian scale
        scale = max(float(np.trace(Hs)) / Hs.shape[0], 1.0)
        for reg in (HESS_REG, 1e-10, 1e-7, 1e-4):
            d = _try_solve_spd(Hs + reg * scale * np.eye(Hs.shape[0]), g)
            if d is not None:
                break
        else:
            raise NumericalFailureError(
                "Newton system factorization failed after regularization")
    decrement = float(np.sqrt(max(0.0, -float(g @ d))))
    return d, decrement


def _center(work, z, t, settings, stop_predicate=None):
    """Damped Newton to the analytic center at parameter t.

    Returns (z, newton_steps, note, decrement).  note is '' on clean
    convergence, 'stall' when line search cannot move, 'budget' when the
    iteration limit is hit; the final Newton decrement qualifies both.
    """
    note = "budget"
    steps = 0
    dec = np.inf
    for _ in range(settings.max_newton):
        chols = work.cholesky_all(z)
        if chols is None:
            raise NumericalFailureError("centering left the barrier domain")
        g, H = work.grad_hess(z, t, chols)
        d, dec = _newton_direction(g, H)
        if dec <= NEWTON_TOL:
            note = ""
            break
        f0 = work.value(z, t, chols)
        slope = float(g @ d)
        step = 1.0
        accepted = False
        while step >= MIN_LINESEARCH_STEP:
            z_new = z + step * d
            f_new = work.value(z_new, t)
            if f_new <= f0 + ARMIJO * step * slope:
                accepted = True
                break
            step *= settings.line_search_backtrack
        if not accepted:
            return z, steps, "stall", dec
        z = z_new
        steps += 1
        logger.debug(
            "newton t=%.3e obj=%.9e dec=%.3e step=%.2e margin=%.3e",
            t, float(work.c @ z), dec, step, work.margin(z),
        )
        if float(np.linalg.norm(step * d)) < STALL_STEP:
            return z, steps, "stall", dec
        if stop_predicate is not None and stop_predicate(z):
            return z, steps, "", dec
    return z, steps, note, dec


def _phase1(work, settings, z0=None):
    """Find a strictly interior point by slack minimization.

    Returns (z, newton_steps, feasible: bool).  The auxiliary problem adds a
    slack s to every block and scalar bound and minimizes s; any point with
    positive margin on the original constraints is accepted immediately.
    """
    dim = work.dim
    s_idx = dim
    blocks = []
    for idx, stack, const in work.blocks:
        d = const.shape[0]
        idx2 = np.append(idx, s_idx).astype(np.intp)
        stack2 = np.concatenate([stack, np.eye(d)[None, :, :]])
        blocks.append((idx2, stack2, const))
    for i, lo in work.bounds:
        idx2 = np.asarray([i, s_idx], dtype=np.intp)
        stack2 = np.ones((2, 1, 1))
        blocks.append((idx2, stack2, np.asarray([[-lo]])))
    # hard (slack-free) box: the slack objective leaves most coordinates
    # unpenalized and the log-det barrier otherwise rewards runaway growth
    for i in range(dim):
        blocks.append((np.asarray([i], dtype=np.intp), np.ones((1, 1, 1)),
                       np.asarray([[PHASE1_BOX]])))
        blocks.append((np.asarray([i], dtype=np.intp), -np.ones((1, 1, 1)),
                       np.asarray([[PHASE1_BOX]])))
    c = np.zeros(dim + 1)
    c[s_idx] = 1.0
    aux = _Barrier(blocks, [(s_idx, PHASE1_SLACK_FLOOR)], c, dim + 1)

    z = np.zeros(dim + 1)
    if z0 is not None:
        z[:dim] = z0
    deficit = work.margin(z[:dim])
    z[s_idx] = max(0.0, -deficit) + 1.0

    def accept(zz):
        return work.margin(zz[:dim]) >= PHASE1_MARGIN_TARGET

    if accept(z):
        return z[:dim], 0, True

    t = settings.initial_t
    total = 0
    for _ in range(settings.max_outer):
        z, steps, note, dec = _center(aux, z, t, settings, stop_predicate=accept)
        total += steps
        if accept(z):
            return z[:dim], total, True
        if note == "stall" and dec > CENTER_LOOSE and work.margin(z[:dim]) <= 0.0:
            raise NumericalFailureError(
                "phase-I Newton stalled with negative feasibility margin"
            )
        logger.info("phase1 t=%.3e slack=%.6e margin=%.3e", t, z[s_idx],
                    work.margin(z[:dim]))
        if aux.m_total / t <= settings.tol_feas * (1.0 + abs(z[s_idx])):
            break
        t /= settings.barrier_reduction
    margin = work.margin(z[:dim])
    return z[:dim], total, bool(margin > 0.0)


def _scale_vector(problem: LmiProblem):
    norms = np.ones(problem.layout.dim)
    for idx, stack in problem.stacks():
        if len(idx):
            fro = np.sqrt((stack**2).sum(axis=(1, 2)))
            np.maximum.at(norms, idx, fro)
    return 1.0 / np.maximum(1.0, norms)


def find_interior_point(problem: LmiProblem, settings: SolverSettings = None,
                        x0=None) -> SdpSolution:
    """Phase I only: a strictly interior point of the margin-shifted
    constraints, or status INFEASIBLE."""
    settings = settings or SolverSettings()
    scale = _scale_vector(problem)
    work = _Barrier.from_problem(problem, scale)
    z0 = None if x0 is None else np.asarray(x0, dtype=np.float64) / scale
    z, steps, ok = _phase1(work, settings, z0)
    x = z * scale
    rep = check_point(problem, x)
    status = SolveStatus.OPTIMAL if ok else SolveStatus.INFEASIBLE
    return SdpSolution(
        x=x,
        objective=float(problem.objective @ x),
        status=status,
        worst_margin=rep.worst_margin,
        iterations=steps,
        certified_gap=np.inf,
        note="" if ok else "phase-I slack could not be driven negative",
    )


def solve(problem: LmiProblem, settings: SolverSettings = None,
          x0=None) -> SdpSolution:
    """Barrier path-following minimization of the problem objective.

    ``x0`` optionally seeds phase I (any point; it need not be feasible).
    """
    settings = settings or SolverSettings()
    scale = _scale_vector(problem)
    work = _Barrier.from_problem(problem, scale)

    def result(z, status, iterations, gap, note=""):
        x = z * scale
        rep = check_point(problem, x)
        return SdpSolution(
            x=x,
            objective=float(problem.objective @ x),
            status=status,
            worst_margin=rep.worst_margin,
            iterations=iterations,
            certified_gap=gap,
            note=note,
        )

    z0 = None if x0 is None else np.asarray(x0, dtype=np.float64) / scale
    if z0 is not None and work.margin(z0) > 0.0:
        z, total = z0, 0
    else:
        try:
            z, total, ok = _phase1(work, settings, z0)
        except NumericalFailureError as err:
            return result(np.zeros(work.dim), SolveStatus.NUMERICAL_FAILURE, 0,
                          np.inf, str(err))
        if not ok:
            return result(z, SolveStatus.INFEASIBLE, total, np.inf,
                          "phase-I slack could not be driven negative")

    t = settings.initial_t
    gap = np.inf
    for _ in range(settings.max_outer):
        try:
            z, steps, note, dec = _center(work, z, t, settings)
        except NumericalFailureError as err:
            return result(z, SolveStatus.NUMERICAL_FAILURE, total, gap, str(err))
        total += steps
        obj = float(work.c @ z)
        gap = work.m_total / t
        logger.info("outer t=%.3e obj=%.9e gap=%.3e dec=%.2e margin=%.3e newton=%d",
                    t, obj, gap, dec, work.margin(z), steps)
        if obj < OBJECTIVE_FLOOR:
            return result(z, SolveStatus.NUMERICAL_FAILURE, total, gap,
                          "objective appears unbounded")
        if gap <= settings.tol_gap * (1.0 + abs(obj)):
            if dec > CENTER_LOOSE:
                return result(z, SolveStatus.NUMERICAL_FAILURE, total, gap,
                              "final centering did not converge "
                              f"(decrement {dec:.2e})")
            return result(z, SolveStatus.OPTIMAL, total, gap)
        if note == "stall" and dec > CENTER_LOOSE:
            return result(z, SolveStatus.NUMERICAL_FAILURE, total, gap,
                          "Newton line search stalled before reaching the gap target")
        t /= settings.barrier_reduction
    return result(z, SolveStatus.MAX_ITERATIONS, total, gap,
                  "outer iteration budget exhausted")


def barrier_value(problem: LmiProblem, x, t: float) -> float:
    """t*c'x - sum log det(shifted blocks) - sum log(x_i - lb_i); +inf
    outside the domain.  Unscaled: operates on the problem's own variables."""
    work = _Barrier.from_problem(problem)
    return work.value(np.asarray(x, dtype=np.float64), t)


def newton_step(problem: LmiProblem, x, t: float):
    """One Newton step of the barrier objective at strictly feasible x.

    Returns (direction, decrement) in the problem's own variables.
    """
    work = _Barrier.from_problem(problem)
    x = np.asarray(x, dtype=np.float64)
    chols = work.cholesky_all(x)
    if chols is None:
        raise NumericalFailureError("newton_step requires a strictly feasible point")
    g, H = work.grad_hess(x, t, chols)
    return _newton_direction(g, H)


def barrier_gradient(problem: LmiProblem, x, t: float):
    """Gradient of barrier_value at strictly feasible x (finite-difference
    oracle target)."""
    work = _Barrier.from_problem(problem)
    x = np.asarray(x, dtype=np.float64)
    chols = work.cholesky_all(x)
    if chols is None:
        raise NumericalFailureError("gradient requires a strictly feasible point")
    g, _ = work.grad_hess(x, t, chols)
    return g
