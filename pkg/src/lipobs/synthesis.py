"""Observer synthesis: build each design's LMI problem from a plant, solve
it with the embedded SDP core, extract the gain and performance indices, and
verify the result against the constraints it was designed under.

Design routes:

* ``design_max_lipschitz``  - maximize the admissible Lipschitz constant
  (gamma*) subject to quadratic stability of the error dynamics.
* ``design_with_decay``     - same with a guaranteed exponential decay rate.
* ``design_hinf``           - minimize the certified L2 gain bound mu* from
  the disturbance to the performance output z = H e, at a given Lipschitz
  constant and decay rate.
* ``design_multiobjective`` - scalarized trade-off between gamma* and mu*.
* ``design_feasibility``    - certify prescribed (gamma, mu) levels without
  optimizing anything.
* ``sequential_design``     - gamma* maximization followed by mu*
  minimization at the largest Lipschitz level the H-inf constraints admit.

All returned designs are verified (``verify_design``) before they are
handed back; the solver's strict-inequality margin delta makes every
certificate checkable.
"""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import lmi, sdp
from .errors import (
    DimensionError,
    InfeasibleError,
    ModelingError,
    NumericalFailureError,
)

DELTA = lmi.DEFAULT_MARGIN

# Tiny objective weight on the gain-norm bound variable.  The optimal faces
# of the stability LMIs are unbounded in F (output injection can always be
# made more aggressive), which a log-det barrier cannot center on; bounding
# sigma_max(F) through a weakly penalized epigraph variable keeps the solve
# well-posed.  The objective distortion is orders of magnitude below the
# reported tolerances.
GAIN_REG = 1e-6

# The performance indices are typically approached only as the certificate P
# degenerates (and the gain blows up).  Design operations therefore back the
# optimized index off by this relative slack and re-solve minimizing the
# gain-norm bound, returning a well-conditioned certificate at the slightly
# weaker level.
POLISH_SLACK = 0.01


def sigma_max(M) -> float:
    """Largest singular value via the eigenvalues of M'M."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    return float(np.sqrt(max(np.linalg.eigvalsh(M.T @ M).max(), 0.0)))


def observability_rank(A, C) -> int:
    A = np.asarray(A, dtype=np.float64)
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    n = A.shape[0]
    rows = [C]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    return int(np.linalg.matrix_rank(np.vstack(rows)))


@dataclass(frozen=True)
class PlantModel:
    """State-space data x' = A x + phi(x,u) + B w, y = C x + D w, z = H e.

    B/D/H default to zero maps (no disturbance path, no performance output).
    ``gamma`` is the plant's Lipschitz constant over ``region`` when known.
    ``inv_transform`` records T for plants produced by a coordinate change
    xbar = T x, so gains can be mapped back.
    """

    A: np.ndarray
    C: np.ndarray
    B: np.ndarray = None
    D: np.ndarray = None
    H: np.ndarray = None
    phi: object = None
    gamma: float = None
    region: object = None
    m: int = 0
    transform: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if C.shape[1] != n:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {n}")
        B = np.zeros((n, 1)) if self.B is None else np.atleast_2d(
            np.asarray(self.B, dtype=np.float64))
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        p, q = C.shape[0], B.shape[1]
        D = np.zeros((p, q)) if self.D is None else np.atleast_2d(
            np.asarray(self.D, dtype=np.float64))
        if D.shape != (p, q):
            raise DimensionError(f"D must be {p}x{q}, got {D.shape}")
        H = np.zeros((1, n)) if self.H is None else np.atleast_2d(
            np.asarray(self.H, dtype=np.float64))
        if H.shape[1] != n:
            raise DimensionError(f"H has {H.shape[1]} columns, expected {n}")
        if self.phi is not None and (self.phi.n != n or self.phi.m != self.m):
            raise DimensionError("phi dimensions do not match the plant")
        if self.gamma is not None and not self.gamma > 0:
            raise DimensionError("gamma must be positive when given")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D), ("H", H)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def r(self):
        return self.H.shape[0]

    @property
    def obsv_rank(self):
        return observability_rank(self.A, self.C)


@dataclass
class ObserverDesign:
    """Gain, Lyapunov certificate and performance indices of one design."""

    L: np.ndarray
    P: np.ndarray
    epsilon: float
    theorem: str
    beta: float = 0.0
    alpha: float = None
    xi: float = None
    zeta: float = None
    gamma_star: float = None
    mu_star: float = None
    verification: object = field(default=None, repr=False)

    @property
    def kappa_p(self):
        eig = np.linalg.eigvalsh(self.P)
        return float(eig.max() / eig.min())


@dataclass(frozen=True)
class CheckResult:
    name: str
    margin: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list
    passed: bool
    kappa_p: float
    spectral_abscissa: float

    def __str__(self):
        lines = [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22} margin={c.margin:+.3e}"
            + (f"  ({c.detail})" if c.detail else "")
            for c in self.checks
        ]
        lines.append(f"kappa(P) = {self.kappa_p:.6g}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


# --- LMI problem builders ----------------------------------------------------

def _add_sym_terms(block, layout, fixed, name, coeff_fn):
    """coeff_fn must be linear in its matrix argument."""
    if name in fixed:
        block.constant += coeff_fn(np.asarray(fixed[name], dtype=np.float64))
    else:
        for idx, E in layout.sym_basis(name):
            block.add(idx, coeff_fn(E))


def _add_mat_terms(block, layout, fixed, name, shape, coeff_fn):
    if name in fixed:
        block.constant += coeff_fn(np.asarray(fixed[name], dtype=np.float64))
    else:
        rows, cols = shape
        for idx, r, c in layout.mat_basis(name):
            G = np.zeros((rows, cols))
            G[r, c] = 1.0
            block.add(idx, coeff_fn(G))


def _add_scalar_term(block, layout, fixed, name, coeff):
    if name in fixed:
        block.constant += float(fixed[name]) * coeff
    else:
        block.add(layout.offsets[name], coeff)


def _layout_for(plant, scalars, fixed):
    """P, F plus the requested scalar variables, skipping fixed ones."""
    n, p = plant.n, plant.p
    specs = []
    if "P" not in fixed:
        specs.append(lmi.VarSpec("P", kind="sym", rows=n, cols=n))
    if "F" not in fixed:
        specs.append(lmi.VarSpec("F", kind="mat", rows=n, cols=p))
    for name, lower in scalars:
        if name not in fixed:
            specs.append(lmi.VarSpec(name, lower=lower))
    return lmi.DecisionLayout(specs)


def _stability_block(plant, layout, fixed, beta, use_alpha):
    """Negated Lyapunov inequality: -(A'P+PA+2bP) + C'F'+FC - Q - eps*I >= dI
    with Q = I (use_alpha False) or alpha*I."""
    n = plant.n
    A, C = plant.A, plant.C
    blk = lmi.AffineBlock(n, strict=True, name="stability")
    if not use_alpha:
        blk.constant -= np.eye(n)
    _add_sym_terms(blk, layout, fixed, "P",
                   lambda E: -(A.T @ E + E @ A) - 2.0 * beta * E)
    _add_mat_terms(blk, layout, fixed, "F", (n, plant.p),
                   lambda G: G @ C + (G @ C).T)
    _add_scalar_term(blk, layout, fixed, "eps", -np.eye(n))
    if use_alpha:
        _add_scalar_term(blk, layout, fixed, "alpha", -np.eye(n))
    return blk


def _p_cap_block(plant, layout, fixed, xi_scale=None, const_diag=None):
    """[[ c I, P ], [ P, c I ]] >= dI with c either xi_scale*xi or a
    constant; caps sigma_max(P)."""
    n = plant.n
    blk = lmi.AffineBlock(2 * n, strict=True, name="p_cap")
    if const_diag is not None:
        blk.constant += const_diag * np.eye(2 * n)
    else:
        _add_scalar_term(blk, layout, fixed, "xi", xi_scale * np.eye(2 * n))

    def offdiag(E):
        M = np.zeros((2 * n, 2 * n))
        M[:n, n:] = E
        M[n:, :n] = E
        return M

    _add_sym_terms(blk, layout, fixed, "P", offdiag)
    return blk


def _p_pd_block(plant, layout, fixed):
    blk = lmi.AffineBlock(plant.n, strict=True, name="p_positive")
    _add_sym_terms(blk, layout, fixed, "P", lambda E: E)
    return blk


def _gain_bound_block(plant, layout, fixed):
    """[[ tau I, F ], [ F', tau I ]] >= 0: tau bounds sigma_max(F)."""
    n, p = plant.n, plant.p
    blk = lmi.AffineBlock(n + p, strict=False, name="gain_bound")
    _add_scalar_term(blk, layout, fixed, "tau", np.eye(n + p))

    def offdiag(G):
        M = np.zeros((n + p, n + p))
        M[:n, n:] = G
        M[n:, :n] = G.T
        return M

    _add_mat_terms(blk, layout, fixed, "F", (n, p), offdiag)
    return blk


def _hinf_perf_block(plant, layout, fixed, gamma):
    """Negated disturbance/performance coupling block, size n+q:
    [[ alpha I - H'H - (gamma+1/gamma)/2 I,  -(PB - FD) ],
     [ -(PB - FD)',                          zeta I     ]] >= dI."""
    n, q = plant.n, plant.q
    B, D, H = plant.B, plant.D, plant.H
    blk = lmi.AffineBlock(n + q, strict=True, name="hinf_performance")
    blk.constant[:n, :n] -= H.T @ H + 0.5 * (gamma + 1.0 / gamma) * np.eye(n)

    def top(M):
        out = np.zeros((n + q, n + q))
        out[:n, :n] = M
        return out

    def couple(Mnq):
        out = np.zeros((n + q, n + q))
        out[:n, n:] = Mnq
        out[n:, :n] = Mnq.T
        return out

    _add_scalar_term(blk, layout, fixed, "alpha", top(np.eye(n)))
    _add_sym_terms(blk, layout, fixed, "P", lambda E: couple(-E @ B))
    _add_mat_terms(blk, layout, fixed, "F", (n, plant.p),
                   lambda G: couple(G @ D))
    zcoef = np.zeros((n + q, n + q))
    zcoef[n:, n:] = np.eye(q)
    _add_scalar_term(blk, layout, fixed, "zeta", zcoef)
    return blk


def _tradeoff_perf_block(plant, layout, fixed):
    """Negated 3x3 trade-off block, size 2n+q, linear in xi:
    [[ alpha I - H'H - xi/2 I,  -I,      -(PB - FD) ],
     [ -I,                      2 xi I,  0          ],
     [ -(PB - FD)',             0,       zeta I     ]] >= dI."""
    n, q = plant.n, plant.q
    B, D, H = plant.B, plant.D, plant.H
    dim = 2 * n + q
    blk = lmi.AffineBlock(dim, strict=True, name="tradeoff_performance")
    blk.constant[:n, :n] -= H.T @ H
    blk.constant[:n, n:2 * n] -= np.eye(n)
    blk.constant[n:2 * n, :n] -= np.eye(n)

    xicoef = np.zeros((dim, dim))
    xicoef[:n, :n] = -0.5 * np.eye(n)
    xicoef[n:2 * n, n:2 * n] = 2.0 * np.eye(n)
    _add_scalar_term(blk, layout, fixed, "xi", xicoef)

    acoef = np.zeros((dim, dim))
    acoef[:n, :n] = np.eye(n)
    _add_scalar_term(blk, layout, fixed, "alpha", acoef)

    def couple(Mnq):
        out = np.zeros((dim, dim))
        out[:n, 2 * n:] = Mnq
        out[2 * n:, :n] = Mnq.T
        return out

    _add_sym_terms(blk, layout, fixed, "P", lambda E: couple(-E @ B))
    _add_mat_terms(blk, layout, fixed, "F", (n, plant.p),
                   lambda G: couple(G @ D))
    zcoef = np.zeros((dim, dim))
    zcoef[2 * n:, 2 * n:] = np.eye(q)
    _add_scalar_term(blk, layout, fixed, "zeta", zcoef)
    return blk


def _objective(layout, weights):
    c = np.zeros(layout.dim)
    for name, w in weights.items():
        if name in layout.offsets:
            c[layout.offsets[name]] = w
    return c


def _cap_block(layout, fixed, weights, cap):
    """1x1 block [cap - sum_i w_i v_i] >= 0 over the index scalars."""
    blk = lmi.AffineBlock(1, constant=[[cap]], strict=False, name="index_cap")
    for name, w in weights.items():
        _add_scalar_term(blk, layout, fixed, name, np.asarray([[-w]]))
    return blk


def _p_floor_block(plant, layout, fixed):
    """P - nu I >= 0: nu is a maximized floor on lambda_min(P)."""
    blk = lmi.AffineBlock(plant.n, strict=False, name="p_floor")
    _add_sym_terms(blk, layout, fixed, "P", lambda E: E)
    _add_scalar_term(blk, layout, fixed, "nu", -np.eye(plant.n))
    return blk


def _finish_problem(layout, blocks, weights, plant, fixed, gain_reg, polish_cap):
    """Common tail of the builders: gain-norm block, optional polish mode.

    polish_cap = (caps, tau_cap) switches to a polishing problem with each
    performance index scalar capped near its optimum.  tau_cap = None
    minimizes the gain-norm bound sigma_max(F) <= tau; otherwise tau is
    capped and the floor nu on lambda_min(P) is maximized, picking a
    well-conditioned certificate (hence a moderate gain L = inv(P) F)
    among the near-optimal designs.
    """
    if polish_cap is not None:
        caps, tau_cap = polish_cap
        for name, cap in caps.items():
            blocks.append(_cap_block(layout, fixed, {name: 1.0}, cap))
        if tau_cap is None:
            weights = {"tau": 1.0}
        else:
            blocks.append(_p_floor_block(plant, layout, fixed))
            blocks.append(_cap_block(layout, fixed, {"tau": 1.0}, tau_cap))
            weights = {"nu": -1.0}
    if gain_reg:
        blocks.append(_gain_bound_block(plant, layout, fixed))
        weights = dict(weights)
        if "tau" not in weights and polish_cap is None:
            weights["tau"] = GAIN_REG
    return lmi.assemble(layout, _objective(layout, weights), blocks, DELTA)


def build_lipschitz_problem(plant, beta=0.0, fixed=None, gain_reg=True,
                            polish_cap=None):
    """gamma* maximization LMIs: stability, the xi cap on sigma_max(P),
    P > 0; objective min xi (+ gain-norm regularization).

    ``polish_cap=(weights, cap)`` switches to the gain-polishing problem:
    the weighted index scalars are capped and sigma_max(F) is minimized.
    """
    fixed = dict(fixed or {})
    scalars = [("eps", DELTA), ("xi", DELTA)]
    if gain_reg:
        scalars.append(("tau", None))
    if polish_cap is not None and polish_cap[1] is not None:
        scalars.append(("nu", 0.0))
    layout = _layout_for(plant, scalars, fixed)
    blocks = [
        _stability_block(plant, layout, fixed, beta, use_alpha=False),
        _p_cap_block(plant, layout, fixed, xi_scale=0.5),
        _p_pd_block(plant, layout, fixed),
    ]
    return _finish_problem(layout, blocks, {"xi": 1.0}, plant, fixed,
                           gain_reg, polish_cap)


def build_hinf_problem(plant, beta, gamma, fixed=None, gain_reg=True,
                       polish_cap=None):
    """mu* minimization LMIs at a given Lipschitz constant gamma."""
    fixed = dict(fixed or {})
    sH = sigma_max(plant.H)
    if sH >= 1.0:
        raise ModelingError(
            f"sigma_max(H) = {sH:.6g} must be < 1 for the P cap to be positive"
        )
    scalars = [("eps", DELTA), ("alpha", 1.0 + DELTA), ("zeta", DELTA)]
    if gain_reg:
        scalars.append(("tau", None))
    if polish_cap is not None and polish_cap[1] is not None:
        scalars.append(("nu", 0.0))
    layout = _layout_for(plant, scalars, fixed)
    cap = (1.0 - sH**2) / (2.0 * gamma)
    blocks = [
        _stability_block(plant, layout, fixed, beta, use_alpha=True),
        _p_cap_block(plant, layout, fixed, const_diag=cap),
        _p_pd_block(plant, layout, fixed),
        _hinf_perf_block(plant, layout, fixed, gamma),
    ]
    return _finish_problem(layout, blocks, {"zeta": 1.0}, plant, fixed,
                           gain_reg, polish_cap)


def build_tradeoff_problem(plant, beta, lam, fixed=None, gain_reg=True,
                           polish_cap=None):
    """Scalarized gamma*/mu* LMIs; objective min lam*xi + (1-lam)*zeta.

    The scalarization weights are floored at GAIN_REG so no decision scalar
    is left entirely unpenalized (a weight of exactly zero would let the
    barrier drift along that coordinate)."""
    fixed = dict(fixed or {})
    sH = sigma_max(plant.H)
    if sH >= 1.0:
        raise ModelingError(
            f"sigma_max(H) = {sH:.6g} must be < 1 for the P cap to be positive"
        )
    scalars = [("eps", DELTA), ("alpha", 1.0 + DELTA), ("xi", DELTA),
               ("zeta", DELTA)]
    if gain_reg:
        scalars.append(("tau", None))
    if polish_cap is not None and polish_cap[1] is not None:
        scalars.append(("nu", 0.0))
    layout = _layout_for(plant, scalars, fixed)
    blocks = [
        _stability_block(plant, layout, fixed, beta, use_alpha=True),
        _p_cap_block(plant, layout, fixed, xi_scale=0.5 * (1.0 - sH**2)),
        _p_pd_block(plant, layout, fixed),
        _tradeoff_perf_block(plant, layout, fixed),
    ]
    weights = {"xi": max(lam, GAIN_REG), "zeta": max(1.0 - lam, GAIN_REG)}
    return _finish_problem(layout, blocks, weights, plant, fixed,
                           gain_reg, polish_cap)


# --- solution extraction ------------------------------------------------------

def _raise_for_status(sol, context):
    if sol.status == sdp.SolveStatus.OPTIMAL:
        return
    if sol.status == sdp.SolveStatus.INFEASIBLE:
        raise InfeasibleError(f"{context}: {sol.note or 'constraints infeasible'}")
    raise NumericalFailureError(f"{context}: {sol.status.value}; {sol.note}")


def _extract(plant, problem, sol, tag, beta, fixed=None, gamma_star=None,
             mu_star=None):
    fixed = fixed or {}
    lay = problem.layout

    def get(name):
        if name in fixed:
            return fixed[name]
        if name in lay.offsets:
            return lay.unpack(sol.x, name)
        return None

    P = np.asarray(get("P"))
    F = np.asarray(get("F"))
    L = np.linalg.solve(P, F)
    xi = get("xi")
    zeta = get("zeta")
    if gamma_star is None and xi is not None:
        gamma_star = 1.0 / xi
    if mu_star is None and zeta is not None:
        mu_star = math.sqrt(zeta)
    return ObserverDesign(
        L=L,
        P=P,
        epsilon=float(get("eps")),
        theorem=tag,
        beta=beta,
        alpha=None if get("alpha") is None else float(get("alpha")),
        xi=None if xi is None else float(xi),
        zeta=None if zeta is None else float(zeta),
        gamma_star=None if gamma_star is None else float(gamma_star),
        mu_star=None if mu_star is None else float(mu_star),
    )


def _finalize(plant, design):
    report = verify_design(plant, design)
    design.verification = report
    if not report.passed:
        raise NumericalFailureError(
            "returned design failed verification:\n" + str(report)
        )
    return design


# --- design operations --------------------------------------------------------

def _polish_conditioning(build, fixed, layout1, x1, caps, settings):
    """Two-substage polish at capped performance indices: first minimize the
    gain-norm bound tau >= sigma_max(F), then cap tau and maximize the floor
    on lambda_min(P).  Both solves are warm-started from the previous point
    (strictly inside the capped set), so no phase I is needed."""
    values = {s.name: layout1.unpack(x1, s.name) for s in layout1.specs}
    if "tau" not in values:
        values["tau"] = sigma_max(values["F"]) * 1.01 + 1e-3
    loose = dataclasses.replace(settings or sdp.SolverSettings(), tol_gap=1e-5)

    gain_stage = build(fixed=fixed, gain_reg=True, polish_cap=(caps, None))
    gsol = sdp.solve(gain_stage, loose, x0=gain_stage.layout.pack(values))
    if gsol.status == sdp.SolveStatus.OPTIMAL:
        values = {s.name: gain_stage.layout.unpack(gsol.x, s.name)
                  for s in gain_stage.layout.specs}

    tau_cap = 2.0 * values["tau"] + 1.0
    values["tau"] = values["tau"] * 1.01 + 1e-3
    values["nu"] = 0.5 * float(np.linalg.eigvalsh(values["P"]).min())
    polished = build(fixed=fixed, gain_reg=True, polish_cap=(caps, tau_cap))
    psol = sdp.solve(polished, loose, x0=polished.layout.pack(values))
    return polished, psol


def _optimize_and_polish(plant, build, index_weights, context, settings,
                         fixed=None):
    """Two-stage solve: optimize the performance index, then re-solve with
    each index capped at (1 + POLISH_SLACK) of its optimum while improving
    the certificate conditioning.  Returns (problem, solution) of the stage
    actually used."""
    fixed = dict(fixed or {})
    problem = build(fixed=fixed, gain_reg=True, polish_cap=None)
    sol = sdp.solve(problem, settings)
    _raise_for_status(sol, context)
    free = [k for k in index_weights if k not in fixed]
    if free:
        lay = problem.layout
        caps = {k: (1.0 + POLISH_SLACK) * lay.unpack(sol.x, k) for k in free}
        polished, psol = _polish_conditioning(build, fixed, lay, sol.x, caps,
                                              settings)
        if psol.status == sdp.SolveStatus.OPTIMAL:
            return polished, psol
    return problem, sol


def design_max_lipschitz(plant, settings=None) -> ObserverDesign:
    """Maximize the admissible Lipschitz constant; gamma* = 1/xi*."""

    def build(**kw):
        return build_lipschitz_problem(plant, beta=0.0, **kw)

    problem, sol = _optimize_and_polish(plant, build, {"xi": 1.0},
                                        "max-Lipschitz design", settings)
    return _finalize(plant, _extract(plant, problem, sol, "T1", 0.0))


def design_with_decay(plant, beta, settings=None) -> ObserverDesign:
    """Maximize gamma* subject to error decay rate beta > 0."""
    if not beta > 0:
        raise ModelingError("decay rate beta must be positive; "
                            "use design_max_lipschitz for beta = 0")

    def build(**kw):
        return build_lipschitz_problem(plant, beta=beta, **kw)

    problem, sol = _optimize_and_polish(
        plant, build, {"xi": 1.0}, f"decay-rate design (beta={beta:g})",
        settings)
    return _finalize(plant, _extract(plant, problem, sol, "T3", beta))


def design_hinf(plant, beta=0.0, gamma=None, settings=None) -> ObserverDesign:
    """Minimize the certified L2 gain mu* = sqrt(zeta*) at Lipschitz level
    gamma (defaults to plant.gamma).  beta = 0 drops the decay term."""
    gamma = plant.gamma if gamma is None else gamma
    if gamma is None or not gamma > 0:
        raise ModelingError("design_hinf needs a positive Lipschitz constant "
                            "(plant.gamma or explicit gamma)")

    def build(**kw):
        return build_hinf_problem(plant, beta, gamma, **kw)

    problem, sol = _optimize_and_polish(
        plant, build, {"zeta": 1.0},
        f"H-inf design (gamma={gamma:g}, beta={beta:g})", settings)
    design = _extract(plant, problem, sol, "T4", beta, gamma_star=gamma)
    return _finalize(plant, design)


def design_multiobjective(plant, beta, lam, settings=None) -> ObserverDesign:
    """Scalarized joint design: min lam*xi + (1-lam)*zeta.

    lam = 0 requires plant.gamma and pins xi = 1/gamma (pure mu*
    minimization at the plant's own Lipschitz constant)."""
    if not 0.0 <= lam <= 1.0:
        raise ModelingError(f"lambda must lie in [0, 1], got {lam}")
    fixed = {}
    if lam == 0.0:
        if plant.gamma is None:
            raise ModelingError("lambda = 0 needs plant.gamma to pin xi")
        fixed["xi"] = 1.0 / plant.gamma

    def build(**kw):
        return build_tradeoff_problem(plant, beta, lam, **kw)

    weights = {"xi": max(lam, GAIN_REG), "zeta": max(1.0 - lam, GAIN_REG)}
    problem, sol = _optimize_and_polish(
        plant, build, weights,
        f"trade-off design (lambda={lam:g}, beta={beta:g})", settings,
        fixed=fixed)
    design = _extract(plant, problem, sol, "T5", beta, fixed=fixed)
    return _finalize(plant, design)


def design_feasibility(plant, gamma, mu=None, beta=0.0,
                       settings=None) -> ObserverDesign:
    """Certify prescribed performance levels by pure feasibility (phase I).

    xi = 1/gamma (and zeta = mu^2 when mu is given) enter as constants."""
    if not gamma > 0:
        raise ModelingError("gamma must be positive")
    if mu is not None and not mu > 0:
        raise ModelingError("mu must be positive when given")
    if mu is None:
        fixed = {"xi": 1.0 / gamma}

        def build(**kw):
            return build_lipschitz_problem(plant, beta=beta, **kw)
    else:
        fixed = {"zeta": mu**2}

        def build(**kw):
            return build_hinf_problem(plant, beta, gamma, **kw)

    problem = build(fixed=fixed, gain_reg=False)
    sol = sdp.find_interior_point(problem, settings)
    _raise_for_status(sol, f"feasibility design (gamma={gamma:g}"
                           + (f", mu={mu:g}" if mu is not None else "") + ")")
    polished, psol = _polish_conditioning(build, fixed, problem.layout, sol.x,
                                          {}, settings)
    if psol.status == sdp.SolveStatus.OPTIMAL:
        problem, sol = polished, psol
    design = _extract(plant, problem, sol, "Feasibility", beta, fixed=fixed,
                      gamma_star=gamma, mu_star=mu)
    return _finalize(plant, design)


def hinf_feasible(plant, beta, gamma, settings=None) -> bool:
    """Whether the H-inf constraint set admits any interior point at gamma."""
    try:
        problem = build_hinf_problem(plant, beta, gamma, gain_reg=False)
    except ModelingError:
        raise
    sol = sdp.find_interior_point(problem, settings)
    return sol.status == sdp.SolveStatus.OPTIMAL


def sequential_design(plant, beta, settings=None,
                      bisection_rtol=0.05) -> ObserverDesign:
    """Maximize gamma*, then minimize mu* at the largest Lipschitz level the
    H-inf constraints accept (capped by the stage-1 gamma*).

    The performance LMIs tighten the admissible P cap by (1 - sigma_max(H)^2)
    and require alpha > 1, so they are never feasible at exactly the stage-1
    optimum; the level is found by bisection from below.
    """
    stage1 = design_with_decay(plant, beta, settings) if beta > 0 else (
        design_max_lipschitz(plant, settings))
    hi = stage1.gamma_star
    if hinf_feasible(plant, beta, hi, settings):
        lo = hi
    else:
        lo = None
        g = hi
        for _ in range(40):
            g *= 0.5
            if hinf_feasible(plant, beta, g, settings):
                lo = g
                break
        if lo is None:
            raise InfeasibleError(
                "H-inf constraints admit no Lipschitz level below the "
                "stage-1 optimum")
        g_lo, g_hi = lo, min(2.0 * lo, hi)
        while (g_hi - g_lo) > bisection_rtol * g_lo:
            mid = 0.5 * (g_lo + g_hi)
            if hinf_feasible(plant, beta, mid, settings):
                g_lo = mid
            else:
                g_hi = mid
        lo = g_lo
    # right at the feasibility edge the mu solve is badly conditioned;
    # back away until it goes through
    last = None
    for _ in range(5):
        try:
            return design_hinf(plant, beta=beta, gamma=lo, settings=settings)
        except NumericalFailureError as err:
            last = err
            lo *= 0.95
    raise NumericalFailureError(
        f"mu-stage solve kept failing while backing off gamma: {last}")


def robustness_margin(design: ObserverDesign, gamma_actual: float) -> float:
    """Tolerated additive Lipschitz uncertainty: gamma* - gamma_actual
    (negative means the design does not certify the actual plant)."""
    if design.gamma_star is None:
        raise ModelingError("design carries no gamma*")
    return float(design.gamma_star - gamma_actual)


# --- verification --------------------------------------------------------------

def _rebuild_for_verification(plant, design):
    fixed = {}
    if design.theorem == "Feasibility":
        if design.mu_star is None:
            fixed = {"xi": design.xi}
            return build_lipschitz_problem(plant, beta=design.beta,
                                           fixed=fixed, gain_reg=False), fixed
        fixed = {"zeta": design.zeta}
        return build_hinf_problem(plant, design.beta, design.gamma_star,
                                  fixed=fixed, gain_reg=False), fixed
    if design.theorem in ("T1", "T3"):
        return build_lipschitz_problem(plant, beta=design.beta,
                                       gain_reg=False), fixed
    if design.theorem == "T4":
        return build_hinf_problem(plant, design.beta, design.gamma_star,
                                  gain_reg=False), fixed
    if design.theorem == "T5":
        # lambda only weighs the objective; constraints are lambda-free
        return build_tradeoff_problem(plant, design.beta, 0.5,
                                      gain_reg=False), fixed
    raise ModelingError(f"unknown design tag {design.theorem!r}")


def verify_design(plant, design: ObserverDesign) -> VerifyReport:
    """Re-check every constraint the design was produced under, plus the
    derived guarantees: the P cap implied by gamma*, the spectral abscissa
    of A - LC against -beta, and positive definiteness of P."""
    checks = []
    problem, fixed = _rebuild_for_verification(plant, design)
    values = {"P": design.P, "F": design.P @ design.L, "eps": design.epsilon}
    if design.alpha is not None:
        values["alpha"] = design.alpha
    for name in ("xi", "zeta"):
        v = getattr(design, name)
        if v is not None and name not in fixed:
            values[name] = v
    x = problem.layout.pack(values)
    rep = lmi.check_point(problem, x)
    checks.append(CheckResult(
        name="lmi_blocks",
        margin=rep.worst_margin,
        passed=rep.feasible,
        detail=f"min margin over {len(problem.blocks)} blocks after shift",
    ))

    eigP = np.linalg.eigvalsh(design.P)
    checks.append(CheckResult(
        name="p_positive_definite",
        margin=float(eigP.min()),
        passed=bool(eigP.min() > 0.0),
    ))

    if design.gamma_star is not None:
        cap = 1.0 / (2.0 * design.gamma_star) + 1e-6
        checks.append(CheckResult(
            name="p_cap_from_gamma",
            margin=float(cap - eigP.max()),
            passed=bool(eigP.max() < cap),
            detail="lambda_max(P) < 1/(2 gamma*) + 1e-6",
        ))

    acl = plant.A - design.L @ plant.C
    abscissa = float(np.linalg.eigvals(acl).real.max())
    checks.append(CheckResult(
        name="spectral_abscissa",
        margin=float(-design.beta - abscissa),
        passed=bool(abscissa < -design.beta),
        detail=f"max Re eig(A-LC) = {abscissa:.6g} vs -beta = {-design.beta:g}",
    ))

    kappa = float(eigP.max() / eigP.min()) if eigP.min() > 0 else np.inf
    return VerifyReport(
        checks=checks,
        passed=all(c.passed for c in checks),
        kappa_p=kappa,
        spectral_abscissa=abscissa,
    )


def lyapunov_certificate(plant, L, beta=0.0, rhs_scale=2.0):
    """Certificate for a fixed gain: P solving
    (A - LC + beta I)' P + P (A - LC + beta I) = -rhs_scale * I.

    Independent of the SDP core (direct Lyapunov solve); used to validate
    externally supplied gains.  rhs_scale > 1 leaves room for the eps margin.
    """
    L = np.asarray(L, dtype=np.float64).reshape(plant.n, plant.p)
    M = plant.A - L @ plant.C + beta * np.eye(plant.n)
    if np.linalg.eigvals(M).real.max() >= 0:
        raise ModelingError("A - LC + beta*I is not Hurwitz; no certificate")
    Q = -rhs_scale * np.eye(plant.n)
    P = solve_continuous_lyapunov(M.T, Q)
    return 0.5 * (P + P.T)
