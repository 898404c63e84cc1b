"""Fixed-step RK4 co-integration of plant and observer, error/performance
signals, and empirical checks of the certified guarantees (decay bound,
L2 gain, tolerance to plant-side nonlinear uncertainty)."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import expr, kernels
from .errors import DimensionError, DomainError, SimulationBlowup

logger = logging.getLogger("lipobs.sim")

DECAY_TOL = 1e-6  # multiplicative slack on the decay bound


@dataclass
class SimulationConfig:
    x0: np.ndarray
    xhat0: np.ndarray
    t_end: float = 10.0
    dt: float = 1e-3
    disturbance: list = None   # time expressions, one per disturbance channel
    u: list = None             # time expressions, one per control input

    def __post_init__(self):
        if not self.dt > 0:
            raise DimensionError("dt must be positive")
        if self.t_end < self.dt:
            raise DimensionError("t_end must be at least one step")
        self.x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
        self.xhat0 = np.asarray(self.xhat0, dtype=np.float64).reshape(-1)


@dataclass
class SimulationTrace:
    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    e: np.ndarray
    w: np.ndarray
    z: np.ndarray
    e_norm: np.ndarray
    blew_up_at: float = None

    @property
    def ok(self):
        return self.blew_up_at is None


def _pack_time_exprs(exprs, q, what):
    if exprs is None:
        return expr.pack_programs([])
    if len(exprs) != q:
        raise DimensionError(f"{what} needs {q} component(s), got {len(exprs)}")
    for e in exprs:
        if not e.has_time or e.n or e.m:
            raise DimensionError(f"{what} components must be functions of t only")
    return expr.pack_programs([e.program() for e in exprs])


def _field_parts(fld, n, m, what):
    if fld is None:
        fld = expr.zero_field(n)
    if fld.m != m:
        raise DimensionError(f"{what} input dimension {fld.m} != plant m={m}")
    return fld.kernel_parts()


def simulate(plant, design, config: SimulationConfig, plant_field=None,
             raise_on_blowup: bool = True) -> SimulationTrace:
    """Integrate plant and observer together and assemble the trace.

    The plant side integrates ``plant_field`` when given (uncertainty
    studies); the observer always uses the nominal plant nonlinearity.
    The error signal is assembled as x - xhat exactly, never integrated
    separately.
    """
    n, q = plant.n, plant.q
    if config.x0.shape[0] != n or config.xhat0.shape[0] != n:
        raise DimensionError(f"initial states must have dimension {n}")
    if design.verification is None or not design.verification.passed:
        logger.warning("simulating an unverified design")
    L = np.asarray(design.L, dtype=np.float64).reshape(n, plant.p)

    pf = _field_parts(plant_field if plant_field is not None else plant.phi,
                      n, plant.m, "plant field")
    of = _field_parts(plant.phi, n, plant.m, "observer field")
    wc, wa, wo = _pack_time_exprs(config.disturbance, q, "disturbance")
    uc, ua, uo = _pack_time_exprs(config.u, plant.m, "control input")

    nsteps = int(round(config.t_end / config.dt))
    X, XH, W, bad = kernels.rk4_cosim(
        plant.A, plant.B, plant.C, plant.D, L,
        *pf, *of, uc, ua, uo, wc, wa, wo,
        config.x0, config.xhat0, config.dt, nsteps,
    )
    blew_up_at = None
    if bad >= 0:
        blew_up_at = bad * config.dt
        if raise_on_blowup:
            raise SimulationBlowup(blew_up_at)
        X, XH, W = X[:bad + 1], XH[:bad + 1], W[:bad + 1]
        nsteps = bad
    t = np.arange(nsteps + 1) * config.dt
    e = X - XH
    z = e @ plant.H.T
    return SimulationTrace(
        t=t, x=X, xhat=XH, e=e, w=W, z=z,
        e_norm=np.linalg.norm(e, axis=1),
        blew_up_at=blew_up_at,
    )


@dataclass
class DecayReport:
    passed: bool
    worst_ratio: float
    beta: float
    kappa_p: float
    disturbance_free: bool

    def __str__(self):
        return (f"decay bound {'holds' if self.passed else 'VIOLATED'}: "
                f"worst |e|/bound = {self.worst_ratio:.6g} "
                f"(beta={self.beta:g}, kappa(P)^0.5={np.sqrt(self.kappa_p):.4g}"
                + ("" if self.disturbance_free else "; disturbance present"))


def decay_check(trace: SimulationTrace, design) -> DecayReport:
    """Check |e(t)| <= exp(-beta t) sqrt(kappa(P)) |e(0)| at every sample."""
    kappa = design.kappa_p
    e0 = trace.e_norm[0]
    disturbance_free = bool(np.all(trace.w == 0.0))
    bound = np.exp(-design.beta * trace.t) * np.sqrt(kappa) * e0
    if e0 == 0.0:
        worst = float(trace.e_norm.max())
        passed = worst <= 1e-12
        return DecayReport(passed, np.inf if not passed else 0.0, design.beta,
                           kappa, disturbance_free)
    ratio = trace.e_norm / (bound * (1.0 + DECAY_TOL))
    worst = float(ratio.max())
    return DecayReport(bool(worst <= 1.0), worst, design.beta, kappa,
                       disturbance_free)


def empirical_gain(trace: SimulationTrace):
    """sqrt(int |z|^2 dt / int |w|^2 dt) by trapezoidal quadrature.

    None when the trace carries no disturbance energy.  The certified bound
    assumes e(0) = 0; for nonzero initial error the number is informational.
    """
    wsq = np.trapezoid((trace.w**2).sum(axis=1), trace.t)
    if wsq <= 0.0:
        return None
    zsq = np.trapezoid((trace.z**2).sum(axis=1), trace.t)
    return float(np.sqrt(zsq / wsq))


@dataclass
class PerturbationReport:
    converged: bool
    within_certificate: bool
    delta_gamma: float
    margin: float
    final_ratio: float
    blew_up: bool
    trace: SimulationTrace = field(repr=False, default=None)

    def __str__(self):
        cert = ("within certificate" if self.within_certificate
                else "outside certificate")
        return (f"perturbation ({cert}): delta_gamma={self.delta_gamma:.4g} "
                f"vs margin={self.margin:.4g}; "
                f"|e(T)|/|e(0)| = {self.final_ratio:.3e}"
                + (" [blew up]" if self.blew_up else ""))


def perturbation_test(plant, design, delta_field, config: SimulationConfig,
                      delta_gamma=None, region=None,
                      convergence_ratio: float = 1e-3) -> PerturbationReport:
    """Simulate with the true plant driven by phi + delta_phi (observer keeps
    the nominal phi) and report error convergence.

    delta_gamma defaults to a grid estimate of the perturbation's Lipschitz
    constant over ``region`` (or the plant region).  Within the certificate
    margin gamma* - gamma the error must converge; beyond it the report is
    informational only.
    """
    from . import lipschitz, synthesis

    if delta_gamma is None:
        reg = region if region is not None else plant.region
        if reg is None:
            raise DimensionError(
                "no region available to estimate the perturbation's "
                "Lipschitz constant; pass delta_gamma explicitly")
        delta_gamma = lipschitz.estimate_lipschitz(delta_field, reg)
    margin = (synthesis.robustness_margin(design, plant.gamma)
              if plant.gamma is not None else np.nan)
    combined = expr.add_fields(plant.phi, delta_field)
    trace = simulate(plant, design, config, plant_field=combined,
                     raise_on_blowup=False)
    e0 = trace.e_norm[0]
    final_ratio = float(trace.e_norm[-1] / e0) if e0 > 0 else float(
        trace.e_norm[-1])
    return PerturbationReport(
        converged=bool(trace.ok and final_ratio <= convergence_ratio),
        within_certificate=bool(np.isfinite(margin) and delta_gamma <= margin),
        delta_gamma=float(delta_gamma),
        margin=float(margin),
        final_ratio=final_ratio,
        blew_up=not trace.ok,
        trace=trace,
    )


def trace_to_csv(trace: SimulationTrace, path, stride: int = 1):
    """Write the trace: t, x1..xn, xhat1..xhatn, e_norm, w1..wq, z1..zr."""
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    n = trace.x.shape[1]
    q = trace.w.shape[1]
    r = trace.z.shape[1]
    header = (["t"]
              + [f"x{i + 1}" for i in range(n)]
              + [f"xhat{i + 1}" for i in range(n)]
              + ["e_norm"]
              + [f"w{i + 1}" for i in range(q)]
              + [f"z{i + 1}" for i in range(r)])
    rows = np.column_stack([
        trace.t, trace.x, trace.xhat, trace.e_norm, trace.w, trace.z,
    ])[::stride]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
