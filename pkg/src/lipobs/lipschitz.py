"""Lipschitz constant estimation over box regions, and coordinate
transformations xbar = T x that reduce it.

The estimate is the maximum spectral norm of the field Jacobian over a
deterministic grid (plus cell midpoints), with one refinement pass around
the arg-max.  It is a lower bound on the true constant that converges as
the grid refines.
"""

from dataclasses import dataclass

import numpy as np

from . import expr
from .errors import DimensionError, DomainError
from .synthesis import PlantModel

DEFAULT_SAMPLES = 21
CHUNK = 32768


@dataclass(frozen=True)
class Region:
    """Componentwise box [lower, upper] with a per-axis grid density."""

    lower: np.ndarray
    upper: np.ndarray
    samples_per_axis: int = DEFAULT_SAMPLES

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("region lower/upper dimensions differ")
        if not np.all(lo <= hi):
            raise DimensionError("region needs lower <= upper componentwise")
        if self.samples_per_axis < 2:
            raise DimensionError("samples_per_axis must be at least 2")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]


def _grid_points(lower, upper, samples):
    axes = [np.linspace(lo, hi, samples) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _region_points(region):
    """Grid nodes plus cell midpoints."""
    pts = _grid_points(region.lower, region.upper, region.samples_per_axis)
    step = (region.upper - region.lower) / (region.samples_per_axis - 1)
    if np.any(step > 0):
        mids = _grid_points(region.lower + 0.5 * step, region.upper - 0.5 * step,
                            region.samples_per_axis - 1)
        pts = np.vstack([pts, mids])
    return pts


def _max_jacobian_norm(field, pts, u_fixed):
    best = -np.inf
    best_point = pts[0]
    for start in range(0, pts.shape[0], CHUNK):
        chunk = pts[start:start + CHUNK]
        J = expr.jacobian_batch(field, chunk, u_fixed=u_fixed)
        sig = np.linalg.svd(J, compute_uv=False)[:, 0]
        k = int(np.argmax(sig))
        if sig[k] > best:
            best = float(sig[k])
            best_point = chunk[k].copy()
    return best, best_point


def estimate_lipschitz_argmax(field, region: Region, u_fixed=None,
                              refine: bool = True):
    """(estimate, arg-max point) of the Jacobian spectral norm over the
    region grid; one refinement pass re-grids a one-cell neighbourhood of
    the arg-max."""
    if region.dim != field.n:
        raise DimensionError(
            f"region dimension {region.dim} does not match field ({field.n})")
    pts = _region_points(region)
    best, best_point = _max_jacobian_norm(field, pts, u_fixed)
    if refine:
        step = (region.upper - region.lower) / (region.samples_per_axis - 1)
        lo = np.maximum(region.lower, best_point - step)
        hi = np.minimum(region.upper, best_point + step)
        local = Region(lo, hi, region.samples_per_axis)
        cand, cand_point = _max_jacobian_norm(field, _region_points(local),
                                              u_fixed)
        if cand > best:
            best, best_point = cand, cand_point
    return best, best_point


def estimate_lipschitz(field, region: Region, u_fixed=None) -> float:
    """Deterministic grid estimate (lower bound) of the Lipschitz constant."""
    value, _ = estimate_lipschitz_argmax(field, region, u_fixed)
    return value


class ConjugatedField:
    """T phi(inv(T) xbar, u): a vector field in transformed coordinates,
    evaluated by composition (exact; nothing is re-parsed)."""

    def __init__(self, base, T, Tinv):
        if isinstance(base, ConjugatedField):
            self.base = base.base
            self.pre = base.pre @ Tinv
            self.post = T @ base.post
        else:
            self.base = base
            self.pre = np.asarray(Tinv, dtype=np.float64)
            self.post = np.asarray(T, dtype=np.float64)
        self.n = self.post.shape[0]
        self.m = self.base.m

    @property
    def out_dim(self):
        return self.n

    def eval(self, x, u=()):
        return self.post @ self.base.eval(self.pre @ np.asarray(x, float), u)

    def eval_batch(self, X, u_fixed=None):
        inner = self.base.eval_batch(np.asarray(X, float) @ self.pre.T, u_fixed)
        return inner @ self.post.T

    def kernel_parts(self):
        codes, args, offs, _, _ = self.base.kernel_parts()
        return codes, args, offs, self.pre, self.post


def _transform_region(region, T):
    """Boxes map to boxes only under diagonal transforms."""
    if region is None:
        return None
    if not np.allclose(T, np.diag(np.diag(T))):
        return None
    d = np.diag(T)
    lo = np.minimum(d * region.lower, d * region.upper)
    hi = np.maximum(d * region.lower, d * region.upper)
    return Region(lo, hi, region.samples_per_axis)


def transform(plant: PlantModel, T) -> PlantModel:
    """The plant in xbar = T x coordinates.

    A -> T A inv(T), B -> T B, C -> C inv(T), H -> H inv(T); D is untouched
    and the nonlinearity is wrapped (composed, not re-parsed).  The composed
    transform is recorded for gain back-mapping; the Lipschitz constant does
    not carry over and is cleared.
    """
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    n = plant.n
    if T.shape != (n, n):
        raise DimensionError(f"T must be {n}x{n}, got {T.shape}")
    det = np.linalg.det(T)
    if abs(det) < 1e-300:
        raise DimensionError("transform T is singular")
    Tinv = np.linalg.inv(T)
    phi = None
    if plant.phi is not None:
        phi = ConjugatedField(plant.phi, T, Tinv)
    chain = T if plant.transform is None else T @ plant.transform
    return PlantModel(
        A=T @ plant.A @ Tinv,
        C=plant.C @ Tinv,
        B=T @ plant.B,
        D=plant.D,
        H=plant.H @ Tinv,
        phi=phi,
        gamma=None,
        region=_transform_region(plant.region, T),
        m=plant.m,
        transform=chain,
    )


def backmap_gain(L_bar, T) -> np.ndarray:
    """Gain in original coordinates: L = inv(T) L_bar."""
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    L_bar = np.atleast_2d(np.asarray(L_bar, dtype=np.float64))
    if L_bar.shape[0] != T.shape[0]:
        raise DimensionError("gain rows do not match transform dimension")
    return np.linalg.solve(T, L_bar)


def condition_number(T) -> float:
    return float(np.linalg.cond(np.asarray(T, dtype=np.float64)))
