"""LMI problem representation: a linear objective over named decision
variables (symmetric matrices, rectangular matrices, scalars) subject to
affine positive-semidefinite matrix constraints.

Strict inequalities from the synthesis theorems are normalized to
"block(x) - delta*I PSD" with a uniform margin delta, so feasibility is a
testable contract rather than an open condition.  Symmetric matrix variables
are stored by upper triangle; the off-diagonal basis matrices carry the entry
in both symmetric positions, so affine evaluation reproduces the matrix
exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

DEFAULT_MARGIN = 1e-6


@dataclass(frozen=True)
class VarSpec:
    """One named decision variable.

    kind: 'sym' (rows==cols symmetric), 'mat' (rows x cols), or 'scalar'.
    lower applies to scalars only and is enforced by the solver barrier and
    by check_point.
    """

    name: str
    kind: str = "scalar"
    rows: int = 1
    cols: int = 1
    lower: float | None = None

    def size(self):
        if self.kind == "sym":
            return self.rows * (self.rows + 1) // 2
        if self.kind == "mat":
            return self.rows * self.cols
        return 1


class DecisionLayout:
    """Ordered variable table mapping names to scalar index ranges."""

    def __init__(self, specs):
        self.specs = tuple(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate variable name in layout: {names}")
        self.offsets = {}
        off = 0
        for s in self.specs:
            self.offsets[s.name] = off
            off += s.size()
        self.dim = off

    def spec(self, name):
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(name)

    def slice(self, name):
        off = self.offsets[name]
        return off, off + self.spec(name).size()

    def bounds(self):
        """(index, lower) pairs for every bounded scalar."""
        out = []
        for s in self.specs:
            if s.kind == "scalar" and s.lower is not None:
                out.append((self.offsets[s.name], s.lower))
        return out

    def pack(self, values):
        """Assemble the flat decision vector from {name: matrix/scalar}."""
        x = np.zeros(self.dim)
        for s in self.specs:
            off = self.offsets[s.name]
            v = values[s.name]
            if s.kind == "sym":
                v = np.asarray(v, dtype=np.float64)
                iu = np.triu_indices(s.rows)
                x[off:off + s.size()] = v[iu]
            elif s.kind == "mat":
                x[off:off + s.size()] = np.asarray(v, dtype=np.float64).reshape(-1)
            else:
                x[off] = float(v)
        return x

    def unpack(self, x, name):
        """Recover the named variable from a flat decision vector."""
        s = self.spec(name)
        off = self.offsets[s.name]
        if s.kind == "sym":
            M = np.zeros((s.rows, s.rows))
            iu = np.triu_indices(s.rows)
            M[iu] = x[off:off + s.size()]
            return M + np.triu(M, 1).T
        if s.kind == "mat":
            return np.asarray(x[off:off + s.size()]).reshape(s.rows, s.cols)
        return float(x[off])

    def sym_basis(self, name):
        """Yield (index, basis matrix) for a symmetric variable: E_ii or
        E_ij + E_ji, so x_index is exactly the matrix entry."""
        s = self.spec(name)
        off = self.offsets[name]
        k = 0
        for i in range(s.rows):
            for j in range(i, s.rows):
                E = np.zeros((s.rows, s.rows))
                E[i, j] = 1.0
                E[j, i] = 1.0
                yield off + k, E
                k += 1

    def mat_basis(self, name):
        """Yield (index, row, col) for a rectangular variable entry."""
        s = self.spec(name)
        off = self.offsets[name]
        k = 0
        for r in range(s.rows):
            for c in range(s.cols):
                yield off + k, r, c
                k += 1


class AffineBlock:
    """constant + sum_i x_i * coeff_i, required PSD (with the problem margin
    when strict=True)."""

    def __init__(self, dim, constant=None, strict=True, name=""):
        self.dim = dim
        self.constant = np.zeros((dim, dim)) if constant is None else np.asarray(
            constant, dtype=np.float64
        ).copy()
        if self.constant.shape != (dim, dim):
            raise DimensionError(
                f"block {name or '?'}: constant is {self.constant.shape}, "
                f"expected {(dim, dim)}"
            )
        self.coeffs = {}
        self.strict = strict
        self.name = name

    def add(self, index, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (self.dim, self.dim):
            raise DimensionError(
                f"block {self.name or '?'}: coefficient for index {index} is "
                f"{matrix.shape}, expected {(self.dim, self.dim)}"
            )
        if index in self.coeffs:
            self.coeffs[index] = self.coeffs[index] + matrix
        else:
            self.coeffs[index] = matrix.copy()
        return self

    def stacked(self):
        """(indices, (k, dim, dim) coefficient stack) for fast evaluation."""
        idx = np.asarray(sorted(self.coeffs), dtype=np.intp)
        stack = np.stack([self.coeffs[i] for i in idx]) if len(idx) else np.zeros(
            (0, self.dim, self.dim)
        )
        return idx, stack


@dataclass
class LmiProblem:
    layout: DecisionLayout
    objective: np.ndarray
    blocks: list
    margin: float = DEFAULT_MARGIN
    _stacks: list = field(default=None, repr=False)

    def stacks(self):
        if self._stacks is None:
            self._stacks = [b.stacked() for b in self.blocks]
        return self._stacks


def assemble(layout, objective, blocks, margin=DEFAULT_MARGIN) -> LmiProblem:
    """Validate and freeze an LMI problem.

    Raises DimensionError naming the offending block on any mismatch.
    """
    if margin <= 0:
        raise DimensionError(f"margin must be positive, got {margin}")
    c = np.asarray(objective, dtype=np.float64).reshape(-1)
    if c.shape[0] != layout.dim:
        raise DimensionError(
            f"objective has {c.shape[0]} entries, layout dimension is {layout.dim}"
        )
    for b in blocks:
        for index, M in b.coeffs.items():
            if not (0 <= index < layout.dim):
                raise DimensionError(
                    f"block {b.name or '?'}: coefficient index {index} outside "
                    f"layout of dimension {layout.dim}"
                )
            if M.shape != (b.dim, b.dim):
                raise DimensionError(
                    f"block {b.name or '?'}: coefficient {index} has shape "
                    f"{M.shape}, expected {(b.dim, b.dim)}"
                )
    return LmiProblem(layout=layout, objective=c, blocks=list(blocks), margin=margin)


def evaluate_block(problem: LmiProblem, block_index: int, x) -> np.ndarray:
    """constant + sum_i x_i coeff_i for one block (no margin shift)."""
    if not (0 <= block_index < len(problem.blocks)):
        raise IndexError(f"block index {block_index} out of range")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != problem.layout.dim:
        raise DimensionError(
            f"point has {x.shape[0]} entries, layout dimension is {problem.layout.dim}"
        )
    block = problem.blocks[block_index]
    idx, stack = problem.stacks()[block_index]
    V = block.constant.copy()
    if len(idx):
        V += np.tensordot(x[idx], stack, axes=1)
    return V


@dataclass(frozen=True)
class PointReport:
    feasible: bool
    worst_margin: float
    block_min_eigs: tuple
    bound_margins: tuple


def check_point(problem: LmiProblem, x) -> PointReport:
    """Feasibility report at x: every strict block must clear the margin
    shift, non-strict blocks must be PSD, scalar bounds must hold."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    eigs = []
    margins = []
    for k, b in enumerate(problem.blocks):
        emin = float(np.linalg.eigvalsh(evaluate_block(problem, k, x)).min())
        eigs.append(emin)
        margins.append(emin - (problem.margin if b.strict else 0.0))
    bound_margins = tuple(float(x[i] - lo) for i, lo in problem.layout.bounds())
    worst = min(margins + list(bound_margins)) if (margins or bound_margins) else 0.0
    return PointReport(
        feasible=worst >= 0.0,
        worst_margin=float(worst),
        block_min_eigs=tuple(eigs),
        bound_margins=bound_margins,
    )


def dump_problem(problem: LmiProblem) -> str:
    """Human-readable dump (debugging aid): layout, objective, dense blocks."""
    lines = [f"margin={problem.margin:.17g}", "layout:"]
    for s in problem.layout.specs:
        lo = "" if s.lower is None else f" lower={s.lower:.17g}"
        lines.append(f"  {s.name} kind={s.kind} rows={s.rows} cols={s.cols}{lo}")
    lines.append("objective: " + " ".join(f"{v:.17g}" for v in problem.objective))
    for k, b in enumerate(problem.blocks):
        lines.append(f"block {k} name={b.name} dim={b.dim} strict={int(b.strict)}")
        lines.append("  constant:")
        for row in b.constant:
            lines.append("    " + " ".join(f"{v:.17g}" for v in row))
        for idx in sorted(b.coeffs):
            lines.append(f"  coeff[{idx}]:")
            for row in b.coeffs[idx]:
                lines.append("    " + " ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"
