"""Pure-numpy kernel backend.

Implements the same three entry points as the compiled extension
(``lipobs._core``): scalar program evaluation, batched program evaluation,
and the RK4 plant/observer co-integration loop.  Programs are expression
ASTs flattened to postfix opcode/argument arrays; see ``lipobs.expr``.

Opcode argument meaning: CONST -> literal value, VAR -> variable slot,
POWI -> integer exponent.  All other opcodes ignore the argument.
"""

import numpy as np

OP_CONST = 0
OP_VAR = 1
OP_NEG = 2
OP_SIN = 3
OP_COS = 4
OP_EXP = 5
OP_ABS = 6
OP_SQRT = 7
OP_ADD = 8
OP_SUB = 9
OP_MUL = 10
OP_DIV = 11
OP_POWI = 12

MAX_STACK = 64

_UNARY = {
    OP_NEG: np.negative,
    OP_SIN: np.sin,
    OP_COS: np.cos,
    OP_EXP: np.exp,
    OP_ABS: np.abs,
    OP_SQRT: np.sqrt,
}
_BINARY = {
    OP_ADD: np.add,
    OP_SUB: np.subtract,
    OP_MUL: np.multiply,
    OP_DIV: np.divide,
}


def eval_program(code, arg, varvals):
    """Evaluate one postfix program at a single point.

    ``varvals`` is a 1-D float64 array of variable values.  Non-finite
    results are returned as-is; the caller decides whether that is a
    domain error.
    """
    stack = np.empty(MAX_STACK)
    top = -1
    with np.errstate(all="ignore"):
        for i in range(code.shape[0]):
            op = code[i]
            if op == OP_CONST:
                top += 1
                stack[top] = arg[i]
            elif op == OP_VAR:
                top += 1
                stack[top] = varvals[int(arg[i])]
            elif op == OP_POWI:
                stack[top] = np.power(stack[top], arg[i])
            elif op in _UNARY:
                stack[top] = _UNARY[op](stack[top])
            else:
                top -= 1
                stack[top] = _BINARY[op](stack[top], stack[top + 1])
    return float(stack[0])


def eval_program_batch(code, arg, points):
    """Evaluate one program over ``points`` (shape ``(npts, nvars)``).

    Vectorized stack machine: the stack holds arrays of length npts.
    Returns a float64 array of shape ``(npts,)``.
    """
    npts = points.shape[0]
    stack = []
    with np.errstate(all="ignore"):
        for i in range(code.shape[0]):
            op = code[i]
            if op == OP_CONST:
                stack.append(np.full(npts, arg[i]))
            elif op == OP_VAR:
                stack.append(points[:, int(arg[i])].copy())
            elif op == OP_POWI:
                stack[-1] = np.power(stack[-1], arg[i])
            elif op in _UNARY:
                stack[-1] = _UNARY[op](stack[-1])
            else:
                rhs = stack.pop()
                stack[-1] = _BINARY[op](stack[-1], rhs)
    return stack[0]


def _eval_packed(codes, args, offs, varvals, out):
    for c in range(offs.shape[0] - 1):
        lo, hi = offs[c], offs[c + 1]
        out[c] = eval_program(codes[lo:hi], args[lo:hi], varvals)
    return out


def rk4_cosim(
    A, Bw, C, D, L,
    p_codes, p_args, p_offs, p_pre, p_post,
    o_codes, o_args, o_offs, o_pre, o_post,
    u_codes, u_args, u_offs,
    w_codes, w_args, w_offs,
    x0, xh0, dt, nsteps,
):
    """Fixed-step RK4 integration of the coupled plant/observer system.

    Plant:     dx  = A x  + phi_p(x, u(t))  + Bw w(t)
    Measured:  y   = C x  + D w(t)
    Observer:  dxh = A xh + phi_o(xh, u(t)) + L (y - C xh)

    phi_p / phi_o are packed vector-field programs with an optional linear
    conjugation: phi(x, u) = post @ progs(concat(pre @ x, u)).

    Returns (X, XH, W, first_bad) where X/XH have shape (nsteps+1, n), W has
    shape (nsteps+1, q) and first_bad is the index of the first sample with a
    non-finite state (-1 if none; integration stops there).
    """
    n = A.shape[0]
    q = Bw.shape[1]
    m = u_offs.shape[0] - 1
    X = np.zeros((nsteps + 1, n))
    XH = np.zeros((nsteps + 1, n))
    W = np.zeros((nsteps + 1, q))
    X[0] = x0
    XH[0] = xh0

    nb_p = p_post.shape[1]
    nb_o = o_post.shape[1]
    phi_p = np.empty(nb_p)
    phi_o = np.empty(nb_o)
    tvec = np.empty(1)
    uvec = np.empty(m)

    def wval(ts):
        w = np.zeros(q)
        tvec[0] = ts
        if w_offs.shape[0] > 1:
            _eval_packed(w_codes, w_args, w_offs, tvec, w)
        return w

    def deriv(ts, xs, xhs):
        w = wval(ts)
        tvec[0] = ts
        if m:
            _eval_packed(u_codes, u_args, u_offs, tvec, uvec)
        xin = np.concatenate([p_pre @ xs, uvec])
        _eval_packed(p_codes, p_args, p_offs, xin, phi_p)
        fx = A @ xs + Bw @ w + p_post @ phi_p
        y = C @ xs + D @ w
        xin = np.concatenate([o_pre @ xhs, uvec])
        _eval_packed(o_codes, o_args, o_offs, xin, phi_o)
        fxh = A @ xhs + o_post @ phi_o + L @ (y - C @ xhs)
        return fx, fxh

    x = x0.copy()
    xh = xh0.copy()
    W[0] = wval(0.0)
    first_bad = -1
    for k in range(nsteps):
        t = k * dt
        k1x, k1h = deriv(t, x, xh)
        k2x, k2h = deriv(t + 0.5 * dt, x + 0.5 * dt * k1x, xh + 0.5 * dt * k1h)
        k3x, k3h = deriv(t + 0.5 * dt, x + 0.5 * dt * k2x, xh + 0.5 * dt * k2h)
        k4x, k4h = deriv(t + dt, x + dt * k3x, xh + dt * k3h)
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        xh = xh + (dt / 6.0) * (k1h + 2.0 * k2h + 2.0 * k3h + k4h)
        X[k + 1] = x
        XH[k + 1] = xh
        W[k + 1] = wval((k + 1) * dt)
        if not (np.isfinite(x).all() and np.isfinite(xh).all()):
            first_bad = k + 1
            break
    return X, XH, W, first_bad
