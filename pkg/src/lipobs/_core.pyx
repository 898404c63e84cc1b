# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: postfix expression programs and the RK4
plant/observer co-integration loop.  Mirrors lipobs.kernels.pure exactly;
opcode numbering must stay in sync with that module."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, exp, fabs, sqrt, pow, isfinite

cnp.import_array()

DEF OPC_CONST = 0
DEF OPC_VAR = 1
DEF OPC_NEG = 2
DEF OPC_SIN = 3
DEF OPC_COS = 4
DEF OPC_EXP = 5
DEF OPC_ABS = 6
DEF OPC_SQRT = 7
DEF OPC_ADD = 8
DEF OPC_SUB = 9
DEF OPC_MUL = 10
DEF OPC_DIV = 11
DEF OPC_POWI = 12

DEF STACK_MAX = 64
DEF DIM_MAX = 32


cdef inline double _eval(const int[:] code, const double[:] arg,
                         const double* vals, Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef double stack[STACK_MAX]
    cdef Py_ssize_t i
    cdef int top = -1
    cdef int op
    for i in range(lo, hi):
        op = code[i]
        if op == OPC_CONST:
            top += 1
            stack[top] = arg[i]
        elif op == OPC_VAR:
            top += 1
            stack[top] = vals[<int> arg[i]]
        elif op == OPC_NEG:
            stack[top] = -stack[top]
        elif op == OPC_SIN:
            stack[top] = sin(stack[top])
        elif op == OPC_COS:
            stack[top] = cos(stack[top])
        elif op == OPC_EXP:
            stack[top] = exp(stack[top])
        elif op == OPC_ABS:
            stack[top] = fabs(stack[top])
        elif op == OPC_SQRT:
            stack[top] = sqrt(stack[top])
        elif op == OPC_POWI:
            stack[top] = pow(stack[top], arg[i])
        elif op == OPC_ADD:
            top -= 1
            stack[top] = stack[top] + stack[top + 1]
        elif op == OPC_SUB:
            top -= 1
            stack[top] = stack[top] - stack[top + 1]
        elif op == OPC_MUL:
            top -= 1
            stack[top] = stack[top] * stack[top + 1]
        elif op == OPC_DIV:
            top -= 1
            stack[top] = stack[top] / stack[top + 1]
    return stack[0]


def eval_program(code, arg, varvals):
    """Evaluate one postfix program at a single point."""
    cdef const int[:] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[:] a = np.ascontiguousarray(arg, dtype=np.float64)
    cdef const double[:] v = np.ascontiguousarray(varvals, dtype=np.float64)
    return _eval(c, a, &v[0] if v.shape[0] else NULL, 0, c.shape[0])


def eval_program_batch(code, arg, points):
    """Evaluate one program over points of shape (npts, nvars)."""
    cdef const int[:] c = np.ascontiguousarray(code, dtype=np.int32)
    cdef const double[:] a = np.ascontiguousarray(arg, dtype=np.float64)
    cdef const double[:, :] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t npts = p.shape[0]
    out_arr = np.empty(npts)
    cdef double[:] out = out_arr
    cdef Py_ssize_t k
    with nogil:
        for k in range(npts):
            out[k] = _eval(c, a, &p[k, 0], 0, c.shape[0])
    return out_arr


cdef inline void _eval_packed(const int[:] codes, const double[:] args,
                              const int[:] offs, const double* vals,
                              double* out) nogil:
    cdef Py_ssize_t comp
    for comp in range(offs.shape[0] - 1):
        out[comp] = _eval(codes, args, vals, offs[comp], offs[comp + 1])


cdef struct Dims:
    int n
    int q
    int m
    int nbp
    int nbo


cdef inline void _deriv(double t,
                        const double* x, const double* xh,
                        const double[:, :] A, const double[:, :] Bw,
                        const double[:, :] C, const double[:, :] D,
                        const double[:, :] L,
                        const int[:] pc, const double[:] pa, const int[:] po,
                        const double[:, :] ppre, const double[:, :] ppost,
                        const int[:] oc, const double[:] oa, const int[:] oo,
                        const double[:, :] opre, const double[:, :] opost,
                        const int[:] uc, const double[:] ua, const int[:] uo,
                        const int[:] wc, const double[:] wa, const int[:] wo,
                        Dims dims,
                        double* fx, double* fxh, double* scratch) nogil:
    # scratch layout (each region DIM_MAX-aligned): w | xin (2 slots) | phi | y
    cdef double* w = scratch
    cdef double* xin = scratch + DIM_MAX
    cdef double* phi = scratch + 3 * DIM_MAX
    cdef double* y = scratch + 4 * DIM_MAX
    cdef double ubuf[DIM_MAX]
    cdef int i, j, p_out
    cdef double acc, tt
    tt = t

    for i in range(dims.q):
        w[i] = 0.0
    if wo.shape[0] > 1:
        _eval_packed(wc, wa, wo, &tt, w)

    if dims.m:
        _eval_packed(uc, ua, uo, &tt, ubuf)

    # plant field: xin = [ppre @ x, u]
    for i in range(dims.nbp):
        acc = 0.0
        for j in range(dims.n):
            acc += ppre[i, j] * x[j]
        xin[i] = acc
    for i in range(dims.m):
        xin[dims.nbp + i] = ubuf[i]
    _eval_packed(pc, pa, po, xin, phi)
    for i in range(dims.n):
        acc = 0.0
        for j in range(dims.nbp):
            acc += ppost[i, j] * phi[j]
        for j in range(dims.n):
            acc += A[i, j] * x[j]
        for j in range(dims.q):
            acc += Bw[i, j] * w[j]
        fx[i] = acc

    # measurement y = C x + D w
    p_out = C.shape[0]
    for i in range(p_out):
        acc = 0.0
        for j in range(dims.n):
            acc += C[i, j] * x[j]
        for j in range(dims.q):
            acc += D[i, j] * w[j]
        y[i] = acc

    # observer field
    for i in range(dims.nbo):
        acc = 0.0
        for j in range(dims.n):
            acc += opre[i, j] * xh[j]
        xin[i] = acc
    for i in range(dims.m):
        xin[dims.nbo + i] = ubuf[i]
    _eval_packed(oc, oa, oo, xin, phi)
    for i in range(dims.n):
        acc = 0.0
        for j in range(dims.nbo):
            acc += opost[i, j] * phi[j]
        for j in range(dims.n):
            acc += A[i, j] * xh[j]
        fxh[i] = acc
    for i in range(p_out):
        acc = y[i]
        for j in range(dims.n):
            acc -= C[i, j] * xh[j]
        y[i] = acc
    for i in range(dims.n):
        acc = 0.0
        for j in range(p_out):
            acc += L[i, j] * y[j]
        fxh[i] += acc


def rk4_cosim(A, Bw, C, D, L,
              p_codes, p_args, p_offs, p_pre, p_post,
              o_codes, o_args, o_offs, o_pre, o_post,
              u_codes, u_args, u_offs,
              w_codes, w_args, w_offs,
              x0, xh0, double dt, int nsteps):
    """Fixed-step RK4 co-integration; same contract as kernels.pure.rk4_cosim."""
    cdef const double[:, :] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :] Bv = np.ascontiguousarray(Bw, dtype=np.float64)
    cdef const double[:, :] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:, :] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:, :] Lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef const int[:] pc = np.ascontiguousarray(p_codes, dtype=np.int32)
    cdef const double[:] pa = np.ascontiguousarray(p_args, dtype=np.float64)
    cdef const int[:] po = np.ascontiguousarray(p_offs, dtype=np.int32)
    cdef const double[:, :] ppre = np.ascontiguousarray(p_pre, dtype=np.float64)
    cdef const double[:, :] ppost = np.ascontiguousarray(p_post, dtype=np.float64)
    cdef const int[:] oc = np.ascontiguousarray(o_codes, dtype=np.int32)
    cdef const double[:] oa = np.ascontiguousarray(o_args, dtype=np.float64)
    cdef const int[:] oo = np.ascontiguousarray(o_offs, dtype=np.int32)
    cdef const double[:, :] opre = np.ascontiguousarray(o_pre, dtype=np.float64)
    cdef const double[:, :] opost = np.ascontiguousarray(o_post, dtype=np.float64)
    cdef const int[:] uc = np.ascontiguousarray(u_codes, dtype=np.int32)
    cdef const double[:] ua = np.ascontiguousarray(u_args, dtype=np.float64)
    cdef const int[:] uo = np.ascontiguousarray(u_offs, dtype=np.int32)
    cdef const int[:] wc = np.ascontiguousarray(w_codes, dtype=np.int32)
    cdef const double[:] wa = np.ascontiguousarray(w_args, dtype=np.float64)
    cdef const int[:] wo = np.ascontiguousarray(w_offs, dtype=np.int32)

    cdef Dims dims
    dims.n = Av.shape[0]
    dims.q = Bv.shape[1]
    dims.m = uo.shape[0] - 1
    dims.nbp = ppost.shape[1]
    dims.nbo = opost.shape[1]
    if (dims.n > DIM_MAX or dims.q > DIM_MAX or dims.m > DIM_MAX
            or Cv.shape[0] > DIM_MAX or dims.nbp > DIM_MAX or dims.nbo > DIM_MAX):
        raise ValueError("system dimensions exceed the compiled kernel limit")

    X_arr = np.zeros((nsteps + 1, dims.n))
    XH_arr = np.zeros((nsteps + 1, dims.n))
    W_arr = np.zeros((nsteps + 1, dims.q))
    cdef double[:, :] X = X_arr
    cdef double[:, :] XH = XH_arr
    cdef double[:, :] W = W_arr
    cdef const double[:] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[:] xh0v = np.ascontiguousarray(xh0, dtype=np.float64)

    cdef double x[DIM_MAX]
    cdef double xh[DIM_MAX]
    cdef double xs[DIM_MAX]
    cdef double xhs[DIM_MAX]
    cdef double k1x[DIM_MAX]
    cdef double k1h[DIM_MAX]
    cdef double k2x[DIM_MAX]
    cdef double k2h[DIM_MAX]
    cdef double k3x[DIM_MAX]
    cdef double k3h[DIM_MAX]
    cdef double k4x[DIM_MAX]
    cdef double k4h[DIM_MAX]
    cdef double scratch[5 * DIM_MAX]
    cdef double t, tt
    cdef int i, k, first_bad = -1
    cdef bint ok

    for i in range(dims.n):
        x[i] = x0v[i]
        xh[i] = xh0v[i]
        X[0, i] = x[i]
        XH[0, i] = xh[i]

    with nogil:
        tt = 0.0
        for i in range(dims.q):
            scratch[i] = 0.0
        if wo.shape[0] > 1:
            _eval_packed(wc, wa, wo, &tt, scratch)
        for i in range(dims.q):
            W[0, i] = scratch[i]

        for k in range(nsteps):
            t = k * dt
            _deriv(t, x, xh, Av, Bv, Cv, Dv, Lv, pc, pa, po, ppre, ppost,
                   oc, oa, oo, opre, opost, uc, ua, uo, wc, wa, wo, dims,
                   k1x, k1h, scratch)
            for i in range(dims.n):
                xs[i] = x[i] + 0.5 * dt * k1x[i]
                xhs[i] = xh[i] + 0.5 * dt * k1h[i]
            _deriv(t + 0.5 * dt, xs, xhs, Av, Bv, Cv, Dv, Lv, pc, pa, po,
                   ppre, ppost, oc, oa, oo, opre, opost, uc, ua, uo,
                   wc, wa, wo, dims, k2x, k2h, scratch)
            for i in range(dims.n):
                xs[i] = x[i] + 0.5 * dt * k2x[i]
                xhs[i] = xh[i] + 0.5 * dt * k2h[i]
            _deriv(t + 0.5 * dt, xs, xhs, Av, Bv, Cv, Dv, Lv, pc, pa, po,
                   ppre, ppost, oc, oa, oo, opre, opost, uc, ua, uo,
                   wc, wa, wo, dims, k3x, k3h, scratch)
            for i in range(dims.n):
                xs[i] = x[i] + dt * k3x[i]
                xhs[i] = xh[i] + dt * k3h[i]
            _deriv(t + dt, xs, xhs, Av, Bv, Cv, Dv, Lv, pc, pa, po,
                   ppre, ppost, oc, oa, oo, opre, opost, uc, ua, uo,
                   wc, wa, wo, dims, k4x, k4h, scratch)
            ok = True
            for i in range(dims.n):
                x[i] = x[i] + (dt / 6.0) * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
                xh[i] = xh[i] + (dt / 6.0) * (k1h[i] + 2.0 * k2h[i] + 2.0 * k3h[i] + k4h[i])
                X[k + 1, i] = x[i]
                XH[k + 1, i] = xh[i]
                if not (isfinite(x[i]) and isfinite(xh[i])):
                    ok = False
            tt = (k + 1) * dt
            for i in range(dims.q):
                scratch[i] = 0.0
            if wo.shape[0] > 1:
                _eval_packed(wc, wa, wo, &tt, scratch)
            for i in range(dims.q):
                W[k + 1, i] = scratch[i]
            if not ok:
                first_bad = k + 1
                break

    return X_arr, XH_arr, W_arr, first_bad
