"""Line-sweep integration kernels.

Each sweep advances a state along axis 0 of a (nodes, batch, ...) array
with classical RK4, taking coefficient values at the nodes and at the
midpoints (interpolated by the caller).  The same source compiles under
numba when available and the QUADRICA_NUMBA flag is not disabled;
otherwise the plain Python definitions run as-is.
"""

import os

import numpy as np

_flag = os.environ.get("QUADRICA_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "off", "no")
HAVE_NUMBA = False
if USE_NUMBA:
    try:
        from numba import njit
        HAVE_NUMBA = True
    except ImportError:
        pass
if not HAVE_NUMBA:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(f):
            return f
        return wrap


@njit(cache=True)
def _frame_rhs(V, La, R, W, Ap, bvec, j, outV, outL):
    # dV = La[j] R e_j ; dLa = W La - e_j (R^T (Ap V + b))_j
    n = V.shape[0]
    for i in range(n):
        outV[i] = La[j] * R[i, j]
    s = 0.0 + 0.0j
    for i in range(n):
        acc = bvec[i]
        for q in range(n):
            acc += Ap[i, q] * V[q]
        s += R[i, j] * acc
    for i in range(n):
        acc = 0.0 + 0.0j
        for q in range(n):
            acc += W[i, q] * La[q]
        outL[i] = acc
    outL[j] -= s


@njit(cache=True)
def frame_sweep(V, La, Re, Rm, We, Wm, Ap, bvec, j, h):
    """Primary-axis frame sweep; V, La are (m, B, n) with row 0 set."""
    m, B, n = V.shape
    k1v = np.empty(n, np.complex128)
    k1l = np.empty(n, np.complex128)
    k2v = np.empty(n, np.complex128)
    k2l = np.empty(n, np.complex128)
    k3v = np.empty(n, np.complex128)
    k3l = np.empty(n, np.complex128)
    k4v = np.empty(n, np.complex128)
    k4l = np.empty(n, np.complex128)
    tv = np.empty(n, np.complex128)
    tl = np.empty(n, np.complex128)
    for b in range(B):
        for k in range(m - 1):
            v0 = V[k, b]
            l0 = La[k, b]
            _frame_rhs(v0, l0, Re[k, b], We[k, b], Ap, bvec, j, k1v, k1l)
            for i in range(n):
                tv[i] = v0[i] + 0.5 * h * k1v[i]
                tl[i] = l0[i] + 0.5 * h * k1l[i]
            _frame_rhs(tv, tl, Rm[k, b], Wm[k, b], Ap, bvec, j, k2v, k2l)
            for i in range(n):
                tv[i] = v0[i] + 0.5 * h * k2v[i]
                tl[i] = l0[i] + 0.5 * h * k2l[i]
            _frame_rhs(tv, tl, Rm[k, b], Wm[k, b], Ap, bvec, j, k3v, k3l)
            for i in range(n):
                tv[i] = v0[i] + h * k3v[i]
                tl[i] = l0[i] + h * k3l[i]
            _frame_rhs(tv, tl, Re[k + 1, b], We[k + 1, b], Ap, bvec, j,
                       k4v, k4l)
            for i in range(n):
                V[k + 1, b, i] = v0[i] + (h / 6.0) * (
                    k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
                La[k + 1, b, i] = l0[i] + (h / 6.0) * (
                    k1l[i] + 2.0 * k2l[i] + 2.0 * k3l[i] + k4l[i])


@njit(cache=True)
def _ext_rhs(V, La, Om, mc, nc, Acol, fv, l, outV, outL):
    # dV = Om V + (n.V - m.La) A e_l + f ; dLa = V[l] m
    n = V.shape[0]
    s = 0.0 + 0.0j
    for q in range(n):
        s += nc[q] * V[q] - mc[q] * La[q]
    for i in range(n):
        acc = fv[i] + s * Acol[i]
        for q in range(n):
            acc += Om[i, q] * V[q]
        outV[i] = acc
        outL[i] = V[l] * mc[i]


@njit(cache=True)
def ext_frame_sweep(V, La, Ome, Omm, me, mm, ne, nm, fe, fm, Acol, l, h):
    """Secondary-axis frame sweep; forcing f = calA Om btilde per node."""
    m, B, n = V.shape
    k1v = np.empty(n, np.complex128)
    k1l = np.empty(n, np.complex128)
    k2v = np.empty(n, np.complex128)
    k2l = np.empty(n, np.complex128)
    k3v = np.empty(n, np.complex128)
    k3l = np.empty(n, np.complex128)
    k4v = np.empty(n, np.complex128)
    k4l = np.empty(n, np.complex128)
    tv = np.empty(n, np.complex128)
    tl = np.empty(n, np.complex128)
    for b in range(B):
        for k in range(m - 1):
            v0 = V[k, b]
            l0 = La[k, b]
            _ext_rhs(v0, l0, Ome[k, b], me[k, b], ne[k, b], Acol, fe[k, b],
                     l, k1v, k1l)
            for i in range(n):
                tv[i] = v0[i] + 0.5 * h * k1v[i]
                tl[i] = l0[i] + 0.5 * h * k1l[i]
            _ext_rhs(tv, tl, Omm[k, b], mm[k, b], nm[k, b], Acol, fm[k, b],
                     l, k2v, k2l)
            for i in range(n):
                tv[i] = v0[i] + 0.5 * h * k2v[i]
                tl[i] = l0[i] + 0.5 * h * k2l[i]
            _ext_rhs(tv, tl, Omm[k, b], mm[k, b], nm[k, b], Acol, fm[k, b],
                     l, k3v, k3l)
            for i in range(n):
                tv[i] = v0[i] + h * k3v[i]
                tl[i] = l0[i] + h * k3l[i]
            _ext_rhs(tv, tl, Ome[k + 1, b], me[k + 1, b], ne[k + 1, b],
                     Acol, fe[k + 1, b], l, k4v, k4l)
            for i in range(n):
                V[k + 1, b, i] = v0[i] + (h / 6.0) * (
                    k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i])
                La[k + 1, b, i] = l0[i] + (h / 6.0) * (
                    k1l[i] + 2.0 * k2l[i] + 2.0 * k3l[i] + k4l[i])


@njit(cache=True)
def _ric_rhs(R, W, p, j, out):
    # dR = -R W - (R e_j)(p^T R) + p e_j^T
    n = R.shape[0]
    for a in range(n):
        for c in range(n):
            acc = 0.0 + 0.0j
            for q in range(n):
                acc -= R[a, q] * W[q, c]
            out[a, c] = acc
    pr = np.empty(n, np.complex128)
    for c in range(n):
        acc = 0.0 + 0.0j
        for q in range(n):
            acc += p[q] * R[q, c]
        pr[c] = acc
    for a in range(n):
        raj = R[a, j]
        for c in range(n):
            out[a, c] -= raj * pr[c]
        out[a, j] += p[a]


@njit(cache=True)
def ricatti_sweep(R1, We, Wm, pe, pm, j, h):
    """Primary-axis Ricatti sweep; R1 is (m, B, n, n) with row 0 set."""
    m, B, n, _ = R1.shape
    k1 = np.empty((n, n), np.complex128)
    k2 = np.empty((n, n), np.complex128)
    k3 = np.empty((n, n), np.complex128)
    k4 = np.empty((n, n), np.complex128)
    t = np.empty((n, n), np.complex128)
    for b in range(B):
        for k in range(m - 1):
            r0 = R1[k, b]
            _ric_rhs(r0, We[k, b], pe[k, b], j, k1)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + 0.5 * h * k1[a, c]
            _ric_rhs(t, Wm[k, b], pm[k, b], j, k2)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + 0.5 * h * k2[a, c]
            _ric_rhs(t, Wm[k, b], pm[k, b], j, k3)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + h * k3[a, c]
            _ric_rhs(t, We[k + 1, b], pe[k + 1, b], j, k4)
            for a in range(n):
                for c in range(n):
                    R1[k + 1, b, a, c] = r0[a, c] + (h / 6.0) * (
                        k1[a, c] + 2.0 * k2[a, c] + 2.0 * k3[a, c]
                        + k4[a, c])


@njit(cache=True)
def _ric_ext_rhs(R, P, mc, q, out):
    # dR = P R + q m^T - (R m)(q^T R)
    n = R.shape[0]
    rm = np.empty(n, np.complex128)
    qr = np.empty(n, np.complex128)
    for a in range(n):
        acc = 0.0 + 0.0j
        for c in range(n):
            acc += R[a, c] * mc[c]
        rm[a] = acc
    for c in range(n):
        acc = 0.0 + 0.0j
        for a in range(n):
            acc += q[a] * R[a, c]
        qr[c] = acc
    for a in range(n):
        for c in range(n):
            acc = q[a] * mc[c] - rm[a] * qr[c]
            for s in range(n):
                acc += P[a, s] * R[s, c]
            out[a, c] = acc


@njit(cache=True)
def ricatti_ext_sweep(R1, Pe, Pm, me, mm, q, h):
    """Secondary-axis Ricatti sweep with constant q = D^{-1} e_l."""
    m, B, n, _ = R1.shape
    k1 = np.empty((n, n), np.complex128)
    k2 = np.empty((n, n), np.complex128)
    k3 = np.empty((n, n), np.complex128)
    k4 = np.empty((n, n), np.complex128)
    t = np.empty((n, n), np.complex128)
    for b in range(B):
        for k in range(m - 1):
            r0 = R1[k, b]
            _ric_ext_rhs(r0, Pe[k, b], me[k, b], q, k1)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + 0.5 * h * k1[a, c]
            _ric_ext_rhs(t, Pm[k, b], mm[k, b], q, k2)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + 0.5 * h * k2[a, c]
            _ric_ext_rhs(t, Pm[k, b], mm[k, b], q, k3)
            for a in range(n):
                for c in range(n):
                    t[a, c] = r0[a, c] + h * k3[a, c]
            _ric_ext_rhs(t, Pe[k + 1, b], me[k + 1, b], q, k4)
            for a in range(n):
                for c in range(n):
                    R1[k + 1, b, a, c] = r0[a, c] + (h / 6.0) * (
                        k1[a, c] + 2.0 * k2[a, c] + 2.0 * k3[a, c]
                        + k4[a, c])


def warmup():
    """Trigger JIT compilation on tiny inputs (no-op without numba)."""
    n = 2
    m = 3
    I = np.zeros((m, 1, n, n), np.complex128)
    I[:] = np.eye(n)
    Im = I[: m - 1]
    vec = np.zeros((m, 1, n), np.complex128)
    vecm = vec[: m - 1]
    V = np.zeros((m, 1, n), np.complex128)
    La = np.zeros((m, 1, n), np.complex128)
    Ap = np.eye(n, dtype=np.complex128)
    b = np.zeros(n, np.complex128)
    frame_sweep(V, La, I, Im, 0 * I, 0 * Im, Ap, b, 0, 0.01)
    ext_frame_sweep(V, La, 0 * I, 0 * Im, vec, vecm, vec, vecm, vec, vecm,
                    b, 0, 0.01)
    R1 = I.copy()
    ricatti_sweep(R1, 0 * I, 0 * Im, vec, vecm, 0, 0.01)
    ricatti_ext_sweep(R1, 0 * I, 0 * Im, vec, vecm, b, 0.01)
