"""Leaf transforms of frame states and their permutability.

A solved frame state can be grafted with a one-parameter family of new
leaves.  For each admissible parameter z an auxiliary orthogonal field
solves a Ricatti system driven by the background connection; an
algebraic map then rebuilds the companion vector pair on the new leaf,
and the auxiliary field itself becomes the leaf's rotation.  Composing
two such transforms requires no further integration: a closed
Moebius-type formula produces the fourth rotation directly, and the two
composition orders land on the same leaf.

Orthogonality of the integrated auxiliary field is monitored, never
re-imposed; its drift bounds the quality of everything algebraic built
on top.
"""

import numpy as np

from . import kernels
from . import netgrid
from .confocal import c_vector
from .errors import NumericalError
from .lmap import sqrt_r_prime
from .report import ResidualReport
from .sjcalc import csqrt

_mm = netgrid._mm


def transform_factors(lm, z, branch=1):
    """Scalars and matrices entering the transform with parameter z.

    Returns (sz, S, D, ct): sz the chosen square root of z, S the
    matching root of I - z A' on the leading n x n block, D = S / sz,
    and ct the constant shift of the V update.  `branch` = +-1 selects
    the root of z; the inverse transform uses the opposite sign.
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    z = complex(z)
    if z == 0:
        raise ValueError("transform parameter must be nonzero")
    n = lm.n
    S = np.asarray(sqrt_r_prime(lm, z), dtype=complex)[:n, :n]
    sz = branch * csqrt(z)
    D = S / sz
    ct = (lm.Linv @ c_vector(lm.quadric, z))[:n]
    return sz, S, D, ct


def _require_diagonal(Ap, what):
    off = Ap - np.diag(np.diag(Ap))
    if np.abs(off).max() > 1e-12 * max(1.0, np.abs(Ap).max()):
        raise ValueError(what + " requires a diagonal quadratic part")


def orthogonality_drift(Rfield):
    """Max deviation of R R^T from the identity over the field."""
    n = Rfield.shape[-1]
    RRt = np.einsum("...ij,...kj->...ik", Rfield, Rfield)
    return float(np.abs(RRt - np.eye(n)).max())


def _ricatti_rhs_primary(R1, Rback, omj, pfld, j):
    """dR = -R w'_j - (R e_j)(p^T R) + p e_j^T, p = D R e_j."""
    out = -_mm(R1, omj)
    pR = np.einsum("...i,...ik->...k", pfld, R1)
    out -= R1[..., :, j, None] * pR[..., None, :]
    out[..., :, j] += pfld
    return out


def _ricatti_rhs_secondary(R1, Pfld, mcol, qvec):
    """dR = P R + q m^T - (R m)(q^T R) for one secondary axis."""
    out = _mm(Pfld, R1)
    out += qvec[:, None] * mcol[..., None, :]
    Rm = np.einsum("...ik,...k->...i", R1, mcol)
    qR = np.einsum("i,...ik->...k", qvec, R1)
    out -= Rm[..., :, None] * qR[..., None, :]
    return out


def _secondary_coeffs(st, lm, D, grid, l):
    """P field, m column and q vector for secondary axis n + l."""
    n = grid.n
    a = n + l
    dR = netgrid.grad(st.R, grid, a)
    Om = np.einsum("...ij,...kj->...ik", dR, st.R)
    ncol = st.N[..., :, l]
    dv = np.diag(D)
    core = Om * (dv[None, :] ** 2)
    core[..., :, l] += ncol
    P = core / dv[:, None] / dv[None, :]
    q = np.zeros(n, dtype=complex)
    q[l] = 1.0 / dv[l]
    return P, st.M[..., :, l], q


def integrate_ricatti(st, lm, z, branch=1, init=None, substeps=1):
    """Solve the auxiliary rotation field over the grid of `st`.

    The initial value at the origin corner is the identity by default.
    A complex-orthogonal start keeps the whole field orthogonal up to
    integration drift; a start off the group is legitimate input (the
    deviation obeys a linear equation, so it stays bounded) and both the
    initial and final deviation are reported rather than rejected.
    Sweeps axis by axis with RK4, primaries first; on extended grids the
    background M, N enter the secondary sweeps and the quadratic part
    must be diagonal.
    """
    grid = st.grid
    n = grid.n
    sz, S, D, ct = transform_factors(lm, z, branch)
    om = netgrid.omega_prime(st.R, grid)

    R0 = np.eye(n, dtype=complex) if init is None \
        else np.asarray(init, dtype=complex)
    init_dev = float(np.abs(R0 @ R0.T - np.eye(n)).max())
    if grid.extra:
        _require_diagonal(np.asarray(lm.Apn), "an extended-grid transform")

    R1 = np.zeros(grid.shape + (n, n), dtype=complex)
    R1[(0,) * grid.axes] = R0
    h = grid.h / substeps

    for a in range(grid.axes):
        slab, idx, shp = netgrid._axis_slab(R1, grid, a, 2)
        m = slab.shape[0]
        Rr = np.zeros((substeps * (m - 1) + 1,) + slab.shape[1:], complex)
        Rr[0] = slab[0]
        if a < n:
            pfld = np.einsum("ij,...j->...i", D, st.R[..., :, a])
            We, Wm = netgrid._coef_lines(om.coeffs[a], grid, a, 2, substeps)
            pe, pm = netgrid._coef_lines(pfld, grid, a, 1, substeps)
            kernels.ricatti_sweep(Rr, We, Wm, pe, pm, a, h)
        else:
            P, mcol, q = _secondary_coeffs(st, lm, D, grid, a - n)
            Pe, Pm = netgrid._coef_lines(P, grid, a, 2, substeps)
            me, mm = netgrid._coef_lines(mcol, grid, a, 1, substeps)
            kernels.ricatti_ext_sweep(Rr, Pe, Pm, me, mm,
                                      np.ascontiguousarray(q), h)
        R1[idx + (Ellipsis,)] = netgrid._slab_restore(Rr[::substeps], grid,
                                                      a, idx, shp)

    rep = ResidualReport(grid_h=grid.h, meta={"z": [z.real, z.imag],
                                              "branch": branch})
    rep.add("init_orthogonality", init_dev)
    rep.add("orthogonality", orthogonality_drift(R1))
    return R1, rep


def ricatti_residual(R1f, st, lm, z, branch=1, trim=2):
    """Pointwise defect of a rotation field in the transform equations.

    Compares centered differences of `R1f` on the grid of `st` against
    the Ricatti right-hand sides built from the background state; O(h^2)
    when `R1f` solves the transform over this background.
    """
    grid = st.grid
    n = grid.n
    sz, S, D, ct = transform_factors(lm, z, branch)
    om = netgrid.omega_prime(st.R, grid)
    rep = ResidualReport(grid_h=grid.h)
    prim = []
    for j in range(n):
        fd = netgrid.grad(R1f, grid, j)
        pfld = np.einsum("ij,...j->...i", D, st.R[..., :, j])
        rhs = _ricatti_rhs_primary(R1f, st.R, om.coeffs[j], pfld, j)
        prim.append(netgrid.interior(fd - rhs, grid, trim))
    rep.add("ricatti_primary", np.concatenate([p.ravel() for p in prim]))
    if grid.extra:
        sec = []
        for l in range(grid.extra):
            P, mcol, q = _secondary_coeffs(st, lm, D, grid, l)
            fd = netgrid.grad(R1f, grid, grid.n + l)
            rhs = _ricatti_rhs_secondary(R1f, P, mcol, q)
            sec.append(netgrid.interior(fd - rhs, grid, trim))
        rep.add("ricatti_secondary", np.concatenate([s.ravel() for s in sec]))
    return rep


def ricatti_plaquette(R1f, st, lm, z, branch=1):
    """Euler two-edge transport mismatch of the auxiliary field.

    Same face test as the frame plaquette: one explicit Euler step along
    each edge order of every face, compared with the stored field at the
    opposite corner.  Returns (worst residual, worst two-path
    difference); the former is O(h^2), the latter O(h^3) for data that
    actually composes.
    """
    grid = st.grid
    h = grid.h
    n = grid.n
    sz, S, D, ct = transform_factors(lm, z, branch)
    om = netgrid.omega_prime(st.R, grid)

    coeffs = {}
    for j in range(n):
        coeffs[j] = (om.coeffs[j],
                     np.einsum("ij,...j->...i", D, st.R[..., :, j]))
    for l in range(grid.extra):
        coeffs[n + l] = _secondary_coeffs(st, lm, D, grid, l)

    def euler(Rm, a):
        if a < n:
            omj, pfld = coeffs[a]
            return Rm + h * _ricatti_rhs_primary(Rm, st.R, omj, pfld, a)
        P, mcol, q = coeffs[a]
        return Rm + h * _ricatti_rhs_secondary(Rm, P, mcol, q)

    def face(f, a, sa, b, sb):
        sl = [slice(None)] * grid.axes
        sl[a] = sa
        sl[b] = sb
        return f[tuple(sl) + (Ellipsis,)]

    lo, hi = slice(None, -1), slice(1, None)
    worst = 0.0
    worst_diff = 0.0
    for a in range(grid.axes):
        for b in range(a + 1, grid.axes):
            RA = euler(np.roll(euler(R1f, a), 1, axis=a), b)
            RB = euler(np.roll(euler(R1f, b), 1, axis=b), a)
            tgt = face(R1f, a, hi, b, hi)
            predA = face(RA, a, hi, b, lo)
            predB = face(RB, a, lo, b, hi)
            worst = max(worst, float(np.abs(predA - tgt).max()),
                        float(np.abs(predB - tgt).max()))
            worst_diff = max(worst_diff,
                             float(np.abs(predA - predB).max()))
    return worst, worst_diff


def leaf(st, R1f, lm, z, branch=1):
    """Algebraic leaf built from a background state and auxiliary field.

    V and Lambda transform affinely; on extended grids the leaf's M, N
    columns follow (diagonal quadratic part required, with each secondary
    direction an eigenvector).  The returned FrameState carries `R1f` as
    its rotation, so the transform with the opposite branch and the old
    rotation as auxiliary field maps the leaf straight back to `st`.
    """
    grid = st.grid
    n = grid.n
    sz, S, D, ct = transform_factors(lm, z, branch)
    Ap = np.asarray(lm.Apn, dtype=complex)
    bt = np.asarray(lm.btilde, dtype=complex)

    R1La = np.einsum("...ij,...j->...i", R1f, st.Lam)
    V1 = np.einsum("ij,...j->...i", S, st.V) - sz * R1La + ct
    inner = sz * np.einsum("ij,...j->...i", Ap, st.V) \
        + np.einsum("ij,...j->...i", S, R1La) + sz * bt
    La1 = np.einsum("...ji,...j->...i", st.R, inner)

    M1 = N1 = None
    if grid.extra and st.M is not None:
        _require_diagonal(Ap, "a leaf with secondary directions")
        dv = np.diag(D)
        apd = np.diag(Ap)
        M1 = np.zeros_like(st.M)
        N1 = np.zeros_like(st.N)
        for l in range(grid.extra):
            Rm = np.einsum("...ij,...j->...i", R1f, st.M[..., :, l])
            mi = np.einsum("ij,...j->...i", D, Rm) - st.N[..., :, l]
            M1[..., :, l] = np.einsum("...ji,...j->...i", st.R, mi) / dv[l]
            ni = (apd[None, :] - apd[l]) * Rm \
                + np.einsum("ij,...j->...i", D, st.N[..., :, l])
            N1[..., :, l] = ni / dv[l]

    out = netgrid.FrameState(grid, np.asarray(R1f, dtype=complex), V1, La1,
                             M1, N1)
    rep = ResidualReport(grid_h=grid.h, meta={"z": [z.real, z.imag],
                                              "branch": branch})
    rep.add("prime_integral", out.prime_integral(lm))
    rep.add("orthogonality", orthogonality_drift(R1f))
    out.report = rep
    return out


def transform_fundamental(fs, leaf_st, lm, z, branch=1):
    """Push a fundamental system through the transform of its base.

    Homogeneous solutions map by the linear part of the leaf update;
    the moving pairing is preserved exactly, so the image is again a
    fundamental system, now over `leaf_st`.  The residual Gram drift is
    reported.
    """
    st = fs.base
    grid = st.grid
    n = grid.n
    sz, S, D, ct = transform_factors(lm, z, branch)
    Ap = np.asarray(lm.Apn, dtype=complex)
    R1f = leaf_st.R

    RLa = np.einsum("...ij,a...j->a...i", R1f, fs.Lams)
    Vs1 = np.einsum("ij,a...j->a...i", S, fs.Vs) - sz * RLa
    inner = sz * np.einsum("ij,a...j->a...i", Ap, fs.Vs) \
        + np.einsum("ij,a...j->a...i", S, RLa)
    Lams1 = np.einsum("...ji,a...j->a...i", st.R, inner)

    out = netgrid.FundamentalSystem(leaf_st, Vs1, Lams1)
    G = np.zeros((2 * n, 2 * n), dtype=complex)
    G[:n, :n] = Ap
    G[n:, n:] = np.eye(n)
    cols = np.concatenate([
        np.concatenate([Vs1, Lams1], axis=-1),
        np.concatenate([1j * leaf_st.V, 1j * leaf_st.Lam], axis=-1)[None]])
    gram = np.einsum("a...i,ij,b...j->...ab", cols, G, cols)
    rep = ResidualReport(grid_h=grid.h)
    rep.add("vla_gram", gram - np.eye(2 * n, dtype=complex))
    out.report = rep
    return out


def leaf_space(x0, fs, leaf_st, lm, z):
    """Realize the leaf in the ambient space of the base realization.

    x1 = x0 + calV (S V1 - V0 + ct), with calV the stacked fundamental
    rows of the base system; the shift is branch independent.
    """
    st = fs.base
    sz, S, D, ct = transform_factors(lm, z, 1)
    arg = np.einsum("ij,...j->...i", S, leaf_st.V) - st.V + ct
    return x0 + np.einsum("...ai,...i->...a", fs.calV(), arg)


def roundtrip_residual(st, leaf_st, lm, z, branch=1):
    """Apply the inverse transform to a leaf and compare with its seed.

    The inverse uses the seed rotation as auxiliary field and the
    opposite branch; the mismatch is pure drift plus roundoff.
    """
    back = leaf(leaf_st, st.R, lm, z, -branch)
    rep = ResidualReport(grid_h=st.grid.h)
    rep.add("roundtrip_V", back.V - st.V)
    rep.add("roundtrip_Lam", back.Lam - st.Lam)
    if st.M is not None and back.M is not None:
        rep.add("roundtrip_M", back.M - st.M)
        rep.add("roundtrip_N", back.N - st.N)
    return rep


def bpt_rotation(st0, leaf_a, leaf_b, lm, za, zb, branch_a=1, branch_b=1,
                 mask_limit=0.01):
    """Fourth rotation field of the permuted double transform.

    With K = R_b R_a^T and D_j = S_j / sz_j the new field is
    R_3 = (D_b - D_a K)(D_b K - D_a)^{-1} R_0.  Points where the
    resolvent factor is near singular are masked; more than
    `mask_limit` of them aborts.  Returns (R3, report) where the report
    carries the pivot identity residual, the orthogonality drift of R3
    and the masked fraction.
    """
    za, zb = complex(za), complex(zb)
    if abs(za - zb) < 1e-12 * max(1.0, abs(za), abs(zb)):
        raise ValueError("double transform needs distinct parameters")
    n = st0.grid.n
    sza, Sa, Da, _ = transform_factors(lm, za, branch_a)
    szb, Sb, Db, _ = transform_factors(lm, zb, branch_b)

    K = np.einsum("...ij,...kj->...ik", leaf_b.R, leaf_a.R)
    Bmat = _mm(np.broadcast_to(Db, K.shape), K) - Da
    Amat = Db - _mm(np.broadcast_to(Da, K.shape), K)

    det = np.linalg.det(Bmat)
    scale = np.abs(Bmat).max()
    bad = np.abs(det) < 1e-10 * max(1.0, scale ** n)
    frac = float(np.mean(bad))
    if frac > mask_limit:
        raise NumericalError(
            f"singular pivot on {frac:.1%} of the grid; parameters too "
            "close to a branch locus")
    Bsafe = Bmat.copy()
    Bsafe[bad] = np.eye(n)
    U = _mm(Amat, np.linalg.inv(Bsafe))
    R3 = _mm(U, st0.R)

    piv = _mm(_mm(np.broadcast_to(Db, K.shape), U) + Da, Bmat)
    target = (1.0 / zb - 1.0 / za) * np.eye(n, dtype=complex)
    rep = ResidualReport(grid_h=st0.grid.h,
                         meta={"za": [za.real, za.imag],
                               "zb": [zb.real, zb.imag]})
    ok = ~bad
    rep.add("bpt_identity", (piv - target)[ok])
    rep.add("orthogonality", np.abs(
        np.einsum("...ij,...kj->...ik", R3, R3) - np.eye(n))[ok])
    rep.add("masked_fraction", frac)
    return R3, rep


def bianchi_quad(st0, fs0, lm, za, zb, init_a=None, init_b=None,
                 branch_a=1, branch_b=1, substeps=1):
    """Run the full double-transform square from one seed state.

    Integrates the two first-level auxiliary fields, builds both
    intermediate leaves, closes the square with the algebraic fourth
    rotation, and assembles the fourth leaf along both routes.  Returns
    a dict with the four states, the fourth-leaf realizations from both
    routes, and a report with the closure residuals.
    """
    grid = st0.grid
    x0 = netgrid.model_surface(st0, lm)

    Ra, rep_a = integrate_ricatti(st0, lm, za, branch_a, init=init_a,
                                  substeps=substeps)
    Rb, rep_b = integrate_ricatti(st0, lm, zb, branch_b, init=init_b,
                                  substeps=substeps)
    st_a = leaf(st0, Ra, lm, za, branch_a)
    st_b = leaf(st0, Rb, lm, zb, branch_b)
    R3, rep3 = bpt_rotation(st0, st_a, st_b, lm, za, zb, branch_a,
                            branch_b)

    st3a = leaf(st_a, R3, lm, zb, branch_b)
    st3b = leaf(st_b, R3, lm, za, branch_a)

    fs_a = transform_fundamental(fs0, st_a, lm, za, branch_a)
    fs_b = transform_fundamental(fs0, st_b, lm, zb, branch_b)
    x_a = leaf_space(x0, fs0, st_a, lm, za)
    x_b = leaf_space(x0, fs0, st_b, lm, zb)
    x3a = leaf_space(x_a, fs_a, st3a, lm, zb)
    x3b = leaf_space(x_b, fs_b, st3b, lm, za)

    rep = ResidualReport(grid_h=grid.h)
    rep.merge(rep3)
    rep.add("closure_V", st3a.V - st3b.V)
    rep.add("closure_Lam", st3a.Lam - st3b.Lam)
    rep.add("closure_x", x3a - x3b)
    rep.add("drift_a", rep_a["orthogonality"])
    rep.add("drift_b", rep_b["orthogonality"])
    rep.add("prime_a", st_a.report["prime_integral"])
    rep.add("prime_b", st_b.report["prime_integral"])
    return {"seed": st0, "leaf_a": st_a, "leaf_b": st_b,
            "fourth_a": st3a, "fourth_b": st3b,
            "x": {"seed": x0, "a": x_a, "b": x_b, "fourth_a": x3a,
                  "fourth_b": x3b},
            "fields": {"a": Ra, "b": Rb, "third": R3},
            "report": rep}
