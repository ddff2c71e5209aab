"""Parabolic parametrization x = L Z for quadrics without center.

For QWC and IQWC the map Z = (V, V^T V / 2) -> L Z covers the quadric by
a graph over C^n.  L is assembled from a square root of A plus a rank-one
completion of its kernel direction:

  QWC   L = sqrt(A + e_{n+1} e_{n+1}^T)^{-1}
  IQWC  L^{-1} = R^T S with S = sqrt(A + conj(f_1) conj(f_1)^T) and R a
        complex rotation whose last column is S f_1

In both cases L e_{n+1} spans ker A, L^T A L = I_{1,n} := diag(1,..,1,0),
and conjugating the confocal machinery by L turns sqrt(R_z) into the
square root of R'_z = I - z A' with A' = L^T A^2 L.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError
from .report import ResidualReport
from .sjcalc import (SJBlock, SJSpec, csqrt, isotropic_vector, basis_vector,
                     sj_block, sqrt_block, sj_sqrt_pencil)
from .confocal import c_vector, member


@dataclass(frozen=True)
class LMap:
    """Parabolic chart data: L, its inverse, A' = L^T A^2 L, calA = L^T L,
    and the kernel pairing (e_{n+1}, L^T f) used by traceability checks."""
    quadric: object
    L: np.ndarray
    Linv: np.ndarray
    A_prime: np.ndarray
    calA: np.ndarray
    kernel_data: dict

    @property
    def n(self):
        return self.L.shape[0] - 1

    @property
    def Apn(self):
        """Leading n x n part of A' (truncation convention)."""
        return self.A_prime[:-1, :-1]

    @property
    def calAn(self):
        return self.calA[:-1, :-1]

    @property
    def btilde(self):
        """(L^{-1} B)[:n]; zero for diagonal QWC."""
        return (self.Linv @ self.quadric.B)[:-1]

    def point(self, V):
        """x = L (V, V^T V/2)."""
        V = np.asarray(V, dtype=complex)
        Z = np.concatenate([V, [0.5 * (V @ V)]])
        return self.L @ Z


def cycle_sqrt(K, p):
    """Square root of a matrix with K^p = I by Lagrange interpolation of
    csqrt at the p-th roots of unity.  Shares the branch of `csqrt`."""
    w = np.exp(2j * np.pi * np.arange(p) / p)
    I = np.eye(K.shape[0], dtype=complex)
    out = np.zeros_like(K, dtype=complex)
    for r in range(p):
        term = csqrt(w[r]) * I
        for s in range(p):
            if s != r:
                term = term @ (K - w[s] * I) / (w[r] - w[s])
        out += term
    return out


def complete_rotation(cols, m, rng=None, seed=0):
    """Complete given bilinear-orthonormal columns to a complex rotation.

    Candidates are the standard basis followed by seeded random vectors;
    directions whose bilinear square drops below 1e-8 are skipped (the
    isotropic obstruction).  The given columns are placed LAST.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    fixed = [np.asarray(c, dtype=complex) for c in cols]
    new = []
    need = m - len(fixed)
    cands = [basis_vector(j + 1, m) for j in range(m)]
    cands += [rng.standard_normal(m) + 1j * rng.standard_normal(m)
              for _ in range(50)]
    for cand in cands:
        if len(new) == need:
            break
        v = cand.astype(complex)
        for u in fixed + new:
            v = v - u * (u @ v)
        s = v @ v
        if abs(s) < 1e-8:
            continue
        new.append(v / csqrt(s))
    if len(new) < need:
        raise NumericalError("failed to complete a complex rotation "
                             "(isotropic obstruction); retry with a new seed")
    R = np.stack(new + fixed, axis=1)
    return R


def build_lmap(Q, seed=0):
    """Construct the parabolic chart for a QWC or IQWC quadric."""
    if Q.kind == "QC":
        raise ValueError("central quadrics have no parabolic chart")
    m = Q.dim

    if Q.kind == "QWC":
        # kernel slot is the final size-1 block; the rank-one completion
        # acts on it alone, so S is still block diagonal
        mats = []
        for b, sl in Q.spec.block_slices():
            if b.a == 0:
                mats.append(np.eye(1, dtype=complex))
            else:
                mats.append(sqrt_block(b.a, 1.0, b.p))
        S = sla.block_diag(*mats).astype(complex)
        L = np.linalg.inv(S)
        Linv = S
    else:
        mats = []
        for b, sl in Q.spec.block_slices():
            if b.a == 0:
                K = sj_block(b.p) + np.outer(
                    isotropic_vector(1, b.p).conj(),
                    isotropic_vector(1, b.p).conj())
                mats.append(cycle_sqrt(K, b.p))
            else:
                mats.append(sqrt_block(b.a, 1.0, b.p))
        S = sla.block_diag(*mats).astype(complex)
        U = S @ isotropic_vector(1, m)
        R = complete_rotation([U], m, seed=seed)
        Linv = R.T @ S
        L = np.linalg.inv(S) @ R

    A_prime = L.T @ (Q.A @ Q.A) @ L
    calA = L.T @ L
    kd = {"kernel_image": L[:, -1].copy()}
    if Q.kind == "IQWC":
        kd["pairing"] = L.T @ isotropic_vector(1, m)
    return LMap(Q, L, Linv, A_prime, calA, kd)


def sqrt_r_prime(lm, z):
    """sqrt(I - z A') on the chart side.

    Diagonal A' gets the elementwise root; otherwise a dense principal
    square root is taken, which agrees with the blockwise branch for any
    admissible z (all eigenvalues of R'_z stay off the negative axis).
    """
    m = lm.L.shape[0]
    Ap = lm.A_prime
    off = Ap - np.diag(np.diag(Ap))
    if np.abs(off).max() < 1e-13 * max(1.0, np.abs(Ap).max()):
        d = np.diag(Ap)
        vals = np.array([csqrt(1.0 - z * a) if abs(1.0 - z * a) > 1e-14
                         else 0.0 for a in d])
        if np.any(vals == 0.0):
            raise NumericalError("R'_z singular at this z")
        return np.diag(vals)
    return sla.sqrtm(np.eye(m, dtype=complex) - z * Ap)


def lmap_identity_suite(Q, lm, z, samples=10, seed=0):
    """Residuals of the five chart identities at parameter z.

    With P = I_{1,n}, S = sqrt(R_z), S' = sqrt(R'_z), c = C(z):

      conjugation   P L^{-1} S L = P S'
      last_row      e_{n+1}^T L^{-1} S L = (-P L^{-1} c + e_{n+1})^T
      c_closure     |P L^{-1} c|^2 - 2 e_{n+1}^T L^{-1} c + z |B|^2 = 0
      c_transport   (I + S') P L^{-1} c = -z P L^{-1} B
      normal_sq     |N(x)|^2 = Z^T A' Z + 2 Z^T P L^{-1} B + |B|^2
                    at sampled x = L Z
    """
    z = complex(z)
    m = Q.dim
    S = sj_sqrt_pencil(Q.spec, z)
    c = c_vector(Q, z)
    Sp = sqrt_r_prime(lm, z)
    P = np.eye(m, dtype=complex)
    P[-1, -1] = 0.0
    Linv = lm.Linv
    en = basis_vector(m, m)
    B = Q.B

    conj = P @ Linv @ S @ lm.L - P @ Sp
    lc = Linv @ c
    last = (en @ (Linv @ S @ lm.L)) - (-(P @ lc) + en)
    closure = (P @ lc) @ (P @ lc) - 2.0 * (en @ lc) + z * (B @ B)
    transport = (np.eye(m) + Sp) @ (P @ lc) + z * (P @ (Linv @ B))

    rng = np.random.default_rng(seed)
    nres = []
    for _ in range(samples):
        V = 0.7 * (rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1))
        Z = np.concatenate([V, [0.5 * (V @ V)]])
        x = lm.L @ Z
        nrm = Q.A @ x + B
        rhs = Z @ (lm.A_prime @ Z) + 2.0 * (Z @ (P @ (Linv @ B))) + B @ B
        nres.append((nrm @ nrm) - rhs)

    rep = ResidualReport(meta={"kind": Q.kind, "z": [z.real, z.imag]})
    rep.add("conjugation", conj)
    rep.add("last_row", last)
    rep.add("c_closure", closure)
    rep.add("c_transport", transport)
    rep.add("normal_sq", np.array(nres))
    return rep


def tc_z_residual(Q, lm, z, samples=10, seed=0):
    """Chart-side form of the segment pairing: for x_i = L Z_i,

      (x_z^1 - x_0^0)^T N(x^0) = Z_0^T P S' Z_1
        + (Z_0 + Z_1)^T (P L^{-1} c - e_{n+1}) ... shifted by the scalar
      e_{n+1}^T L^{-1} c.

    Returns max deviation over sampled pairs.
    """
    z = complex(z)
    m = Q.dim
    mem = member(Q, z)
    Sp = sqrt_r_prime(lm, z)
    P = np.eye(m, dtype=complex)
    P[-1, -1] = 0.0
    lc = lm.Linv @ mem.c
    en = basis_vector(m, m)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(samples):
        V0 = 0.7 * (rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1))
        V1 = 0.7 * (rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1))
        Z0 = np.concatenate([V0, [0.5 * (V0 @ V0)]])
        Z1 = np.concatenate([V1, [0.5 * (V1 @ V1)]])
        x0 = lm.L @ Z0
        xz1 = mem.S @ (lm.L @ Z1) + mem.c
        lhs = (xz1 - x0) @ (Q.A @ x0 + Q.B)
        rhs = (Z0 @ (P @ (Sp @ Z1))
               + (Z0 + Z1) @ (P @ lc - en) - en @ lc)
        out.append(lhs - rhs)
    return np.abs(np.array(out)).max()
