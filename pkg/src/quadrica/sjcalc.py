"""Calculus of complex symmetric matrices in symmetric Jordan form.

Everything here lives over the bilinear pairing x^T y (no conjugation).
A complex symmetric matrix decomposes into blocks a*I_p + J_p where J_p
is a symmetric nilpotent built from the isotropic vectors
f_j = (e_{2j-1} + i e_{2j})/sqrt(2).  Square roots are taken blockwise
as exact finite series, with the scalar branch pinned once and for all
by `csqrt`.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import binom

from .errors import NumericalError


def isotropic_vector(j, m):
    """f_j = (e_{2j-1} + i e_{2j})/sqrt(2) in C^m, so f_j^T f_j = 0.

    Indexing is 1-based: j runs from 1 to floor(m/2).
    """
    if j < 1 or 2 * j > m:
        raise IndexError(f"isotropic index {j} out of range for dimension {m}")
    f = np.zeros(m, dtype=complex)
    f[2 * j - 2] = 1.0
    f[2 * j - 1] = 1.0j
    return f / np.sqrt(2.0)


def basis_vector(j, m):
    """Standard e_j in C^m, 1-based."""
    e = np.zeros(m, dtype=complex)
    e[j - 1] = 1.0
    return e


def sj_block(p):
    """Symmetric nilpotent J_p with J_p^p = 0 and J_p^(p-1) != 0.

    Built from isotropic pairs: for p = 2m,
        J_p = sum_{j<m} (f_j conj(f_{j+1})^T + conj(f_{j+1}) f_j^T) + f_m f_m^T
    and for p = 2m+1 the tail couples f_m with e_p instead.
    """
    if p < 1:
        raise ValueError("block size must be >= 1")
    J = np.zeros((p, p), dtype=complex)
    if p == 1:
        return J
    m = p // 2
    for j in range(1, m):
        fj = isotropic_vector(j, p)
        fc = isotropic_vector(j + 1, p).conj()
        J += np.outer(fj, fc) + np.outer(fc, fj)
    fm = isotropic_vector(m, p)
    if p % 2 == 0:
        J += np.outer(fm, fm)
    else:
        ep = basis_vector(p, p)
        J += np.outer(fm, ep) + np.outer(ep, fm)
    return J


def csqrt(a):
    """Scalar square root with argument pinned to [-pi/2, pi/2).

    csqrt(-1) = -1j, csqrt(2j) = 1 + 1j, and Re csqrt(a) >= 0 with
    equality only on the negative real axis.  Zero has no pinned branch.
    """
    a = complex(a)
    if a == 0:
        raise ZeroDivisionError("csqrt(0) has no pinned branch")
    th = np.angle(a)
    if th == np.pi:
        th = -np.pi
    return complex(np.sqrt(abs(a)) * np.exp(0.5j * th))


@dataclass(frozen=True)
class SJBlock:
    """One elementary block: eigenvalue `a` on a size-p symmetric Jordan cell."""
    a: complex
    p: int

    def matrix(self):
        return self.a * np.eye(self.p, dtype=complex) + sj_block(self.p)


@dataclass(frozen=True)
class SJSpec:
    """Ordered block structure of a complex symmetric matrix."""
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(
            b if isinstance(b, SJBlock) else SJBlock(complex(b[0]), int(b[1]))
            for b in self.blocks)
        if not blocks:
            raise ValueError("SJSpec needs at least one block")
        if any(b.p < 1 for b in blocks):
            raise ValueError("block sizes must be >= 1")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self):
        return sum(b.p for b in self.blocks)

    def eigenvalues(self):
        """Eigenvalues with multiplicity, in block order."""
        return np.array([b.a for b in self.blocks for _ in range(b.p)])

    def matrix(self):
        return sla.block_diag(*(b.matrix() for b in self.blocks)).astype(complex)

    def block_slices(self):
        out, k = [], 0
        for b in self.blocks:
            out.append((b, slice(k, k + b.p)))
            k += b.p
        return out

    def to_json(self):
        return json.dumps({"blocks": [
            {"re": b.a.real, "im": b.a.imag, "p": b.p} for b in self.blocks]})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(SJBlock(complex(b["re"], b.get("im", 0.0)), int(b["p"]))
                         for b in data["blocks"]))


def as_spec(spec):
    if isinstance(spec, SJSpec):
        return spec
    return SJSpec(tuple(spec))


def sqrt_block(a, c, p):
    """Square root of a*I_p + c*J_p as the exact finite binomial series

        csqrt(a) * sum_{k<p} binom(1/2, k) (c/a)^k J_p^k.

    Squaring telescopes by the Vandermonde identity, so the result is
    exact up to rounding whenever a != 0.
    """
    a = complex(a)
    if a == 0:
        raise NumericalError("square root of a nilpotent block is undefined")
    J = sj_block(p)
    out = np.zeros((p, p), dtype=complex)
    Jk = np.eye(p, dtype=complex)
    r = complex(c) / a
    for k in range(p):
        out += binom(0.5, k) * r**k * Jk
        if k + 1 < p:
            Jk = Jk @ J
    return csqrt(a) * out


def sj_sqrt(spec):
    """Blockwise square root of the matrix described by `spec`.

    Requires every eigenvalue nonzero.  The branch per block follows
    `csqrt` of the eigenvalue, and any two matrices with the same block
    layout get commuting square roots.
    """
    spec = as_spec(spec)
    mats = [sqrt_block(b.a, 1.0, b.p) for b in spec.blocks]
    return sla.block_diag(*mats).astype(complex)


def sj_sqrt_pencil(spec, z):
    """Blockwise square root of I - z*M for the matrix M given by `spec`.

    The block for eigenvalue a becomes (1 - z a) I_p - z J_p, so the series
    of `sqrt_block` applies with shifted arguments.  Fails when some
    1 - z a vanishes.
    """
    spec = as_spec(spec)
    mats = [sqrt_block(1.0 - z * b.a, -z, b.p) for b in spec.blocks]
    return sla.block_diag(*mats).astype(complex)


def random_rotation(m, seed=0):
    """A complex rotation exp(S) with S antisymmetric, deterministic per seed.

    Satisfies R^T R = I exactly in exact arithmetic; for m = 1 this is [[1]].
    """
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    S = 0.5 * (S - S.T)
    return sla.expm(0.5 * S)


def random_spec(rng, max_dim=8, max_block=6, eig_min=0.3, eig_max=2.0):
    """Random SJSpec with nonzero, well-separated eigenvalue moduli.

    Eigenvalue moduli are kept in [eig_min, eig_max] so blockwise square
    roots stay well away from the branch point at 0.
    """
    dim = int(rng.integers(1, max_dim + 1))
    blocks, left = [], dim
    while left > 0:
        p = int(rng.integers(1, min(max_block, left) + 1))
        r = eig_min + (eig_max - eig_min) * rng.random()
        th = 2 * np.pi * rng.random()
        blocks.append(SJBlock(r * np.exp(1j * th), p))
        left -= p
    return SJSpec(tuple(blocks))
