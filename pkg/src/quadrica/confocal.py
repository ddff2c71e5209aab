"""Canonical confocal quadric families and the Ivory affinity.

A quadric in C^{n+1} is the zero set of

    Q(x) = x^T A x + 2 B^T x + C

with A complex symmetric.  The confocal family replaces A by A R_z^{-1},
R_z = I - z A, together with matching shifts of B and C.  Three canonical
kinds are supported:

  QC    A invertible, B = 0, C = -1               (central quadric)
  QWC   ker A = C e_{n+1}, B = -e_{n+1}, C = 0    (no center, tangent slot)
  IQWC  ker A = C f_1 inside a leading nilpotent block of size p >= 2,
        B = -conj(f_1), C = 0                     (isotropic kernel)

Points of the family member at z are reached from the base quadric by the
Ivory affinity x -> sqrt(R_z) x + C(z), an affine map built from the same
blockwise square roots as everything else.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .report import ResidualReport
from .sjcalc import (SJBlock, SJSpec, as_spec, csqrt, isotropic_vector,
                     basis_vector, sj_sqrt, sj_sqrt_pencil)

_KINDS = ("QC", "QWC", "IQWC")


@dataclass(frozen=True)
class Quadric:
    """Canonical quadric Q(x) = x^T A x + 2 B^T x + C with SJ structure."""
    kind: str
    spec: SJSpec
    A: np.ndarray
    B: np.ndarray
    C: complex

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def n(self):
        """Dimension of the quadric itself (ambient minus one)."""
        return self.A.shape[0] - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=complex)
        return x @ (self.A @ x) + 2.0 * (self.B @ x) + self.C

    def to_json(self):
        return json.dumps({"kind": self.kind,
                           "blocks": json.loads(self.spec.to_json())["blocks"]})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else text
        spec = SJSpec.from_json({"blocks": data["blocks"]})
        return canonical_quadric(data["kind"], spec.blocks)


@dataclass(frozen=True)
class ConfocalMember:
    """Family member at parameter z: cached R_z, its root, and C(z)."""
    parent: Quadric
    z: complex
    R: np.ndarray
    S: np.ndarray
    c: np.ndarray


def canonical_quadric(kind, blocks):
    """Build a canonical quadric of the given kind from SJ blocks.

    The kernel block must sit last for QWC (size 1) and first for IQWC
    (size >= 2); every other eigenvalue must be nonzero.  The bordered
    matrix [[A, B], [B^T, C]] is checked to be nondegenerate.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown quadric kind {kind!r}")
    spec = as_spec(blocks if not isinstance(blocks, SJSpec) else blocks.blocks)
    m = spec.dim
    A = spec.matrix()

    zero = [i for i, b in enumerate(spec.blocks) if b.a == 0]
    if kind == "QC":
        if zero:
            raise ValueError("QC requires an invertible A")
        B = np.zeros(m, dtype=complex)
        C = -1.0 + 0.0j
    elif kind == "QWC":
        if zero != [len(spec.blocks) - 1] or spec.blocks[-1].p != 1:
            raise ValueError("QWC requires exactly one zero block, size 1, last")
        B = -basis_vector(m, m)
        C = 0.0j
    else:
        if zero != [0] or spec.blocks[0].p < 2:
            raise ValueError("IQWC requires exactly one zero block, "
                             "size >= 2, first")
        B = -isotropic_vector(1, m).conj()
        C = 0.0j

    bordered = np.zeros((m + 1, m + 1), dtype=complex)
    bordered[:m, :m] = A
    bordered[:m, m] = B
    bordered[m, :m] = B
    bordered[m, m] = C
    sign, logdet = np.linalg.slogdet(bordered)
    if sign == 0 or logdet < np.log(1e-12):
        raise ValueError("degenerate quadric: bordered matrix is singular")
    return Quadric(kind, spec, A, B, complex(C))


def diagonal_qwc(semiaxes):
    """Diagonal QWC with A = diag(1/a_1, ..., 1/a_n, 0)."""
    blocks = tuple((1.0 / a, 1) for a in semiaxes) + ((0.0, 1),)
    return canonical_quadric("QWC", blocks)


def iqwc_nilpotent(p, tail=()):
    """IQWC whose kernel block is J_p, followed by the given (a, q) tail."""
    return canonical_quadric("IQWC", ((0.0, p),) + tuple(tail))


def is_general(Q):
    """True when every eigenvalue of A occupies a single block."""
    eigs = [b.a for b in Q.spec.blocks]
    for i in range(len(eigs)):
        for j in range(i + 1, len(eigs)):
            if abs(eigs[i] - eigs[j]) < 1e-12:
                return False
    return True


def admissible_z(Q, z, margin=1e-9):
    """Whether the family parameter z avoids the branch cuts.

    z is rejected when some eigenvalue a of A puts z*a on or beyond the
    point 1 of the real axis (the segment from 1-za to 1 would then cross
    the branch cut of the square root), or when 1 - z*a nearly vanishes.
    """
    z = complex(z)
    for b in Q.spec.blocks:
        w = z * b.a
        if abs(1.0 - w) <= margin:
            return False
        if abs(w.imag) <= margin and w.real >= 1.0 - margin:
            return False
    return True


def sample_admissible_z(Q, count, seed=0, radius=0.8, margin=0.05):
    """Deterministic admissible z values drawn from a complex disk."""
    rng = np.random.default_rng(seed)
    out = []
    guard = 0
    while len(out) < count:
        guard += 1
        if guard > 1000 * (count + 1):
            raise NumericalError("could not sample admissible z values")
        z = radius * (2 * rng.random() - 1 + 1j * (2 * rng.random() - 1))
        if abs(z) < 0.05:
            continue
        if admissible_z(Q, z, margin=margin):
            out.append(z)
    return out


def member(Q, z):
    """Confocal family member at z with cached sqrt(R_z) and C(z)."""
    z = complex(z)
    if not admissible_z(Q, z):
        raise ValueError(f"z = {z} is not admissible for this quadric")
    R = np.eye(Q.dim, dtype=complex) - z * Q.A
    S = sj_sqrt_pencil(Q.spec, z)
    c = _c_from_sqrt(S, Q.B, z)
    return ConfocalMember(Q, z, R, S, c)


def _c_from_sqrt(S, B, z):
    I = np.eye(S.shape[0], dtype=complex)
    return -z * np.linalg.solve(I + S, B)


def c_vector(Q, z):
    """Translation part C(z) = -z (I + sqrt(R_z))^{-1} B of the Ivory affinity.

    Satisfies A C(z) + (I - sqrt(R_z)) B = 0 and
    (I + sqrt(R_z)) C(z) + z B = 0; identically zero for QC.
    """
    z = complex(z)
    if not admissible_z(Q, z):
        raise ValueError(f"z = {z} is not admissible for this quadric")
    return _c_from_sqrt(sj_sqrt_pencil(Q.spec, z), Q.B, z)


def ivory_image(Q, x0, z):
    """Image of a base-quadric point under the affinity onto member z."""
    mem = z if isinstance(z, ConfocalMember) else member(Q, z)
    return mem.S @ np.asarray(x0, dtype=complex) + mem.c


def q_eval_normal(Q, x, z=0.0):
    """(Q_z(x), N_z(x)) for the member at z, sharing one resolvent solve.

    The normal is N_z = R_z^{-1}(A x + B); its bilinear square equals
    d/dz Q_z(x), which is what Newton polishing in `elliptic_coords` uses.
    """
    x = np.asarray(x, dtype=complex)
    z = complex(z)
    R = np.eye(Q.dim, dtype=complex) - z * Q.A
    try:
        rx = np.linalg.solve(R, x)
        rb = np.linalg.solve(R, Q.B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"R_z singular at z = {z}") from exc
    value = x @ (Q.A @ rx) + 2.0 * (rb @ x) + Q.C + z * (Q.B @ rb)
    normal = Q.A @ rx + rb
    return value, normal


def elliptic_coords(Q, x, polish=2):
    """Confocal parameters of x: the n+1 roots of z -> Q_z(x).

    det(R_z) Q_z(x) is a polynomial of degree n+1 in z; its coefficients
    are recovered from samples on a circle inside the admissible disk,
    the roots come from the companion matrix, and each root is polished
    by Newton steps using d/dz Q_z = N_z^T N_z.  Roots are returned
    sorted by (real, imag).

    Raises NumericalError at points whose normal becomes isotropic at a
    root (coalescing coordinates) and for non-general quadrics.
    """
    if not is_general(Q):
        raise NumericalError("elliptic coordinates need a general quadric")
    x = np.asarray(x, dtype=complex)
    eigs = Q.spec.eigenvalues()
    deg = Q.dim
    nz = np.abs(eigs[np.abs(eigs) > 0])
    r = 0.5 / np.max(nz)
    nodes = r * np.exp(2j * np.pi * np.arange(deg + 1) / (deg + 1))
    vals = np.empty(deg + 1, dtype=complex)
    for k, zk in enumerate(nodes):
        detR = np.prod(1.0 - zk * eigs)
        vals[k] = detR * q_eval_normal(Q, x, zk)[0]
    V = np.vander(nodes, deg + 1, increasing=True)
    coeff = np.linalg.solve(V, vals)
    scale = np.max(np.abs(coeff))
    if scale == 0 or abs(coeff[-1]) < 1e-10 * scale:
        raise NumericalError("degenerate leading coefficient in Q_z pencil")
    roots = np.roots(coeff[::-1])
    for _ in range(polish):
        for i, z in enumerate(roots):
            val, nrm = q_eval_normal(Q, x, z)
            dq = nrm @ nrm
            if abs(dq) < 1e-10:
                raise NumericalError(
                    "isotropic normal at an elliptic coordinate "
                    "(multiple root)")
            roots[i] = z - val / dq
    if roots.size > 1:
        d = np.abs(roots[:, None] - roots[None, :])
        np.fill_diagonal(d, np.inf)
        if d.min() < 1e-8 * max(1.0, np.abs(roots).max()):
            raise NumericalError("coalescing elliptic coordinates")
    order = np.lexsort((roots.imag, roots.real))
    return roots[order]


def sample_point(Q, params=None, seed=0, lm=None):
    """Deterministic point on the base quadric.

    QC: x = sqrt(A)^{-1} X with X bilinear-normalized random (directions
    with nearly isotropic square are redrawn).  QWC/IQWC: x = L Z with
    Z = (V, V^T V / 2) for a random V, using the parabolic map.
    """
    rng = np.random.default_rng(seed)
    if Q.kind == "QC":
        if params is not None:
            X = np.asarray(params, dtype=complex)
        else:
            X = _bilinear_unit(Q.dim, rng)
        return np.linalg.solve(sj_sqrt(Q.spec), X)
    if params is not None:
        V = np.asarray(params, dtype=complex)
    else:
        V = 0.6 * (rng.standard_normal(Q.n) + 1j * rng.standard_normal(Q.n))
    if lm is None:
        from .lmap import build_lmap
        lm = build_lmap(Q)
    Z = np.concatenate([V, [0.5 * (V @ V)]])
    return lm.L @ Z


def _bilinear_unit(m, rng):
    for _ in range(100):
        v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        s = v @ v
        if abs(s) > 0.1 * (np.abs(v) ** 2).sum():
            return v / csqrt(s)
    raise NumericalError("failed to draw a non-isotropic direction")


@dataclass(frozen=True)
class RulingDirection:
    """A ruling through `point`: w^T A w = 0 and w^T N(point) = 0,
    normalized so the first significant entry is 1."""
    point: np.ndarray
    w: np.ndarray


def _normalize_first(w):
    mags = np.abs(w)
    top = mags.max()
    if top == 0:
        raise NumericalError("zero ruling direction")
    idx = int(np.argmax(mags > 1e-6 * top))
    return w / w[idx]


def ruling_direction(Q, x, slice_seed=0, restarts=24):
    """A ruling direction of the base quadric at x.

    Solves w^T A w = 0, w^T (A x + B) = 0 by Newton iteration on a random
    affine 2-plane of directions; distinct slice seeds reach distinct
    rulings.  Raises NumericalError when no slice converges.
    """
    x = np.asarray(x, dtype=complex)
    nrm = Q.A @ x + Q.B
    rng = np.random.default_rng(slice_seed)
    m = Q.dim
    for _ in range(restarts):
        c0 = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        W = rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
        t = np.zeros(2, dtype=complex)
        for _ in range(40):
            w = c0 + W @ t
            F = np.array([w @ (Q.A @ w), w @ nrm])
            if abs(F[0]) + abs(F[1]) < 1e-13 * max(1.0, (np.abs(w) ** 2).sum()):
                return RulingDirection(x, _normalize_first(w))
            Jac = np.vstack([2.0 * (Q.A @ w) @ W, nrm @ W])
            try:
                dt = np.linalg.solve(Jac, F)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(dt)) or np.abs(dt).max() > 1e6:
                break
            t = t - dt
    raise NumericalError("no ruling found: all slice restarts failed")


def polar_partner(Q, x, w, seed=0):
    """A direction polar to the ruling w: v with w^T A v = 0, v not ~ w.

    Prefers a second isotropic direction v^T A v = 0 (a genuine polar
    ruling).  For n = 2 the polar hyperplane is tangent to the isotropic
    cone along w itself, so no second ruling exists there; the fallback
    returns a non-isotropic polar direction, which is all the pairing
    identity (sqrt(R_z) w)^T (sqrt(R_z) v) = w^T v requires.
    """
    w = np.asarray(w, dtype=complex)
    m = Q.dim
    Aw = Q.A @ w
    # null space of the row u -> (Aw)^T u via SVD
    _, _, Vh = np.linalg.svd(Aw[None, :])
    H = Vh[1:].conj().T            # columns span {u : w^T A u = 0}
    rng = np.random.default_rng(seed)
    wn = w / np.linalg.norm(w)

    def fresh(v):
        if np.abs(v).max() < 1e-8:
            return False
        return abs(v.conj() @ wn) / np.linalg.norm(v) < 0.999

    fallback = None
    for _ in range(8):
        u1 = H @ (rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1))
        u2 = H @ (rng.standard_normal(m - 1) + 1j * rng.standard_normal(m - 1))
        if fallback is None and fresh(u1):
            fallback = u1
        for t in _quad_roots(u2 @ (Q.A @ u2), 2.0 * (u1 @ (Q.A @ u2)),
                             u1 @ (Q.A @ u1)):
            v = u1 + t * u2
            if fresh(v):
                return _normalize_first(v)
    if fallback is not None:
        return _normalize_first(fallback)
    raise NumericalError("no polar partner found")


def _quad_roots(a, b, c):
    if abs(a) < 1e-14 * max(abs(b), abs(c), 1.0):
        if abs(b) < 1e-14:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc == 0:
        return [-b / (2 * a)]
    d = csqrt(disc)
    return [(-b + d) / (2 * a), (-b - d) / (2 * a)]


def ivory_identity_suite(Q, z, sample_count=20, seed=0, lm=None):
    """Residuals for the six affinity identities between members 0 and z.

    For base points x0, x1 with images xz0, xz1 and segments
    V01 = xz1 - x0, V10 = xz0 - x1 (squared lengths are bilinear):

      ivory_length    |V01|^2 - |V10|^2
      ruling_length   |sqrt(R_z) w|^2 - |w|^2 + z w^T A w
      tc_symmetry     V01^T N(x0) - V10^T N(x1)
      segment_ruling  V01^T w(x0) + V10^T sqrt(R_z) w(x0)
      ruling_ruling   w(x0)^T sqrt(R_z) w(x1) - (sqrt(R_z) w(x0))^T w(x1)
      polar_ruling    (sqrt(R_z) w)^T (sqrt(R_z) v) - w^T v
                      for a polar pair w^T A v = 0

    All directions are rescaled to unit Hermitian norm before residual
    evaluation (the identities are homogeneous in them).
    """
    mem = member(Q, z)
    if lm is None and Q.kind != "QC":
        from .lmap import build_lmap
        lm = build_lmap(Q)
    S = mem.S
    rng = np.random.default_rng(seed)
    res = {k: [] for k in ("ivory_length", "ruling_length", "tc_symmetry",
                           "segment_ruling", "ruling_ruling", "polar_ruling")}
    for k in range(sample_count):
        s0, s1, s2, s3 = rng.integers(0, 2**63, size=4)
        x0 = sample_point(Q, seed=s0, lm=lm)
        x1 = sample_point(Q, seed=s1, lm=lm)
        xz0 = S @ x0 + mem.c
        xz1 = S @ x1 + mem.c
        V01 = xz1 - x0
        V10 = xz0 - x1
        n0 = Q.A @ x0 + Q.B
        n1 = Q.A @ x1 + Q.B
        w0 = ruling_direction(Q, x0, slice_seed=s2).w
        w1 = ruling_direction(Q, x1, slice_seed=s3).w
        w0 = w0 / np.linalg.norm(w0)
        w1 = w1 / np.linalg.norm(w1)
        wz0 = S @ w0
        wz1 = S @ w1
        res["ivory_length"].append((V01 @ V01) - (V10 @ V10))
        res["ruling_length"].append((wz0 @ wz0) - (w0 @ w0)
                                    + z * (w0 @ (Q.A @ w0)))
        res["tc_symmetry"].append(V01 @ n0 - V10 @ n1)
        res["segment_ruling"].append(V01 @ w0 + V10 @ wz0)
        res["ruling_ruling"].append(w0 @ wz1 - wz0 @ w1)
        v0 = polar_partner(Q, x0, w0, seed=s2)
        v0 = v0 / np.linalg.norm(v0)
        res["polar_ruling"].append(wz0 @ (S @ v0) - w0 @ v0)
    rep = ResidualReport(meta={"kind": Q.kind, "z": [z.real, z.imag]
                               if isinstance(z, complex) else [float(z), 0.0],
                               "samples": sample_count})
    for name, vals in res.items():
        rep.add(name, np.array(vals))
    return rep
