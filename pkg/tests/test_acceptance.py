"""End-to-end acceptance checks, one verdict line per guarantee."""

import dataclasses
import time

import numpy as np

from quadrica import backlund as bk
from quadrica import netgrid as ng
from quadrica.confocal import (canonical_quadric, diagonal_qwc,
                               elliptic_coords, ivory_identity_suite, member,
                               q_eval_normal, sample_admissible_z,
                               sample_point)
from quadrica.errors import NumericalError
from quadrica.lmap import build_lmap, lmap_identity_suite, tc_z_residual
from quadrica.report import refinement_ratio
from quadrica.sjcalc import SJBlock, SJSpec, random_spec, sj_sqrt

IVORY_ENTRIES = ("ivory_length", "ruling_length", "tc_symmetry",
                 "segment_ruling", "ruling_ruling", "polar_ruling")
CHART_ENTRIES = ("conjugation", "last_row", "c_closure", "c_transport",
                 "normal_sq")


def verdict(label, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def rotm(th):
    return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]],
                    dtype=complex)


def rot_field(grid, th):
    return np.broadcast_to(rotm(th), grid.shape + (2, 2)).copy()


# the soliton background on the two finest grids is reused across checks
_kink_cache = {}


def kink_state(lm2, m, h):
    if (m, h) not in _kink_cache:
        q = diagonal_qwc((1.7, 1.0))
        g = ng.GridSpec(n=2, h=h, extent=(m, m))
        seed = ng.seed_diagonal(q, lm2, g)
        R, _ = ng.soliton_rotation(g, np.diag(lm2.Apn).real, velocity=0.3)
        M = np.zeros(g.shape + (2, 2), dtype=complex)
        st = ng.integrate_moving_frame(R, M, np.zeros_like(M),
                                       (seed.V[0, 0], seed.Lam[0, 0]),
                                       lm2, g)
        _kink_cache[(m, h)] = (g, seed, R, st)
    return _kink_cache[(m, h)]


def test_square_root_batch():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_sq = worst_comm = 0.0
    for _ in range(200):
        spec = random_spec(rng)
        S = sj_sqrt(spec)
        worst_sq = max(worst_sq, np.abs(S @ S - spec.matrix()).max())
        mate = SJSpec(tuple(SJBlock(b.a * (1.2 + 0.4j), b.p)
                            for b in spec.blocks))
        T = sj_sqrt(mate)
        worst_comm = max(worst_comm, np.abs(S @ T - T @ S).max())
    dt = time.perf_counter() - t0
    ok = worst_sq < 1e-12 and worst_comm < 1e-12 and dt < 5.0
    verdict("structured square roots, 200 layouts", ok,
            f"square {worst_sq:.2e}, commutation {worst_comm:.2e}, {dt:.1f}s")


def test_affinity_identities_all_kinds():
    t0 = time.perf_counter()
    quads = [
        canonical_quadric("QC", ((0.8, 1), (1.3, 1), (0.5, 1))),
        canonical_quadric("QC", ((0.8, 1), (1.3, 1), (0.5, 1), (1.9, 1))),
        canonical_quadric("QWC", ((0.9, 1), (1.6, 1), (0.0, 1))),
        canonical_quadric("QWC", ((0.9, 1), (1.6, 1), (0.6, 1), (0.0, 1))),
        canonical_quadric("IQWC", ((0.0, 2), (1.4, 1))),
        canonical_quadric("IQWC", ((0.0, 2), (1.2, 1), (0.7, 1))),
    ]
    worst = 0.0
    for k, Q in enumerate(quads):
        lm = build_lmap(Q) if Q.kind != "QC" else None
        for z in sample_admissible_z(Q, 10, seed=200 + k):
            rep = ivory_identity_suite(Q, z, sample_count=100,
                                       seed=300 + k, lm=lm)
            worst = max(worst, *(rep[name] for name in IVORY_ENTRIES))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 30.0
    verdict("affinity identities, 3 kinds x n in {2,3}", ok,
            f"worst residual {worst:.2e}, {dt:.1f}s")


def test_chart_identities():
    quads = [
        diagonal_qwc((1.7, 1.0)),
        diagonal_qwc((1.5, 1.1, 0.8)),
        diagonal_qwc((1.9, 1.4, 1.0, 0.7)),
        canonical_quadric("IQWC", ((0.0, 2), (1.4, 1))),
        canonical_quadric("IQWC", ((0.0, 2), (1.2, 1), (0.7, 1))),
    ]
    worst = 0.0
    for Q in quads:
        lm = build_lmap(Q)
        for z in (0.3, -0.25 + 0.15j, 0.55):
            rep = lmap_identity_suite(Q, lm, z, samples=8, seed=5)
            worst = max(worst, *(rep[name] for name in CHART_ENTRIES))
    worst_pair = 0.0
    for p in (2, 3, 4):
        Q = canonical_quadric("IQWC", ((0.0, p), (1.3, 1)))
        lm = build_lmap(Q)
        for z in (0.3, -0.2 + 0.1j):
            worst_pair = max(worst_pair,
                             tc_z_residual(Q, lm, z, samples=8, seed=6))
    ok = worst < 1e-9 and worst_pair < 1e-12
    verdict("chart identities + kernel pairing", ok,
            f"identities {worst:.2e}, pairing {worst_pair:.2e}")


def test_separable_coordinates():
    Q = canonical_quadric("QC", ((0.8, 1), (1.3, 1), (0.5, 1)))
    rng = np.random.default_rng(104)
    got = 0
    worst_val = worst_dot = 0.0
    while got < 100:
        x = sample_point(Q, seed=int(rng.integers(2 ** 63)))
        try:
            roots = elliptic_coords(Q, x)
        except NumericalError:
            continue
        got += 1
        assert len(roots) == 3
        normals = []
        for z in roots:
            val, nrm = q_eval_normal(Q, x, z)
            worst_val = max(worst_val, abs(val))
            normals.append(nrm / np.linalg.norm(nrm))
        for i in range(3):
            for j in range(i + 1, 3):
                worst_dot = max(worst_dot, abs(normals[i] @ normals[j]))
    ok = worst_val < 1e-8 and worst_dot < 1e-8
    verdict("separable coordinates, 100 points", ok,
            f"member value {worst_val:.2e}, normal pairing {worst_dot:.2e}")


def test_seed_and_rotation_consistency(lm2):
    t0 = time.perf_counter()
    reps, plq = {}, {}
    worst_prime = 0.0
    for m, h in ((33, 0.04), (65, 0.02)):
        g, seed, R, st = kink_state(lm2, m, h)
        worst_prime = max(worst_prime, seed.report["prime_integral"])
        reps[m] = ng.residual_defqwc(R, lm2.Apn, g)
        plq[m] = ng.plaquette_residual(st, lm2)[0]
    ratios = refinement_ratio(reps[33], reps[65],
                              ["defqwc_line1", "defqwc_line2"])
    ratios["plaquette"] = plq[33] / plq[65]
    dt = time.perf_counter() - t0
    ok = (worst_prime < 1e-12
          and all(3.5 <= r <= 4.5 for r in ratios.values())
          and dt < 20.0)
    detail = ", ".join(f"{k} x{v:.2f}" for k, v in ratios.items())
    verdict("seed integral + kink consistency", ok,
            f"prime {worst_prime:.2e}, {detail}, {dt:.1f}s")


def test_surface_realization_convergence(lm2):
    reps = {}
    deficit = 0.0
    for m, h in ((33, 0.04), (65, 0.02)):
        _, _, _, st = kink_state(lm2, m, h)
        fs = ng.fundamental_system(st, lm2)
        _, reps[m] = ng.realize_surface(fs, lm2)
        deficit = max(deficit, reps[m]["joined_margin_deficit"])
    ratios = refinement_ratio(reps[33], reps[65],
                              ["isometry", "conjugate_net"])
    ok = (all(3.5 <= r <= 4.5 for r in ratios.values())
          and deficit == 0.0)
    detail = ", ".join(f"{k} x{v:.2f}" for k, v in ratios.items())
    verdict("realized surface convergence", ok,
            f"{detail}, margin deficit {deficit:.1e}")


def test_leaf_transform_convergence(q2, lm2):
    t0 = time.perf_counter()
    z = 0.3
    drift, plq = {}, {}
    prime = rt_worst = None
    for m, h in ((33, 0.01), (65, 0.005)):
        g = ng.GridSpec(n=2, h=h, extent=(m, m))
        seed = ng.seed_diagonal(q2, lm2, g)
        R1, irep = bk.integrate_ricatti(seed, lm2, z, init=rotm(0.3 + 0.2j))
        drift[m] = irep["orthogonality"]
        plq[m] = bk.ricatti_plaquette(R1, seed, lm2, z)[0]
        if m == 65:
            lf = bk.leaf(seed, R1, lm2, z)
            prime = lf.report["prime_integral"]
            rt = bk.roundtrip_residual(seed, lf, lm2, z)
            rt_worst = max(rt["roundtrip_V"], rt["roundtrip_Lam"])
    drift_ratio = drift[33] / drift[65]
    plq_ratio = plq[33] / plq[65]
    dt = time.perf_counter() - t0
    ok = (drift_ratio >= 3.5 and 3.5 <= plq_ratio <= 4.5
          and prime < 1e-10 and rt_worst < 1e-10 and dt < 60.0)
    verdict("leaf transform convergence + involution", ok,
            f"drift x{drift_ratio:.2f}, plaquette x{plq_ratio:.2f}, "
            f"prime {prime:.2e}, roundtrip {rt_worst:.2e}, {dt:.1f}s")


def test_double_transform_closure(q2, lm2):
    t0 = time.perf_counter()
    za, zb = 0.3, -0.5 + 0.1j
    rres = {}
    orth = piv = closure = None
    for m, h in ((17, 0.005), (33, 0.0025)):
        g = ng.GridSpec(n=2, h=h, extent=(m, m))
        seed = ng.seed_diagonal(q2, lm2, g)
        fs = ng.fundamental_system(seed, lm2)
        quad = bk.bianchi_quad(seed, fs, lm2, za, zb,
                               init_a=rotm(0.25 + 0.15j),
                               init_b=rotm(-0.4 + 0.3j))
        ra = bk.ricatti_residual(quad["fields"]["a"], seed, lm2, za)
        rb = bk.ricatti_residual(quad["fields"]["b"], seed, lm2, zb)
        rres[m] = (ra["ricatti_primary"], rb["ricatti_primary"])
        if m == 33:
            rep = quad["report"]
            orth = rep["orthogonality"]
            piv = rep["bpt_identity"]
            closure = rep["closure_x"]
    ratio_a = rres[17][0] / rres[33][0]
    ratio_b = rres[17][1] / rres[33][1]
    dt = time.perf_counter() - t0
    ok = (orth < 1e-10 and piv < 1e-10 and closure < 1e-8
          and 3.5 <= ratio_a <= 4.5 and 3.5 <= ratio_b <= 4.5
          and dt < 60.0)
    verdict("double transform closure", ok,
            f"orthogonality {orth:.2e}, pivot {piv:.2e}, "
            f"closure {closure:.2e}, rates x{ratio_a:.2f}/x{ratio_b:.2f}, "
            f"{dt:.1f}s")


def test_perturbation_sensitivity(q2, lm2):
    """A 1e-3 structured perturbation must trip every verification suite."""
    breaches = {}

    rng = np.random.default_rng(109)
    spec = random_spec(rng)
    S = sj_sqrt(spec)
    bent = SJSpec(tuple(SJBlock(b.a + 1e-3, b.p) for b in spec.blocks))
    breaches["sqrt"] = np.abs(S @ S - bent.matrix()).max()

    Q = canonical_quadric("QC", ((0.8, 1), (1.3, 1), (0.5, 1)))
    mem = member(Q, 0.3)
    Sp = mem.S.copy()
    Sp[0, 0] += 1e-3
    worst = 0.0
    for s in range(5):
        x0 = sample_point(Q, seed=10 + s)
        x1 = sample_point(Q, seed=20 + s)
        V01 = (Sp @ x1 + mem.c) - x0
        V10 = (Sp @ x0 + mem.c) - x1
        worst = max(worst, abs((V01 @ V01) - (V10 @ V10)))
    breaches["affinity"] = worst

    bad_lm = dataclasses.replace(lm2, L=lm2.L + 1e-3)
    rep = lmap_identity_suite(q2, bad_lm, 0.3, samples=4, seed=0)
    breaches["chart"] = rep["conjugation"]

    x = sample_point(Q, seed=5)
    roots = elliptic_coords(Q, x)
    breaches["coords"] = abs(q_eval_normal(Q, x, roots[0] + 1e-3)[0])

    g = ng.GridSpec(n=2, h=0.04, extent=(17, 17))
    seed = ng.seed_diagonal(q2, lm2, g)
    scaled = ng.FrameState(g, seed.R, 1.001 * seed.V, seed.Lam,
                           seed.M, seed.N)
    breaches["seed"] = float(np.abs(scaled.prime_integral(lm2)).max())

    R, _ = ng.soliton_rotation(g, np.diag(lm2.Apn).real, velocity=0.3)
    breaches["rotation"] = ng.residual_defqwc(R + 1e-3, lm2.Apn,
                                              g)["orthogonality"]

    fs = ng.fundamental_system(seed, lm2)
    fs.Vs[0] = 1.001 * fs.Vs[0]
    _, rrep = ng.realize_surface(fs, lm2)
    breaches["realization"] = rrep["vla0_metric"]

    off = np.eye(2, dtype=complex) + 1e-3
    _, irep = bk.integrate_ricatti(seed, lm2, 0.3, init=off)
    breaches["leaf"] = irep["orthogonality"]

    Ra = rot_field(g, 0.0) + 1e-3
    la = ng.FrameState(g, Ra, seed.V, seed.Lam, seed.M, seed.N)
    lb = ng.FrameState(g, rot_field(g, 0.25), seed.V, seed.Lam,
                       seed.M, seed.N)
    _, brep = bk.bpt_rotation(seed, la, lb, lm2, 0.3, 0.6)
    breaches["double"] = brep["orthogonality"]

    ok = all(v > 1e-5 for v in breaches.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in breaches.items())
    verdict("perturbation sensitivity, all suites", ok, detail)
