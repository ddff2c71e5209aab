"""Grid calculus, frame integration, and surface assembly."""

import numpy as np
import pytest

from quadrica.errors import NumericalError
from quadrica.confocal import diagonal_qwc, iqwc_nilpotent
from quadrica.lmap import build_lmap
from quadrica.netgrid import (FrameState, GridSpec, christoffel_invariant_residual,
                              d_prime, dform, extend_multiconjugate, extract_MN,
                              fundamental_system, grad, integrate_moving_frame,
                              interior, line_refine, omega_prime,
                              plaquette_residual, realize_surface,
                              residual_defqwc, residual_extended,
                              riemann_offdiag_residual, seed_diagonal,
                              soliton_rotation, wedge)
from quadrica.report import refinement_ratio


def identity_rotation(grid, n=2):
    R = np.zeros(grid.shape + (n, n), dtype=complex)
    for j in range(n):
        R[..., j, j] = 1.0
    return R


def rotation_field(grid, theta):
    R = np.zeros(grid.shape + (2, 2), dtype=complex)
    c, s = np.cos(theta), np.sin(theta)
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R


# ---------------------------------------------------------------------------
# grids and difference calculus


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(n=2, h=0.1, extent=(9,))           # wrong length
    with pytest.raises(ValueError):
        GridSpec(n=2, h=0.1, extent=(9, 4))          # too short


def test_gridspec_refined_and_json():
    g = GridSpec(n=2, extra=1, h=0.1, extent=(9, 9, 5))
    r = g.refined()
    assert r.h == 0.05
    assert r.extent == (17, 17, 9)
    assert GridSpec.from_json(g.to_json()) == g
    assert g.mesh()[0].shape == g.shape == (9, 9, 5)


def test_grad_exact_on_quadratics():
    g = GridSpec(n=2, h=0.1, extent=(9, 9))
    u1, u2 = g.mesh()
    d = grad(u1 ** 2, g, 0)
    assert np.abs(d - 2 * u1).max() < 1e-13
    assert interior(d, g, 2).shape == (5, 5)


def test_line_refine_cubic_exact():
    t = np.linspace(0.0, 1.0, 5)
    fine = line_refine((t ** 3).reshape(5, 1), 2)
    tf = np.linspace(0.0, 1.0, 9)
    assert np.abs(fine[:, 0] - tf ** 3).max() < 1e-13


def test_second_differential_closes():
    g = GridSpec(n=2, h=0.1, extent=(9, 9))
    u1, u2 = g.mesh()
    f = np.sin(u1) * u2 ** 2
    dd = dform(d_prime(f, g), g)
    assert dd.degree == 2
    assert max(np.abs(v).max() for v in dd.coeffs.values()) < 1e-12


def test_wedge_of_matrix_forms():
    g = GridSpec(n=2, h=0.1, extent=(5, 5))
    rng = np.random.default_rng(0)
    P = d_prime(rng.standard_normal(g.shape + (2, 2)), g)
    Q = d_prime(rng.standard_normal(g.shape + (2, 2)), g)
    W = wedge(P, Q)
    want = np.einsum("...ij,...jk->...ik", P.coeffs[0], Q.coeffs[1]) \
        - np.einsum("...ij,...jk->...ik", P.coeffs[1], Q.coeffs[0])
    np.testing.assert_allclose(W.coeffs[(0, 1)], want, atol=1e-13)
    # scalar entries anti-commute
    p = d_prime(np.sin(g.mesh()[0])[..., None, None], g)
    q = d_prime((g.mesh()[1] ** 2)[..., None, None], g)
    both = wedge(p, q).coeffs[(0, 1)] + wedge(q, p).coeffs[(0, 1)]
    assert np.abs(both).max() < 1e-13


def test_omega_prime_identity_field():
    g = GridSpec(n=2, h=0.1, extent=(5, 5))
    om = omega_prime(identity_rotation(g), g)
    assert all(np.abs(om.coeffs[a]).max() == 0.0 for a in (0, 1))


# ---------------------------------------------------------------------------
# primary curvature residuals


def test_soliton_rotation_validation(lm2):
    ap = np.diag(lm2.Apn).real
    g3 = GridSpec(n=3, h=0.1, extent=(5, 5, 5))
    with pytest.raises(ValueError):
        soliton_rotation(g3, np.array([0.3, 0.6, 1.0]))
    g = GridSpec(n=2, h=0.1, extent=(5, 5))
    with pytest.raises(ValueError):
        soliton_rotation(g, ap[::-1])


def test_defqwc_kink_converges(lm2):
    ap = np.diag(lm2.Apn).real
    reps = {}
    for m, h in ((17, 0.04), (33, 0.02)):
        g = GridSpec(n=2, h=h, extent=(m, m))
        R, th = soliton_rotation(g, ap, velocity=0.3)
        reps[m] = residual_defqwc(R, lm2.Apn, g)
        assert reps[m]["orthogonality"] < 1e-13
    ratios = refinement_ratio(reps[17], reps[33],
                              ["defqwc_line1", "defqwc_line2"])
    for name, r in ratios.items():
        assert 3.0 < r < 4.6, f"{name}: ratio {r:.3f}"


def test_defqwc_detects_off_group_field(lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    ap = np.diag(lm2.Apn).real
    R, _ = soliton_rotation(g, ap)
    rep = residual_defqwc(R + 1e-3, lm2.Apn, g)
    assert rep["orthogonality"] > 1e-5


# ---------------------------------------------------------------------------
# secondary-coupling residuals and extraction


def test_extended_residual_wiring(lm2):
    g = GridSpec(n=2, extra=1, h=0.04, extent=(9, 9, 9))
    R = identity_rotation(g)
    Z = np.zeros(g.shape + (2, 1), dtype=complex)
    rep = residual_extended(R, Z, Z, lm2, g)
    assert all(v["max"] == 0.0 for v in rep.entries.values())
    M = Z.copy()
    M[..., 1, 0] += 1e-3
    rep2 = residual_extended(R, M, Z, lm2, g)
    assert abs(rep2["ext3"] - 1e-3) < 1e-12
    moved = {k for k, v in rep2.entries.items() if v["max"] > 1e-15}
    assert moved == {"ext3", "ext3_full", "ext5", "ext5_full"}


def test_extract_secondary_coupling_closed_form(lm2):
    # planar rotation whose angle drifts with the secondary coordinate:
    # N has one closed-form column, M stays zero
    ap = np.diag(lm2.Apn).real
    errs = {}
    for m, h in ((17, 0.04), (33, 0.02)):
        g = GridSpec(n=2, extra=1, h=h, extent=(m, m, m))
        u3 = g.mesh()[2]
        R = rotation_field(g, 0.3 + 0.2 * u3)
        M, N, rep = extract_MN(R, lm2.Apn, g)
        want = np.zeros(g.shape + (2,), dtype=complex)
        want[..., 1] = -0.2 * (ap[1] - ap[0])
        errs[m] = np.abs(N[..., :, 0] - want).max()
        assert rep["m_consistency"] < 1e-11
        assert np.abs(M).max() < 1e-11
    assert errs[17] < 3e-6
    assert errs[33] < 8e-7


def test_extract_identity_is_underdetermined(lm2):
    g = GridSpec(n=2, extra=1, h=0.04, extent=(9, 9, 9))
    M, N, rep = extract_MN(identity_rotation(g), lm2.Apn, g)
    assert rep["m_undetermined"] == g.shape[0] * g.shape[1] * g.shape[2]


def test_extract_inconsistent_coupling_raises(lm2):
    g = GridSpec(n=2, extra=1, h=0.04, extent=(9, 9, 9))
    u1 = g.mesh()[0]
    u3 = g.mesh()[2]
    R = rotation_field(g, 0.4 * u1 * u3)
    with pytest.raises(NumericalError, match="inconsistent"):
        extract_MN(R, lm2.Apn, g)


# ---------------------------------------------------------------------------
# seeds and frame integration


def test_seed_diagonal_basics(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    seed = seed_diagonal(q2, lm2, g)
    assert seed.report["prime_integral"] < 1e-12
    assert np.abs(seed.R - identity_rotation(g)).max() == 0.0


def test_seed_diagonal_guards(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    with pytest.raises(NumericalError, match="degenerates"):
        seed_diagonal(q2, lm2, g, constants={"c": (1.0, 0.0),
                                             "phi": (0.0, 0.0)})
    Qi = iqwc_nilpotent(2, ((1.4, 1),))
    with pytest.raises(NumericalError, match="separable"):
        seed_diagonal(Qi, build_lmap(Qi), g)


def test_integration_reproduces_seed(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    seed = seed_diagonal(q2, lm2, g)
    st = integrate_moving_frame(seed.R, seed.M, seed.N,
                                (seed.V[0, 0], seed.Lam[0, 0]), lm2, g)
    assert np.abs(st.V - seed.V).max() < 1e-8
    assert np.abs(st.Lam - seed.Lam).max() < 1e-8
    assert st.report["prime_integral"] < 1e-9


def test_plaquette_residual_on_seed(q2, lm2):
    vals = {}
    for m, h in ((17, 0.04), (33, 0.02)):
        g = GridSpec(n=2, h=h, extent=(m, m))
        seed = seed_diagonal(q2, lm2, g)
        plq, pd, _ = plaquette_residual(seed, lm2)
        vals[m] = plq
        assert pd == 0.0            # both edge orders agree identically
    assert 3.5 < vals[17] / vals[33] < 4.5


def test_integration_gate_rejects_nonintegrable(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(33, 33))
    seed = seed_diagonal(q2, lm2, g)
    u1, u2 = g.mesh()
    R = rotation_field(g, 3.0 * np.sin(6 * u1) * np.cos(5 * u2))
    Mf = np.zeros(g.shape + (2, 0), dtype=complex)
    with pytest.raises(NumericalError, match="not integrable"):
        integrate_moving_frame(R, Mf, Mf, (seed.V[0, 0], seed.Lam[0, 0]),
                               lm2, g)


# ---------------------------------------------------------------------------
# fundamental systems and realization


def test_fundamental_system_frame(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    seed = seed_diagonal(q2, lm2, g)
    fs = fundamental_system(seed, lm2)
    assert fs.Vs.shape == (3,) + g.shape + (2,)
    for name in ("vla_gram", "vla0_vv", "vla0_vl", "vla0_ll"):
        assert fs.report[name] < 1e-8


def test_realize_surface_seed(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    fs = fundamental_system(seed_diagonal(q2, lm2, g), lm2)
    x, rep = realize_surface(fs, lm2)
    assert x.shape == g.shape + (3,)
    assert rep["conjugate_net"] == 0.0
    assert rep["curl"] == 0.0
    assert rep["vla0_metric"] < 1e-8
    assert rep["joined_form_gap"] < 1e-8
    assert rep["joined_margin_deficit"] == 0.0


def test_realize_surface_kink_converges(q2, lm2):
    ap = np.diag(lm2.Apn).real
    reps = {}
    for m, h in ((17, 0.04), (33, 0.02)):
        g = GridSpec(n=2, h=h, extent=(m, m))
        seed = seed_diagonal(q2, lm2, g)
        R, _ = soliton_rotation(g, ap, velocity=0.3)
        Mf = np.zeros(g.shape + (2, 0), dtype=complex)
        st = integrate_moving_frame(R, Mf, Mf, (seed.V[0, 0], seed.Lam[0, 0]),
                                    lm2, g)
        fs = fundamental_system(st, lm2)
        _, reps[m] = realize_surface(fs, lm2)
        assert reps[m]["joined_margin_deficit"] == 0.0
    ratios = refinement_ratio(reps[17], reps[33],
                              ["isometry", "conjugate_net", "curl"])
    for name, r in ratios.items():
        assert 3.3 < r < 4.5, f"{name}: ratio {r:.3f}"


def test_realize_surface_detects_scaled_solution(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    fs = fundamental_system(seed_diagonal(q2, lm2, g), lm2)
    fs.Vs = fs.Vs.copy()
    fs.Vs[0] *= 1.001
    _, rep = realize_surface(fs, lm2)
    assert rep["vla0_metric"] > 1e-5


# ---------------------------------------------------------------------------
# multiply conjugate extension


def manufactured_state(q2, lm2, m, h):
    """Identity rotation with one secondary coupling entry driven by u3."""
    g = GridSpec(n=2, extra=1, h=h, extent=(m, m, m))
    u3 = g.mesh()[2]
    R = identity_rotation(g)
    M = np.zeros(g.shape + (2, 2), dtype=complex)
    M[..., 0, 0] = 0.3 + 0.1 * np.sin(u3)
    N = np.zeros(g.shape + (2, 2), dtype=complex)
    seed = seed_diagonal(q2, lm2, GridSpec(n=2, h=h, extent=(m, m)))
    st = integrate_moving_frame(R, M, N, (seed.V[0, 0], seed.Lam[0, 0]),
                                lm2, g)
    return g, st


def test_extension_trivial_background_is_flat(q2, lm2):
    g = GridSpec(n=2, extra=1, h=0.04, extent=(17, 17, 17))
    seed = seed_diagonal(q2, lm2, g)
    fs = fundamental_system(seed, lm2)
    x, afields, rep = extend_multiconjugate(fs, lm2)
    assert rep["multipl"] == 0.0
    assert rep["curl_closed"] == 0.0
    assert rep["compm"] == 0.0
    assert riemann_offdiag_residual(afields, g)["riemann_offdiag"] == 0.0


def test_extension_requires_secondary_axes(q2, lm2):
    g = GridSpec(n=2, h=0.04, extent=(17, 17))
    fs = fundamental_system(seed_diagonal(q2, lm2, g), lm2)
    with pytest.raises(ValueError):
        extend_multiconjugate(fs, lm2)


def test_extension_manufactured_coupling_converges(q2, lm2):
    reps = {}
    for m, h in ((17, 0.04), (33, 0.02)):
        g, st = manufactured_state(q2, lm2, m, h)
        assert st.report["prime_integral"] < 1e-9
        fs = fundamental_system(st, lm2)
        _, afields, rep = extend_multiconjugate(fs, lm2)
        assert rep["masked_fraction"] == 0.0
        assert rep["compm"] == 0.0
        assert riemann_offdiag_residual(afields, g)["riemann_offdiag"] == 0.0
        reps[m] = rep
    ratios = refinement_ratio(reps[17], reps[33], ["multipl", "curl_closed"])
    for name, r in ratios.items():
        assert 3.4 < r < 4.5, f"{name}: ratio {r:.3f}"


def test_extension_forcing_breaks_closure(q2, lm2):
    g, st = manufactured_state(q2, lm2, 17, 0.04)
    fs = fundamental_system(st, lm2)
    _, _, clean = extend_multiconjugate(fs, lm2)
    _, _, f1 = extend_multiconjugate(fs, lm2, f=[0.05])
    _, _, f2 = extend_multiconjugate(fs, lm2, f=[0.10])
    assert f1["curl_closed"] > 50 * clean["curl_closed"]
    assert abs(f1["multipl"] - clean["multipl"]) < 1e-12
    assert 1.8 < f2["curl_closed"] / f1["curl_closed"] < 2.2


def test_extension_masks_degenerate_coefficients(q2, lm2):
    g = GridSpec(n=2, extra=1, h=0.04, extent=(17, 17, 17))
    seed = seed_diagonal(q2, lm2, g)
    fs = fundamental_system(seed, lm2)
    scal = np.einsum("j,...j->...", lm2.calAn[0, :], seed.V)
    with pytest.raises(NumericalError, match="degenerate"):
        extend_multiconjugate(fs, lm2, f=[-scal[8, 0, 0]])


def test_extension_perturbed_coupling_fails(q2, lm2):
    g, st = manufactured_state(q2, lm2, 17, 0.04)
    st.M += 1e-3
    fs = fundamental_system(st, lm2)
    _, _, rep = extend_multiconjugate(fs, lm2)
    assert rep["multipl"] > 1e-5


# ---------------------------------------------------------------------------
# chart invariants


def test_christoffel_invariants_on_seed(q2, lm2):
    reps = {}
    for m, h in ((33, 0.04), (65, 0.02)):
        g = GridSpec(n=2, h=h, extent=(m, m))
        seed = seed_diagonal(q2, lm2, g)
        rep = christoffel_invariant_residual(seed, lm2)
        assert rep["c_mixed"] == 0.0
        assert rep["c_distinct"] == 0.0
        assert rep["conjugate"] == 0.0
        reps[m] = rep
    ratios = refinement_ratio(reps[33], reps[65],
                              ["c_cross", "c_diag", "second_form"])
    for name, r in ratios.items():
        assert r > 2.5, f"{name}: ratio {r:.3f}"


def test_riemann_offdiag_conformal_net():
    # scale factors a_j = 1/S with S harmonic-free but smooth: the
    # off-diagonal curvature vanishes to O(h^2); a non-conformal
    # perturbation is flagged
    g = GridSpec(n=2, extra=1, h=0.04, extent=(17, 17, 17))
    u1, u2, u3 = g.mesh()
    S = 3.0 + 0.3 * np.sin(u1) + 0.4 * u2 + 0.2 * u3 ** 2
    afields = {j: 1.0 / S for j in range(3)}
    assert riemann_offdiag_residual(afields, g)["riemann_offdiag"] < 2e-5
    bad = dict(afields)
    bad[0] = bad[0] * (1.0 + 0.1 * u2 * u3)
    assert riemann_offdiag_residual(bad, g)["riemann_offdiag"] > 1e-2
