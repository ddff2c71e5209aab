"""Blockwise square roots of complex symmetric matrices."""

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from quadrica.errors import NumericalError
from quadrica.sjcalc import (SJBlock, SJSpec, as_spec, basis_vector, csqrt,
                             isotropic_vector, random_rotation, random_spec,
                             sj_block, sj_sqrt, sj_sqrt_pencil, sqrt_block)


def test_isotropic_vectors_are_null():
    for m in (2, 5, 8):
        for j in range(1, m // 2 + 1):
            f = isotropic_vector(j, m)
            assert abs(f @ f) < 1e-15
            assert abs(f @ f.conj() - 1.0) < 1e-15
    with pytest.raises(IndexError):
        isotropic_vector(3, 4)
    assert basis_vector(2, 3)[1] == 1.0


@pytest.mark.parametrize("p", [1, 2, 3, 4, 5, 6])
def test_sj_block_symmetric_nilpotent(p):
    J = sj_block(p)
    assert np.abs(J - J.T).max() < 1e-15
    Jp = np.linalg.matrix_power(J, p)
    assert np.abs(Jp).max() < 1e-12
    if p > 1:
        assert np.abs(np.linalg.matrix_power(J, p - 1)).max() > 1e-3


def test_csqrt_branch():
    assert abs(csqrt(-1.0) + 1j) < 1e-15
    assert abs(csqrt(2j) - (1 + 1j)) < 1e-15
    assert abs(csqrt(-4.0) + 2j) < 1e-14
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.standard_normal() + 1j * rng.standard_normal()
        r = csqrt(a)
        assert r.real >= 0.0
        assert abs(r * r - a) < 1e-14 * abs(a)
    with pytest.raises(ZeroDivisionError):
        csqrt(0.0)


def test_sqrt_block_squares_back():
    rng = np.random.default_rng(1)
    for _ in range(30):
        p = int(rng.integers(1, 7))
        a = rng.standard_normal() + 1j * rng.standard_normal()
        if abs(a) < 0.2:
            continue
        c = rng.standard_normal() + 1j * rng.standard_normal()
        S = sqrt_block(a, c, p)
        M = a * np.eye(p) + c * sj_block(p)
        # rounding scales with the square of the series magnitude
        assert np.abs(S @ S - M).max() < 1e-14 * max(1.0, np.abs(S).max() ** 2)


@pytest.mark.parametrize("theta", [0.0, 0.4 * np.pi, -0.4 * np.pi,
                                   0.9 * np.pi, -0.9 * np.pi])
def test_sqrt_block_matches_principal_sqrtm(theta):
    # off the negative real axis both branches agree with scipy's sqrtm
    a = 1.3 * np.exp(1j * theta)
    for p in (2, 3, 5):
        S = sqrt_block(a, 0.7, p)
        M = a * np.eye(p) + 0.7 * sj_block(p)
        assert np.abs(S - sla.sqrtm(M)).max() < 1e-10


def test_sqrt_block_rejects_nilpotent():
    with pytest.raises(NumericalError):
        sqrt_block(0.0, 1.0, 3)


def test_sj_sqrt_square_and_commutation():
    rng = np.random.default_rng(3)
    for _ in range(40):
        spec = random_spec(rng)
        M = spec.matrix()
        S = sj_sqrt(spec)
        assert np.abs(S @ S - M).max() < 1e-12
        assert np.abs(S @ M - M @ S).max() < 1e-12


def test_same_layout_sqrts_commute():
    rng = np.random.default_rng(4)
    for _ in range(20):
        spec = random_spec(rng)
        other = SJSpec(tuple(SJBlock(b.a * (1.1 + 0.3j), b.p)
                             for b in spec.blocks))
        S1, S2 = sj_sqrt(spec), sj_sqrt(other)
        assert np.abs(S1 @ S2 - S2 @ S1).max() < 1e-12


def test_sj_sqrt_pencil():
    rng = np.random.default_rng(5)
    for _ in range(20):
        spec = random_spec(rng)
        z = 0.4 * (rng.standard_normal() + 1j * rng.standard_normal())
        if min(abs(1.0 - z * b.a) for b in spec.blocks) < 0.1:
            continue
        P = sj_sqrt_pencil(spec, z)
        target = np.eye(spec.dim) - z * spec.matrix()
        assert np.abs(P @ P - target).max() < 1e-12


def test_random_rotation_orthogonal():
    for m in (1, 2, 4, 7):
        R = random_rotation(m, seed=11)
        assert np.abs(R @ R.T - np.eye(m)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1.0) < 1e-10
    np.testing.assert_array_equal(random_rotation(1), np.eye(1))
    assert np.array_equal(random_rotation(3, seed=2), random_rotation(3, seed=2))
    assert not np.array_equal(random_rotation(3, seed=2),
                              random_rotation(3, seed=3))


def test_random_spec_bounds():
    rng = np.random.default_rng(6)
    for _ in range(50):
        spec = random_spec(rng)
        assert 1 <= spec.dim <= 8
        assert all(1 <= b.p <= 6 for b in spec.blocks)
        assert all(0.3 <= abs(b.a) <= 2.0 for b in spec.blocks)


def test_spec_json_roundtrip():
    spec = SJSpec(((1.2 + 0.5j, 3), (0.7, 1), (-0.4 + 0.1j, 2)))
    back = SJSpec.from_json(spec.to_json())
    assert back == spec
    assert as_spec([(2.0, 2)]).dim == 2


def test_spec_validation():
    with pytest.raises(ValueError):
        SJSpec(())
    with pytest.raises(ValueError):
        SJSpec(((1.0, 0),))


@settings(max_examples=25, deadline=None)
@given(p=st.integers(1, 6),
       re=st.floats(-2, 2), im=st.floats(-2, 2),
       cre=st.floats(-1, 1), cim=st.floats(-1, 1))
def test_sqrt_block_series_property(p, re, im, cre, cim):
    a = complex(re, im)
    if abs(a) < 0.3:
        return
    c = complex(cre, cim)
    S = sqrt_block(a, c, p)
    M = a * np.eye(p) + c * sj_block(p)
    assert np.abs(S @ S - M).max() < 1e-11 * max(1.0, abs(a), abs(c) ** p)
