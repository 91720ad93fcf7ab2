import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iodmle.eigen import balance, eigen_largest_real, eigenvalues, hessenberg

square = st.integers(1, 7).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-1e3, 1e3, allow_subnormal=False))
)


def sorted_spectrum(z):
    return np.sort_complex(np.round(z, 12))


def same_spectrum(a, b, scale):
    # greedy nearest matching, robust to ordering of close pairs
    b = list(b)
    for z in a:
        k = int(np.argmin([abs(z - w) for w in b]))
        if abs(z - b[k]) > scale:
            return False
        b.pop(k)
    return True


@given(square)
def test_eigenvalues_match_lapack(a):
    z, ok = eigenvalues(a)
    assert ok
    ref = np.linalg.eigvals(a)
    scale = 1e-7 * (1.0 + np.linalg.norm(a))
    assert same_spectrum(z, ref, math.sqrt(scale) if np.linalg.cond(np.linalg.eig(a)[1]) > 1e6 else scale)


@given(square)
def test_similarity_transforms_keep_spectrum(a):
    scale = 1e-7 * (1.0 + np.linalg.norm(a))
    if np.linalg.cond(np.linalg.eig(a)[1]) > 1e6:
        return
    ref = np.linalg.eigvals(a)
    assert same_spectrum(np.linalg.eigvals(balance(a)), ref, scale)
    h = hessenberg(a)
    assert np.all(np.abs(np.tril(h, -2)) <= 1e-14 * np.abs(a).max())
    assert same_spectrum(np.linalg.eigvals(h), ref, scale)


def test_balance_equilibrates():
    a = np.array([[1.0, 1e6], [1e-6, 1.0]])
    b = balance(a)
    assert abs(math.log2(abs(b[0, 1])) - math.log2(abs(b[1, 0]))) <= 2.0


def test_largest_real_known():
    a = np.diag([3.0, -1.0, 7.5, 2.0])
    res = eigen_largest_real(a)
    assert res.converged and res.value == pytest.approx(7.5)


def test_complex_pair_beats_no_real():
    c, s = math.cos(0.3), math.sin(0.3)
    rot = np.array([[c, -s], [s, c]])
    assert eigen_largest_real(rot).value is None
    mixed = np.block([[rot * 10, np.zeros((2, 1))], [np.zeros((1, 2)), np.array([[-4.0]])]])
    # the largest real eigenvalue ignores the complex pair with larger real part
    assert eigen_largest_real(mixed).value == pytest.approx(-4.0)


def test_nonconvergence_reported():
    a = np.random.default_rng(1).normal(size=(6, 6))
    res = eigen_largest_real(a, max_sweeps=0)
    assert not res.converged
    z, ok = eigenvalues(a, max_sweeps=0)
    assert not ok and np.any(np.isnan(z))


def test_input_validation():
    with pytest.raises(ValueError):
        eigenvalues(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        eigenvalues(np.array([[np.inf]]))
    z, ok = eigenvalues([[2.5]])
    assert ok and z[0] == 2.5


def test_diagonal_and_companion():
    assert eigen_largest_real(np.diag(np.arange(1.0, 7.0))).value == pytest.approx(6.0)
    coeffs = np.poly([3.0, -1.0, 1j, -1j, 2j, -2j]).real
    companion = np.zeros((6, 6))
    companion[0] = -coeffs[1:]
    companion[1:, :-1] = np.eye(5)
    res = eigen_largest_real(companion)
    assert res.converged and res.value == pytest.approx(3.0, abs=1e-10)


def test_rotation_blocks_only():
    blocks = np.zeros((6, 6))
    for k, ang in enumerate((0.4, 1.1, 2.5)):
        c, s = math.cos(ang), math.sin(ang)
        blocks[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, -s], [s, c]]
    assert eigen_largest_real(blocks).value is None
