import numpy as np
import pytest

from sdecgmca import model, regularize
from sdecgmca.errors import InvalidArgumentError


def test_normal_matrices():
    M = regularize.build_normal_matrices(np.eye(3), np.ones((3, 5)))
    assert np.allclose(M, np.eye(3))
    H = np.ones((3, 5))
    H[:, 2] = 0
    assert not regularize.build_normal_matrices(np.eye(3), H)[2].any()
    rng = np.random.default_rng(0)
    A, H = rng.random((4, 2)), rng.random((4, 6))
    M = regularize.build_normal_matrices(A, H)
    for l in range(6):
        ref = A.T @ np.diag(H[:, l]) ** 2 @ A
        assert np.allclose(M[l], ref, atol=1e-12)
        assert np.allclose(M[l], M[l].T, atol=1e-12)
        assert np.linalg.eigvalsh(M[l]).min() >= -1e-12
    with pytest.raises(InvalidArgumentError):
        regularize.build_normal_matrices(A, np.ones((3, 6)))


def test_strategy1():
    assert not regularize.strategy1(0.0, (2, 4)).any()
    assert np.all(regularize.strategy1(0.5, (2, 4)) == 0.5)
    with pytest.raises(InvalidArgumentError):
        regularize.strategy1(-1.0, (2, 4))


def test_strategy2():
    eye = np.tile(np.eye(2), (3, 1, 1))
    assert np.allclose(regularize.strategy2(0.3, eye), 0.3)
    M = np.tile(np.diag([4.0, 1.0]), (3, 1, 1))
    assert np.allclose(regularize.strategy2(0.3, M), 1.2)
    assert not regularize.strategy2(0.0, M).any()
    rng = np.random.default_rng(1)
    B = rng.random((5, 3, 3))
    M = B @ B.transpose(0, 2, 1)
    assert np.allclose(regularize.strategy2(2.5, M), 2.5 * regularize.strategy2(1.0, M))


def test_strategy3():
    M = np.tile(np.eye(2), (4, 1, 1))
    assert np.allclose(regularize.strategy3(2.0, M, np.eye(2)), 2 - 1 / 1.01)
    assert not regularize.strategy3(0.5, M, np.eye(2)).any()


def test_strategy3_monotone_for_gaussian_kernels():
    A = model.random_mixing(6, 3, 2.0, seed=3)
    ks = model.normalize_to_best(model.gaussian_kernels(np.linspace(6, 48, 6), 47))
    eps = regularize.compute(3, 0.7, A, ks)
    assert eps.shape == (3, 48)
    assert np.all(np.diff(eps, axis=1) >= -1e-12)
    assert eps[0, 0] == 0.0


def test_strategy4():
    assert np.allclose(regularize.strategy4(0.5, np.full((2, 5), 4.0), np.ones(5)), 0.125)
    assert not regularize.strategy4(0.0, np.full((2, 5), 4.0), np.ones(5)).any()
    spectra = np.array([[1.0, 0.0, 2.0]])
    eps = regularize.strategy4(1.0, spectra, np.ones(3))
    assert np.all(np.isfinite(eps)) and eps[0, 1] == pytest.approx(1.0 / (2e-12))
    rng = np.random.default_rng(4)
    s, n = rng.random((3, 7)) + 0.1, rng.random(7)
    assert np.allclose(regularize.strategy4(3.0, s, n), 3.0 * regularize.strategy4(1.0, s, n))


def test_eigenvalues_match_characteristic_polynomial():
    rng = np.random.default_rng(5)
    for _ in range(20):
        B = rng.standard_normal((2, 2))
        M = B @ B.T
        tr, det = np.trace(M), np.linalg.det(M)
        disc = np.sqrt(tr**2 / 4 - det)
        lo, hi = tr / 2 - disc, tr / 2 + disc
        assert regularize.strategy2(1.0, M[None])[0, 0] == pytest.approx(hi, abs=1e-10)
        got = regularize.strategy3(10.0, M[None], np.eye(2))[0, 0]
        assert got == pytest.approx(max(0.0, 10.0 - lo / 1.01), abs=1e-10)


def test_compute_dispatch():
    A = np.eye(2)
    H = np.ones((2, 3))
    for s in (1, 2, 3):
        eps = regularize.compute(s, 1.0, A, H)
        assert eps.shape == (2, 3) and np.all(eps >= 0)
    assert regularize.compute(4, 1.0, A, H, np.ones((2, 3)), np.ones(3)).shape == (2, 3)
    with pytest.raises(InvalidArgumentError):
        regularize.compute(4, 1.0, A, H)
    with pytest.raises(InvalidArgumentError):
        regularize.compute(5, 1.0, A, H)
