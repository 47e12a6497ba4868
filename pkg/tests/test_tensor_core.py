import numpy as np
import pytest

from crosstensor.tensor_core import (
    coherence,
    fold,
    hosvd,
    hs_norm,
    matricize,
    mode_product,
    mode_spectra,
    multi_mode_product,
    numerical_rank,
    pinv,
    spectral_norm,
    svd,
)


def unfold_by_loops(x, mode):
    """Cyclic unfolding written entry by entry from the 1-based index formulas."""
    p1, p2, p3 = x.shape
    if mode == 1:
        m = np.empty((p1, p2 * p3))
    elif mode == 2:
        m = np.empty((p2, p3 * p1))
    else:
        m = np.empty((p3, p1 * p2))
    for i in range(1, p1 + 1):
        for j in range(1, p2 + 1):
            for k in range(1, p3 + 1):
                v = x[i - 1, j - 1, k - 1]
                if mode == 1:
                    m[i - 1, j + p2 * (k - 1) - 1] = v
                elif mode == 2:
                    m[j - 1, k + p3 * (i - 1) - 1] = v
                else:
                    m[k - 1, i + p1 * (j - 1) - 1] = v
    return m


@pytest.fixture
def x234():
    return np.arange(24, dtype=float).reshape(2, 3, 4) + 1.0


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_matricize_matches_index_formula(x234, mode):
    np.testing.assert_array_equal(matricize(x234, mode), unfold_by_loops(x234, mode))


def test_matricize_small_frozen(x234):
    # X[i,j,k] = 1 + 12 i + 4 j + k (0-based); first columns of each unfolding
    m1 = matricize(x234, 1)
    assert m1.shape == (2, 12)
    np.testing.assert_array_equal(m1[:, :4], [[1, 5, 9, 2], [13, 17, 21, 14]])
    m2 = matricize(x234, 2)
    assert m2.shape == (3, 8)
    np.testing.assert_array_equal(m2[:, :5], [[1, 2, 3, 4, 13], [5, 6, 7, 8, 17], [9, 10, 11, 12, 21]])
    m3 = matricize(x234, 3)
    assert m3.shape == (4, 6)
    np.testing.assert_array_equal(m3[0], [1, 13, 5, 17, 9, 21])


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_fold_inverts_matricize(mode):
    x = np.random.default_rng(mode).standard_normal((3, 5, 4))
    np.testing.assert_array_equal(fold(matricize(x, mode), mode, x.shape), x)


def test_fold_rejects_wrong_shape():
    with pytest.raises(ValueError, match="cannot fold"):
        fold(np.zeros((3, 5)), 1, (3, 4, 2))


@pytest.mark.parametrize("mode", [0, 4, "1", 1.5])
def test_bad_mode(mode):
    with pytest.raises(ValueError):
        matricize(np.zeros((2, 2, 2)), mode)


def test_mode_product_against_einsum():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4, 5))
    e1, e2, e3 = rng.standard_normal((6, 3)), rng.standard_normal((2, 4)), rng.standard_normal((7, 5))
    np.testing.assert_allclose(mode_product(x, e1, 1), np.einsum("is,sjk->ijk", e1, x))
    np.testing.assert_allclose(mode_product(x, e2, 2), np.einsum("js,isk->ijk", e2, x))
    np.testing.assert_allclose(mode_product(x, e3, 3), np.einsum("ks,ijs->ijk", e3, x))
    np.testing.assert_allclose(
        multi_mode_product(x, [e1, e2, e3]), np.einsum("ia,jb,kc,abc->ijk", e1, e2, e3, x)
    )


def test_mode_product_size_mismatch():
    with pytest.raises(ValueError, match="mode-2 product needs e with 4 columns"):
        mode_product(np.zeros((3, 4, 5)), np.zeros((2, 3)), 2)


def test_multi_mode_product_skips_none():
    x = np.random.default_rng(1).standard_normal((2, 3, 4))
    e = np.eye(3) * 2
    np.testing.assert_allclose(multi_mode_product(x, [None, e, None]), 2 * x)


def test_hs_norm():
    assert hs_norm(np.ones((2, 3, 4))) == pytest.approx(np.sqrt(24))
    assert hs_norm(np.zeros((1, 1, 1))) == 0.0


def test_svd_sign_convention_and_reconstruction():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((7, 4))
    u, s, vt = svd(a)
    np.testing.assert_allclose((u * s) @ vt, a, atol=1e-12)
    idx = np.argmax(np.abs(u), axis=0)
    assert np.all(u[idx, np.arange(u.shape[1])] >= 0)
    # flipping the input sign must flip v, not u
    u2, _, vt2 = svd(-a)
    np.testing.assert_allclose(u2, u)
    np.testing.assert_allclose(vt2, -vt)


def test_pinv_against_numpy():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    np.testing.assert_allclose(pinv(a), np.linalg.pinv(a, rcond=1e-10), atol=1e-10)
    assert numerical_rank(a) == 2
    assert numerical_rank(np.zeros((3, 3))) == 0
    np.testing.assert_array_equal(pinv(np.zeros((3, 2))), np.zeros((2, 3)))


def test_pinv_rel_tol_cutoff():
    a = np.diag([1.0, 1e-3, 1e-9])
    np.testing.assert_allclose(pinv(a, rel_tol=1e-6), np.diag([1.0, 1e3, 0.0]))
    assert numerical_rank(a, rel_tol=1e-6) == 2
    with pytest.raises(ValueError):
        pinv(a, rel_tol=2.0)


def test_spectral_norm():
    assert spectral_norm(np.diag([3.0, -5.0, 1.0])) == pytest.approx(5.0)
    assert spectral_norm(np.zeros((0, 3))) == 0.0


def lowrank(p, r, seed):
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(r)
    return multi_mode_product(core, [rng.standard_normal((pt, rt)) for pt, rt in zip(p, r)])


def test_hosvd_exact_on_low_rank():
    x = lowrank((8, 9, 10), (2, 3, 2), 4)
    tucker = hosvd(x, (2, 3, 2))
    assert tucker.ranks == (2, 3, 2)
    np.testing.assert_allclose(tucker.reconstruct(), x, atol=1e-10 * np.abs(x).max())
    for u in tucker.factors:
        np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-12)


def test_hosvd_full_rank_is_identity():
    x = np.random.default_rng(5).standard_normal((3, 4, 5))
    np.testing.assert_allclose(hosvd(x, (3, 4, 5)).reconstruct(), x, atol=1e-12)


def test_hosvd_projection_is_idempotent():
    x = np.random.default_rng(6).standard_normal((5, 6, 7))
    once = hosvd(x, (2, 2, 3)).reconstruct()
    twice = hosvd(once, (2, 2, 3)).reconstruct()
    np.testing.assert_allclose(twice, once, atol=1e-10)


def test_hosvd_rank_exceeds_dim():
    with pytest.raises(ValueError, match="exceeds dimension p2"):
        hosvd(np.zeros((3, 2, 3)), (1, 3, 1))


def test_mode_spectra():
    x = lowrank((6, 7, 8), (2, 2, 3), 7)
    spectra = mode_spectra(x)
    assert [len(s) for s in spectra] == [6, 7, 8]
    for s, r in zip(spectra, (2, 2, 3)):
        assert s[r] < 1e-10 * s[0] < s[r - 1]


def test_coherence_bounds():
    p, r = 20, 3
    e = np.eye(p)[:, :r]
    assert coherence(e) == pytest.approx(p / r)
    q, _ = np.linalg.qr(np.ones((p, 1)))
    assert coherence(q) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        coherence(2 * e)
