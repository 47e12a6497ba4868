"""Multilinear algebra for dense order-3 tensors.

Tensors are plain ``numpy`` arrays of shape ``(p1, p2, p3)``; matrices are 2-d
arrays. Modes are numbered 1, 2, 3 as in the usual mode-product notation; all
array indices are 0-based. The only place 1-based positions appear is the
JSON serialization of index sets (see :mod:`crosstensor.io`).

Matricization uses the cyclic column ordering. With 1-based positions,

    X[i, j, k] = M1[i, j + p2*(k-1)] = M2[j, k + p3*(i-1)] = M3[k, i + p1*(j-1)]

so the mode-1 unfolding is a column-major reshape, and the linear storage order
used on disk (first index fastest) matches the mode-1 column order.
"""

from typing import NamedTuple

import numpy as np
import scipy.linalg

from ._validation import check_matrix, check_mode, check_orthonormal, check_tensor3, check_triple

# Axis permutation that brings mode t to the front with the cyclic order of the
# remaining modes; reshaping the permuted array column-major gives M_t.
_CYCLIC = {0: (0, 1, 2), 1: (1, 2, 0), 2: (2, 0, 1)}


class SvdResult(NamedTuple):
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


def mode_product(x, e, mode):
    """Multiply tensor ``x`` by matrix ``e`` along ``mode``.

    ``(x ×_1 e)[i, j, k] = sum_s e[i, s] * x[s, j, k]`` and likewise for
    modes 2 and 3. The size of ``mode`` changes from ``e.shape[1]`` to
    ``e.shape[0]``.
    """
    ax = check_mode(mode)
    x = check_tensor3(x)
    e = check_matrix(e, name="e")
    if e.shape[1] != x.shape[ax]:
        raise ValueError(
            f"mode-{mode} product needs e with {x.shape[ax]} columns, got e.shape={e.shape}"
        )
    out = np.tensordot(x, e, axes=([ax], [1]))
    return np.moveaxis(out, -1, ax)


def multi_mode_product(x, matrices):
    """Apply ``x ×_1 E1 ×_2 E2 ×_3 E3``; ``None`` entries are skipped."""
    for t, e in enumerate(matrices, start=1):
        if e is not None:
            x = mode_product(x, e, t)
    return x


def matricize(x, mode):
    """Mode-``mode`` unfolding with the cyclic column order (see module docstring)."""
    ax = check_mode(mode)
    x = check_tensor3(x, ensure_finite=False)
    perm = _CYCLIC[ax]
    shape = x.shape
    return np.transpose(x, perm).reshape(shape[ax], -1, order="F")


def fold(m, mode, dims):
    """Inverse of :func:`matricize`."""
    ax = check_mode(mode)
    dims = check_triple(dims, "dims")
    m = check_matrix(m, ensure_finite=False)
    perm = _CYCLIC[ax]
    permuted_dims = tuple(dims[a] for a in perm)
    if m.shape != (permuted_dims[0], permuted_dims[1] * permuted_dims[2]):
        raise ValueError(
            f"cannot fold a {m.shape} matrix along mode {mode} into dims {dims}"
        )
    return np.transpose(m.reshape(permuted_dims, order="F"), np.argsort(perm))


def hs_norm(x):
    """Hilbert-Schmidt norm: square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64).ravel()))


def svd(m, full_matrices=False):
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    (lowest index on ties) is non-negative; the matching row of ``vt`` is
    flipped with it. Uses ``gesdd`` and falls back to ``gesvd`` if the former
    does not converge.
    """
    m = check_matrix(m)
    try:
        u, s, vt = scipy.linalg.svd(m, full_matrices=full_matrices, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            u, s, vt = scipy.linalg.svd(m, full_matrices=full_matrices, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"SVD did not converge for a {m.shape[0]}x{m.shape[1]} matrix "
                f"(max |entry| = {np.max(np.abs(m)):.3g})"
            ) from exc
    k = min(u.shape[1], vt.shape[0])
    pivot = np.argmax(np.abs(u[:, :k]), axis=0)
    signs = np.where(u[pivot, np.arange(k)] < 0, -1.0, 1.0)
    u[:, :k] *= signs
    vt[:k] *= signs[:, None]
    return SvdResult(u, s, vt)


def default_rel_tol(shape):
    return 1e-12 * max(shape)


def pinv(m, rel_tol=None):
    """Moore-Penrose pseudo-inverse.

    Singular values ``<= rel_tol * s_max`` are treated as zero. The default
    ``rel_tol`` is ``1e-12 * max(rows, cols)``.
    """
    m = check_matrix(m)
    if rel_tol is None:
        rel_tol = min(default_rel_tol(m.shape), 0.5)
    elif not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    u, s, vt = svd(m)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.shape[::-1])
    keep = s > rel_tol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def numerical_rank(m, rel_tol=None):
    """Number of singular values strictly above ``rel_tol * s_max``."""
    m = check_matrix(m)
    if rel_tol is None:
        rel_tol = min(default_rel_tol(m.shape), 0.5)
    s = scipy.linalg.svdvals(m)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def spectral_norm(m):
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(m)[0])


class TuckerFactors(NamedTuple):
    """Tucker decomposition ``core ×_1 u1 ×_2 u2 ×_3 u3``."""

    core: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray

    @property
    def factors(self):
        return (self.u1, self.u2, self.u3)

    @property
    def ranks(self):
        return self.core.shape

    def reconstruct(self):
        return multi_mode_product(self.core, self.factors)


def leading_left_singular_vectors(x, mode, rank):
    """First ``rank`` left singular vectors of the mode-``mode`` unfolding, and its spectrum."""
    u, s, _ = svd(matricize(x, mode))
    return u[:, :rank], s


def hosvd(y, ranks):
    """Truncated higher-order SVD.

    ``u_t`` holds the leading ``r_t`` left singular vectors of the mode-t
    unfolding of ``y`` and ``core = y ×_1 u1^T ×_2 u2^T ×_3 u3^T``, so that
    ``reconstruct()`` is the projection ``y ×_1 P_{u1} ×_2 P_{u2} ×_3 P_{u3}``.
    """
    y = check_tensor3(y, name="y")
    ranks = check_triple(ranks, "ranks")
    for t, (r, p) in enumerate(zip(ranks, y.shape), start=1):
        if r > p:
            raise ValueError(f"rank r{t}={r} exceeds dimension p{t}={p}")
    factors = [leading_left_singular_vectors(y, t, r)[0] for t, r in enumerate(ranks, start=1)]
    core = multi_mode_product(y, [u.T for u in factors])
    return TuckerFactors(core, *factors)


def mode_spectra(y):
    """Singular values of each of the three unfoldings of ``y``."""
    y = check_tensor3(y, name="y")
    return tuple(scipy.linalg.svdvals(matricize(y, t)) for t in (1, 2, 3))


def coherence(u):
    """Incoherence constant ``(p / r) * max_j ||P_u e_j||^2`` of an orthonormal basis."""
    u = check_orthonormal(u)
    p, r = u.shape
    return float(p / r * np.max(np.sum(u * u, axis=1)))
