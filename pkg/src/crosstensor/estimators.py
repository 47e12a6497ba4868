"""scikit-learn style wrappers.

The estimators take whole tensors (or :class:`CrossObservations`) rather than
``(n_samples, n_features)`` tables, so they fit the ``fit`` / ``transform``
protocol and ``get_params`` / ``set_params`` but not the sample-wise checks of
``sklearn.utils.estimator_checks``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_tensor3
from .completion import (
    DEFAULT_LAMBDA_SCALE,
    DEFAULT_SINGULARITY_REL_TOL,
    NoisyConfig,
    complete_noiseless,
    complete_noisy,
    default_lambda,
)
from .cross_scheme import (
    CrossObservations,
    extract_observations,
    measurement_count,
    random_cross_indices,
    rho_policy_indices,
    sampling_ratio,
)
from .tensor_core import hosvd, mode_spectra, multi_mode_product, numerical_rank


class CrossSampler(TransformerMixin, BaseEstimator):
    """Draw a Cross pattern and read the observed blocks of a tensor.

    Parameters
    ----------
    m : int or tuple of int, optional
        Body size per mode. Exactly one of ``m`` and ``rho`` must be given.
    g : int or tuple of int, optional
        Arms per mode; defaults to ``m``.
    rho : float, optional
        Fraction of each mode to sample; sets ``m_t = round(rho * p_t)`` and
        ``g_t = round(m1*m2*m3 / p_t)``.
    random_state : int, optional

    Attributes
    ----------
    indices_ : CrossIndices
    n_measurements_ : int
    sampling_ratio_ : float
    """

    def __init__(self, m=None, g=None, rho=None, random_state=None):
        self.m = m
        self.g = g
        self.rho = rho
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_tensor3(X, ensure_finite=False)
        if (self.m is None) == (self.rho is None):
            raise ValueError("give exactly one of m and rho")
        if self.rho is not None:
            if self.g is not None:
                raise ValueError("g is derived from rho and cannot be set with it")
            self.indices_ = rho_policy_indices(X.shape, self.rho, seed=self.random_state)
        else:
            g = self.m if self.g is None else self.g
            self.indices_ = random_cross_indices(X.shape, self.m, g, seed=self.random_state)
        self.n_measurements_ = measurement_count(self.indices_)
        self.sampling_ratio_ = sampling_ratio(self.indices_)
        return self

    def transform(self, X):
        """Return the :class:`CrossObservations` of ``X`` on the fitted pattern."""
        check_is_fitted(self, "indices_")
        return extract_observations(X, self.indices_)


class CrossCompleter(BaseEstimator):
    """Complete a tensor from Cross observations.

    Parameters
    ----------
    lambdas : "default" or tuple of float
        Trimming thresholds. ``"default"`` uses
        ``lambda_scale * sqrt(p_t / m_t)``.
    lambda_scale : float
    noiseless : bool
        Use the pseudo-inverse estimator with no rank selection.
    pinv_rel_tol : float, optional
        Pseudo-inverse cutoff relative to the largest singular value.
    singularity_rel_tol : float
        Reciprocal condition number below which a joint block is singular.

    Attributes
    ----------
    estimate_ : ndarray of shape (p1, p2, p3)
    ranks_ : tuple of int
        Selected ranks. In noiseless mode, the numerical ranks of the joint
        blocks.
    lambdas_ : tuple of float or None
    report_ : CompletionReport or None
    """

    def __init__(
        self,
        lambdas="default",
        lambda_scale=DEFAULT_LAMBDA_SCALE,
        noiseless=False,
        pinv_rel_tol=None,
        singularity_rel_tol=DEFAULT_SINGULARITY_REL_TOL,
    ):
        self.lambdas = lambdas
        self.lambda_scale = lambda_scale
        self.noiseless = noiseless
        self.pinv_rel_tol = pinv_rel_tol
        self.singularity_rel_tol = singularity_rel_tol

    def fit(self, X, y=None):
        if not isinstance(X, CrossObservations):
            raise TypeError(f"expected CrossObservations, got {type(X).__name__}")
        if self.noiseless:
            self.estimate_ = complete_noiseless(X, self.pinv_rel_tol)
            self.ranks_ = tuple(numerical_rank(j, self.pinv_rel_tol) for j in X.joints)
            self.lambdas_ = None
            self.report_ = None
            return self
        if isinstance(self.lambdas, str):
            if self.lambdas != "default":
                raise ValueError(f"lambdas must be 'default' or three positive numbers, got {self.lambdas!r}")
            lambdas = default_lambda(X.dims, X.indices.m, self.lambda_scale)
        else:
            lambdas = self.lambdas
        cfg = NoisyConfig(lambdas, self.pinv_rel_tol, self.singularity_rel_tol)
        self.report_ = complete_noisy(X, cfg)
        self.estimate_ = self.report_.estimate
        self.ranks_ = self.report_.r_hat
        self.lambdas_ = cfg.lambdas
        return self

    def transform(self, X=None):
        """The completed tensor. ``X`` is ignored."""
        check_is_fitted(self, "estimate_")
        return self.estimate_

    def fit_transform(self, X, y=None):
        return self.fit(X).transform()

    def predict(self, X):
        """Estimated values at 0-based ``(i, j, k)`` positions, one per row of ``X``."""
        check_is_fitted(self, "estimate_")
        pos = np.asarray(X)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) array of positions, got shape {pos.shape}")
        if not np.issubdtype(pos.dtype, np.integer):
            raise ValueError("positions must be integers")
        dims = np.array(self.estimate_.shape)
        if pos.size and (pos.min() < 0 or np.any(pos.max(axis=0) >= dims)):
            raise ValueError(f"positions fall outside the tensor dims {tuple(dims)}")
        return self.estimate_[pos[:, 0], pos[:, 1], pos[:, 2]]


class HOSVD(TransformerMixin, BaseEstimator):
    """Truncated higher-order SVD.

    ``transform`` projects a tensor onto the fitted factors (returning the
    core) and ``inverse_transform`` maps a core back.

    Attributes
    ----------
    factors_ : tuple of ndarray
    core_ : ndarray
    singular_values_ : tuple of ndarray
        Full spectrum of each unfolding of the fitted tensor.
    """

    def __init__(self, ranks=(1, 1, 1)):
        self.ranks = ranks

    def fit(self, X, y=None):
        X = check_tensor3(X)
        tucker = hosvd(X, self.ranks)
        self.factors_ = tucker.factors
        self.core_ = tucker.core
        self.singular_values_ = mode_spectra(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "factors_")
        X = check_tensor3(X)
        dims = tuple(u.shape[0] for u in self.factors_)
        if X.shape != dims:
            raise ValueError(f"tensor has dims {X.shape}, fitted on {dims}")
        return multi_mode_product(X, [u.T for u in self.factors_])

    def inverse_transform(self, X):
        check_is_fitted(self, "factors_")
        return multi_mode_product(check_tensor3(X), self.factors_)
