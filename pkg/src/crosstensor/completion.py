"""Tensor recovery from Cross measurements.

Two estimators share the same shape, ``body ×_1 R1 ×_2 R2 ×_3 R3``, and differ
in how each ``p_t x m_t`` factor ``R_t`` is built from the arm and joint blocks:

* :func:`complete_noiseless` uses ``R_t = arm_t @ pinv(joint_t)``. It is exact
  whenever the joint block has the same rank as the mode-t unfolding.
* :func:`complete_noisy` rotates arm and joint blocks onto singular bases, picks
  the largest leading block of the rotated joint that is well conditioned and
  keeps ``||A[:, :s] J[:s, :s]^-1|| <= lambda_t``, and assembles the factor from
  that block only.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from ._validation import check_mode, check_positive_triple, check_triple, check_unit_interval
from .cross_scheme import body_matricization
from .tensor_core import multi_mode_product, pinv, spectral_norm, svd

DEFAULT_SINGULARITY_REL_TOL = 1e-12
DEFAULT_LAMBDA_SCALE = 3.0


def default_lambda(p, m, scale=DEFAULT_LAMBDA_SCALE):
    """Trimming thresholds ``scale * sqrt(p_t / m_t)`` (``scale = 3`` by default)."""
    p = check_triple(p, "p")
    m = check_triple(m, "m")
    for t in range(3):
        if m[t] > p[t]:
            raise ValueError(f"requires m_t <= p_t: m{t + 1}={m[t]} > p{t + 1}={p[t]}")
    return tuple(scale * math.sqrt(pt / mt) for pt, mt in zip(p, m))


@dataclass(frozen=True)
class NoisyConfig:
    """Tuning for :func:`complete_noisy`.

    ``singularity_rel_tol`` is the floor on the reciprocal condition number
    ``sigma_min / sigma_max`` below which a leading joint block counts as
    singular. ``pinv_rel_tol`` only affects the pseudo-inverse based
    diagnostics.
    """

    lambdas: tuple
    pinv_rel_tol: float = None
    singularity_rel_tol: float = DEFAULT_SINGULARITY_REL_TOL

    def __post_init__(self):
        object.__setattr__(self, "lambdas", check_positive_triple(self.lambdas, "lambdas"))
        if self.pinv_rel_tol is not None:
            check_unit_interval(self.pinv_rel_tol, "pinv_rel_tol")
        check_unit_interval(self.singularity_rel_tol, "singularity_rel_tol")

    @classmethod
    def default_for(cls, obs, scale=DEFAULT_LAMBDA_SCALE, **kwargs):
        return cls(default_lambda(obs.dims, obs.indices.m, scale), **kwargs)


@dataclass
class TrimStep:
    size: int
    rcond: float
    ratio: float = None  # None when the block was rejected as singular
    accepted: bool = False


@dataclass
class ModeDiagnostics:
    sigma_min_joint_leading: float
    arm_joint_ratio: float
    trimming_steps: int
    trace: list = field(default_factory=list)


@dataclass
class CompletionReport:
    estimate: np.ndarray
    r_hat: tuple
    lambda_used: tuple
    diagnostics: tuple
    factors: tuple = None

    @property
    def degenerate(self):
        """True when some mode trimmed to rank zero and the estimate is zero."""
        return min(self.r_hat) == 0

    def to_dict(self):
        return {
            "r_hat": list(self.r_hat),
            "lambda_used": list(self.lambda_used),
            "degenerate": self.degenerate,
            "diagnostics": [
                {k: v for k, v in asdict(d).items() if k != "trace"} for d in self.diagnostics
            ],
        }


def complete_noiseless(obs, rank_rel_tol=None):
    """Recover a tensor from noiseless Cross observations.

    Returns ``body ×_1 R1 ×_2 R2 ×_3 R3`` with ``R_t = arm_t pinv(joint_t)``.
    ``rank_rel_tol`` sets the pseudo-inverse cutoff relative to the largest
    singular value of each joint block.
    """
    factors = [arm @ pinv(joint, rank_rel_tol) for arm, joint in zip(obs.arms, obs.joints)]
    return multi_mode_product(obs.body, factors)


def _full_basis(q, n):
    """Extend the orthonormal columns of ``q`` to an ``n x n`` orthogonal matrix."""
    if q.shape[1] >= n:
        return q[:, :n]
    return np.hstack([q, scipy.linalg.null_space(q.T)])


def rotate(arm, joint, body_mat):
    """Rotate the arm and joint blocks of one mode onto singular bases.

    Returns ``(A, J, U)`` with ``V`` the right singular vectors of the arm,
    ``U`` the left singular vectors of the body unfolding, ``A = arm @ V`` and
    ``J = U.T @ joint @ V``.
    """
    m, g = joint.shape
    _, _, vt = svd(arm)
    v = _full_basis(vt.T, g)
    u, _, _ = svd(body_mat)
    u = _full_basis(u, m)
    return arm @ v, u.T @ joint @ v, u


def trim(a, j, lam, singularity_rel_tol=DEFAULT_SINGULARITY_REL_TOL):
    """Adaptive trimming for one mode.

    Searches ``s = min(m, g), ..., 1`` and returns the first (largest) ``s``
    for which ``J[:s, :s]`` has reciprocal condition number above
    ``singularity_rel_tol`` and ``||A[:, :s] J[:s, :s]^-1|| <= lam``, together
    with ``A[:, :s] J[:s, :s]^-1`` and the search trace. Returns ``s = 0`` and
    ``None`` when no size qualifies.
    """
    trace = []
    for s in range(min(j.shape), 0, -1):
        block = j[:s, :s]
        sv = scipy.linalg.svdvals(block)
        rcond = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        if not rcond > singularity_rel_tol:
            trace.append(TrimStep(s, rcond))
            continue
        # A J^-1 via a solve against J^T
        product = scipy.linalg.solve(block.T, a[:, :s].T, check_finite=False).T
        ratio = spectral_norm(product)
        ok = ratio <= lam
        trace.append(TrimStep(s, rcond, ratio, ok))
        if ok:
            return s, product, trace
    return 0, None, trace


def complete_noisy(obs, cfg=None):
    """Recover a tensor from noisy Cross observations with adaptive rank selection.

    Parameters
    ----------
    obs : CrossObservations
    cfg : NoisyConfig, optional
        Defaults to ``lambda_t = 3 sqrt(p_t / m_t)``.

    Returns
    -------
    CompletionReport
        ``estimate`` is ``body ×_1 R1 ×_2 R2 ×_3 R3`` with
        ``R_t = A[:, :r] J[:r, :r]^-1 U[:, :r]^T`` and ``r = r_hat[t]``. If any
        ``r_hat`` is zero the estimate is the zero tensor.
    """
    if cfg is None:
        cfg = NoisyConfig.default_for(obs)
    factors, r_hat, diagnostics = [], [], []
    for t in range(3):
        a, j, u = rotate(obs.arms[t], obs.joints[t], body_matricization(obs, t + 1))
        r, product, trace = trim(a, j, cfg.lambdas[t], cfg.singularity_rel_tol)
        if r > 0:
            factors.append(product @ u[:, :r].T)
            sigma_min = float(scipy.linalg.svdvals(j[:r, :r])[-1])
            ratio = trace[-1].ratio
        else:
            factors.append(None)
            sigma_min, ratio = 0.0, 0.0
        r_hat.append(r)
        diagnostics.append(ModeDiagnostics(sigma_min, ratio, len(trace), trace))
    if min(r_hat) == 0:
        estimate = np.zeros(obs.dims)
    else:
        estimate = multi_mode_product(obs.body, factors)
    return CompletionReport(estimate, tuple(r_hat), cfg.lambdas, tuple(diagnostics), tuple(factors))


def arm_joint_ratio(obs, mode, rank_rel_tol=None):
    """``||arm_t pinv(joint_t)||``, the quantity the trimming threshold must dominate."""
    t = check_mode(mode)
    return spectral_norm(obs.arms[t] @ pinv(obs.joints[t], rank_rel_tol))


def joint_body_ratio(obs, mode, rank_rel_tol=None):
    """``||pinv(joint_t) body_t||`` with ``body_t`` the mode-t body unfolding."""
    t = check_mode(mode)
    return spectral_norm(pinv(obs.joints[t], rank_rel_tol) @ body_matricization(obs, mode))
