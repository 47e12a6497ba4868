"""Synthetic instances, noise models, metrics and a seeded experiment runner."""

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import ortho_group

from ._validation import check_orthonormal, check_tensor3, check_triple
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
    joint_values_from_body,
    random_cross_indices,
    rho_policy_indices,
    sampling_ratio,
)
from .tensor_core import hosvd, leading_left_singular_vectors, multi_mode_product, numerical_rank

GENERATOR_KINDS = ("gaussian_lowrank", "approx_lowrank", "nonneg_normalized")
NOISE_KINDS = ("none", "gaussian", "poisson", "multinomial")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "gaussian_lowrank"
    p: tuple = (50, 50, 50)
    r: tuple = (3, 3, 3)
    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {GENERATOR_KINDS}")
        p = check_triple(self.p, "p")
        r = check_triple(self.r, "r")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.kind != "approx_lowrank":
            if any(rt > pt for rt, pt in zip(r, p)):
                raise ValueError(f"ranks {r} exceed dims {p}")
            if max(r) ** 2 > math.prod(r):
                raise ValueError(f"rank {r} is not attainable: max(r)^2 > r1*r2*r3")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise.

    ``gaussian`` adds N(0, sigma^2); ``poisson`` observes Poisson(H * x) counts
    (``intensity`` = H); ``multinomial`` observes the cell counts of
    ``total_count`` = N draws over all cells with probabilities ``x``. Counts are
    stored unscaled.
    """

    kind: str = "none"
    sigma: float = 0.0
    intensity: float = None
    total_count: int = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "gaussian" and not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.kind == "poisson" and not (self.intensity and self.intensity > 0):
            raise ValueError("poisson noise needs a positive intensity H")
        if self.kind == "multinomial" and not (self.total_count and self.total_count >= 1):
            raise ValueError("multinomial noise needs a positive integer total count N")

    @property
    def scale(self):
        """Factor mapping observed counts back to the scale of ``x``."""
        if self.kind == "poisson":
            return float(self.intensity)
        if self.kind == "multinomial":
            return float(self.total_count)
        return 1.0


def _random_orthogonal(n, rng):
    if n == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    return ortho_group.rvs(n, random_state=rng)


def decay_profile(p, alpha):
    """Diagonal ``(1, 1, 1^-alpha, 2^-alpha, ..., (p-2)^-alpha)``."""
    return np.concatenate([[1.0, 1.0], np.arange(1, p - 1, dtype=float) ** -alpha])[:p]


def generate_tensor(spec, rng=None):
    """Draw a synthetic tensor.

    ``gaussian_lowrank``: ``S ×_1 E1 ×_2 E2 ×_3 E3`` with i.i.d. standard normal
    core and factors. ``approx_lowrank``: ``W ×_1 F1 ×_2 F2 ×_3 F3`` with ``W``
    standard normal and ``F_t = sqrt(p_t) Q_t D_t``, ``Q_t`` Haar orthogonal and
    ``D_t`` the decay profile of :func:`decay_profile`. The columns of ``Q_t``
    are the mode-t singular directions, so the tensor stays incoherent while its
    unfolding spectra decay like ``D_t``; the ``sqrt(p_t)`` factor puts entries
    on the same scale as the Gaussian construction. ``nonneg_normalized``: the
    Gaussian construction with absolute values, divided by its total so
    entries sum to one.
    """
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    p, r = spec.p, spec.r
    if spec.kind == "approx_lowrank":
        w = rng.standard_normal(p)
        mats = [
            math.sqrt(pt) * _random_orthogonal(pt, rng) * decay_profile(pt, spec.alpha)[None, :]
            for pt in p
        ]
        return multi_mode_product(w, mats)
    core = rng.standard_normal(r)
    mats = [rng.standard_normal((pt, rt)) for pt, rt in zip(p, r)]
    if spec.kind == "gaussian_lowrank":
        return multi_mode_product(core, mats)
    x = multi_mode_product(np.abs(core), [np.abs(e) for e in mats])
    return x / x.sum()


def _single_draw(obs, draw):
    """Noisy copy of ``obs`` where every physical entry gets exactly one draw.

    ``draw(values)`` returns noisy values for an array of clean values. The
    body is drawn first; arm rows that fall inside the body reuse the body
    draws, the remaining arm rows are drawn fresh. Arms of different modes only
    intersect inside the body, so this covers every overlap.
    """
    idx = obs.indices
    body = draw(obs.body)
    joints = joint_values_from_body(body, idx)
    arms = []
    for t, arm in enumerate(obs.arms):
        noisy = draw(arm)
        noisy[idx.omega[t]] = joints[t]
        arms.append(noisy)
    return CrossObservations(body, tuple(arms), idx)


def apply_noise(x, idx, noise, rng=None):
    """Observe ``x`` on ``idx`` under the noise model ``noise``."""
    rng = np.random.default_rng(noise.seed if rng is None else rng)
    if noise.kind == "multinomial":
        x = check_tensor3(x)
        if x.min() < 0:
            raise ValueError("multinomial noise needs a nonnegative tensor")
        total = x.sum()
        if not np.isclose(total, 1.0, atol=1e-8):
            raise ValueError(f"multinomial noise needs entries summing to 1, got {total}")
        probs = x.ravel(order="F") / total
        counts = rng.multinomial(noise.total_count, probs).astype(float)
        return extract_observations(counts.reshape(x.shape, order="F"), idx)
    obs = extract_observations(x, idx)
    if noise.kind == "none" or (noise.kind == "gaussian" and noise.sigma == 0):
        return obs
    if noise.kind == "gaussian":
        return _single_draw(obs, lambda v: v + noise.sigma * rng.standard_normal(v.shape))
    # poisson
    blocks = [obs.body, *obs.arms]
    if min(b.min() for b in blocks) < 0:
        raise ValueError("poisson noise needs nonnegative entries")
    return _single_draw(obs, lambda v: rng.poisson(noise.intensity * v).astype(float))


def relative_hs_loss(estimate, truth):
    """``||estimate - truth||_HS / ||truth||_HS``, accumulated slab by slab."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    num = den = 0.0
    step = max(1, (1 << 22) // max(1, truth[0].size))
    for i in range(0, truth.shape[0], step):
        t = truth[i : i + step]
        num += float(np.sum((estimate[i : i + step] - t) ** 2))
        den += float(np.sum(t * t))
    if den == 0.0:
        raise ValueError("relative loss is undefined for a zero truth tensor")
    return math.sqrt(num / den)


def subspace_alignment(u_hat, u_tilde):
    """``||u_hat^T u_tilde||_F / sqrt(k)`` with ``k`` the column count of ``u_hat``."""
    u_hat = check_orthonormal(u_hat, "u_hat")
    u_tilde = check_orthonormal(u_tilde, "u_tilde")
    if u_hat.shape[0] != u_tilde.shape[0]:
        raise ValueError(f"row counts differ: {u_hat.shape[0]} vs {u_tilde.shape[0]}")
    return float(np.linalg.norm(u_hat.T @ u_tilde) / math.sqrt(u_hat.shape[1]))


def compare_with_hosvd(obs, full, cfg=None, exact_rel_tol=1e-10):
    """Compare the Cross estimate with the HOSVD of the fully observed tensor.

    Returns a dict with ``r_hat``, ``hs_ratio`` =
    ``||X_hat - Y||_HS / ||X_tilde - Y||_HS`` (X_tilde the HOSVD projection of
    ``full`` at ranks ``r_hat``) and the three subspace alignments between the
    leading singular vectors of the unfoldings of ``X_hat`` and X_tilde's
    factors. Raises ``ValueError`` if some ``r_hat`` is zero.

    Both errors are floored at ``exact_rel_tol * ||Y||_HS`` before the
    division, so two approximations that are exact to working precision give
    a ratio of 1 rather than a ratio of rounding errors.
    """
    full = check_tensor3(full, name="full")
    report = complete_noisy(obs, cfg)
    if report.degenerate:
        raise ValueError(
            f"estimated rank {report.r_hat} has a zero mode; increase m/g (or rho)"
        )
    tucker = hosvd(full, report.r_hat)
    approx = tucker.reconstruct()
    floor = exact_rel_tol * np.linalg.norm(full.ravel())
    denom = max(np.linalg.norm((approx - full).ravel()), floor)
    numer = max(np.linalg.norm((report.estimate - full).ravel()), floor)
    ratio = numer / denom if denom > 0 else 1.0
    alignments = []
    for t, r in enumerate(report.r_hat, start=1):
        u_hat, _ = leading_left_singular_vectors(report.estimate, t, r)
        alignments.append(subspace_alignment(u_hat, tucker.factors[t - 1]))
    return {
        "sampling_ratio": sampling_ratio(obs.indices),
        "r_hat": report.r_hat,
        "lambda_used": report.lambda_used,
        "hs_ratio": float(ratio),
        "alignment": tuple(alignments),
    }


@dataclass(frozen=True)
class SamplingPolicy:
    """Either explicit sizes ``m`` and ``g`` or a ``rho`` fraction."""

    m: tuple = None
    g: tuple = None
    rho: float = None

    def __post_init__(self):
        if (self.rho is None) == (self.m is None):
            raise ValueError("give either m (and optionally g) or rho")
        if self.m is not None:
            object.__setattr__(self, "m", check_triple(self.m, "m"))
            object.__setattr__(self, "g", check_triple(self.m if self.g is None else self.g, "g"))

    def draw(self, p, seed):
        if self.rho is not None:
            return rho_policy_indices(p, self.rho, seed=seed)
        return random_cross_indices(p, self.m, self.g, seed=seed)


@dataclass(frozen=True)
class ExperimentCell:
    """One setting of the simulation grid.

    The trimming thresholds are ``lambdas`` when given, otherwise
    ``lambda_scale * sqrt(p_t / m_t)``. ``method="noiseless"`` runs the
    pseudo-inverse estimator instead.
    """

    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    sampling: SamplingPolicy = field(default_factory=lambda: SamplingPolicy(m=(10, 10, 10)))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    lambdas: tuple = None
    lambda_scale: float = DEFAULT_LAMBDA_SCALE
    singularity_rel_tol: float = DEFAULT_SINGULARITY_REL_TOL
    method: str = "noisy"

    def __post_init__(self):
        if self.method not in ("noisy", "noiseless"):
            raise ValueError(f"method must be 'noisy' or 'noiseless', got {self.method!r}")
        if not self.lambda_scale > 0:
            raise ValueError("lambda_scale must be positive")


@dataclass
class ExperimentRow:
    cell: int
    replicate: int
    generator: str
    p1: int
    p2: int
    p3: int
    r1: int
    r2: int
    r3: int
    alpha: float
    noise: str
    sigma: float
    intensity: float
    total_count: int
    m1: int
    m2: int
    m3: int
    g1: int
    g2: int
    g3: int
    method: str
    lambda1: float
    lambda2: float
    lambda3: float
    sampling_ratio: float
    relative_hs_loss: float
    r_hat1: int
    r_hat2: int
    r_hat3: int
    wall_time_seconds: float
    error: str = ""

    @property
    def r_hat(self):
        return (self.r_hat1, self.r_hat2, self.r_hat3)


CSV_COLUMNS = [f.name for f in fields(ExperimentRow)]


def replicate_seeds(seed, cell_index, replicate):
    """Independent 64-bit seeds for generation, sampling and noise of one replicate."""
    ss = np.random.SeedSequence([int(seed), int(cell_index), int(replicate)])
    return tuple(int(s) for s in ss.generate_state(3, dtype=np.uint64))


def run_replicate(cell, seed, cell_index, replicate):
    """Run one replicate; the result depends only on the four arguments."""
    gen_seed, sample_seed, noise_seed = replicate_seeds(seed, cell_index, replicate)
    spec = cell.generator
    noise = cell.noise
    base = dict(
        cell=cell_index,
        replicate=replicate,
        generator=spec.kind,
        p1=spec.p[0], p2=spec.p[1], p3=spec.p[2],
        r1=spec.r[0], r2=spec.r[1], r3=spec.r[2],
        alpha=float(spec.alpha),
        noise=noise.kind,
        sigma=float(noise.sigma),
        intensity=noise.intensity,
        total_count=noise.total_count,
        method=cell.method,
    )
    nan3 = (math.nan,) * 3
    start = time.perf_counter()
    idx = None
    lambdas = nan3
    try:
        x = generate_tensor(spec, rng=np.random.default_rng(gen_seed))
        idx = cell.sampling.draw(spec.p, sample_seed)
        obs = apply_noise(x, idx, noise, rng=np.random.default_rng(noise_seed))
        if cell.method == "noiseless":
            estimate = complete_noiseless(obs)
            r_hat = tuple(numerical_rank(j) for j in obs.joints)
        else:
            lambdas = cell.lambdas or default_lambda(spec.p, idx.m, cell.lambda_scale)
            cfg = NoisyConfig(lambdas, singularity_rel_tol=cell.singularity_rel_tol)
            report = complete_noisy(obs, cfg)
            estimate, r_hat = report.estimate, report.r_hat
        loss = relative_hs_loss(estimate / noise.scale, x)
        error = ""
    except (ValueError, np.linalg.LinAlgError) as exc:
        loss, r_hat, error = math.nan, (-1, -1, -1), f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    m = idx.m if idx is not None else (-1, -1, -1)
    g = idx.g if idx is not None else (-1, -1, -1)
    return ExperimentRow(
        **base,
        m1=m[0], m2=m[1], m3=m[2],
        g1=g[0], g2=g[1], g3=g[2],
        lambda1=lambdas[0], lambda2=lambdas[1], lambda3=lambdas[2],
        sampling_ratio=sampling_ratio(idx) if idx is not None else math.nan,
        relative_hs_loss=loss,
        r_hat1=r_hat[0], r_hat2=r_hat[1], r_hat3=r_hat[2],
        wall_time_seconds=elapsed,
        error=error,
    )


def run_experiment(cells, replicates=100, seed=0, n_jobs=1):
    """Run every cell ``replicates`` times.

    Rows come back in ``(cell, replicate)`` order whatever ``n_jobs`` is, and
    a failing replicate is recorded in its row's ``error`` column instead of
    aborting the batch.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    tasks = [(cell, seed, c, k) for c, cell in enumerate(cells) for k in range(replicates)]
    if n_jobs == 1:
        return [run_replicate(*task) for task in tasks]
    return Parallel(n_jobs=n_jobs)(delayed(run_replicate)(*task) for task in tasks)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def rows_to_csv(rows, timing=False):
    """CSV text for ``rows``; floats use the shortest round-trip repr.

    Wall-clock time is the one non-deterministic column, so it is left out
    unless ``timing`` is set.
    """
    columns = [c for c in CSV_COLUMNS if timing or c != "wall_time_seconds"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in columns])
    return buf.getvalue()


def summarize(rows):
    """Mean loss and exact-rank fraction per cell, as ``{cell: dict}``."""
    out = {}
    for row in rows:
        out.setdefault(row.cell, []).append(row)
    summary = {}
    for cell, group in out.items():
        losses = np.array([r.relative_hs_loss for r in group])
        true_rank = (group[0].r1, group[0].r2, group[0].r3)
        summary[cell] = {
            "mean_loss": float(np.nanmean(losses)) if np.isfinite(losses).any() else math.nan,
            "median_loss": float(np.nanmedian(losses)) if np.isfinite(losses).any() else math.nan,
            "rank_hit_rate": float(np.mean([r.r_hat == true_rank for r in group])),
            "failures": sum(bool(r.error) for r in group),
            "replicates": len(group),
        }
    return summary
