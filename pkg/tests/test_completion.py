import json
import math

import numpy as np
import pytest

from crosstensor.completion import (
    NoisyConfig,
    arm_joint_ratio,
    complete_noiseless,
    complete_noisy,
    default_lambda,
    joint_body_ratio,
    rotate,
    trim,
)
from crosstensor.cross_scheme import CrossIndices, extract_observations, random_cross_indices
from crosstensor.simlab import GeneratorSpec, generate_tensor
from crosstensor.tensor_core import matricize, multi_mode_product, numerical_rank


def gaussian_lowrank(p, r, seed):
    return generate_tensor(GeneratorSpec(p=p, r=r, seed=seed))


def rel_err(a, b):
    return np.linalg.norm((a - b).ravel()) / np.linalg.norm(b.ravel())


def noisy_obs(x, idx, sigma, seed):
    """Gaussian noise with one draw per physical entry, built from a full noise tensor."""
    z = np.random.default_rng(seed).standard_normal(x.shape)
    return extract_observations(x + sigma * z, idx)


def reference_estimate(obs, lambdas, tol=1e-12):
    """Straight numpy transcription of rotation, trimming and assembly."""
    factors = []
    for t in range(3):
        arm, joint = obs.arms[t], obs.joints[t]
        body = matricize(obs.body, t + 1)
        v = np.linalg.svd(arm, full_matrices=True)[2].T
        u = np.linalg.svd(body, full_matrices=True)[0]
        a, j = arm @ v, u.T @ joint @ v
        r = 0
        for s in range(min(j.shape), 0, -1):
            sv = np.linalg.svd(j[:s, :s], compute_uv=False)
            if sv[-1] / sv[0] <= tol:
                continue
            prod = a[:, :s] @ np.linalg.inv(j[:s, :s])
            if np.linalg.norm(prod, 2) <= lambdas[t]:
                r = s
                break
        if r == 0:
            return np.zeros(obs.dims), None
        factors.append(prod @ u[:, :r].T)
    return multi_mode_product(obs.body, factors), tuple(f.shape for f in factors)


def test_default_lambda_examples():
    assert default_lambda((50, 50, 50), (10, 10, 10))[0] == pytest.approx(6.7082039, abs=1e-6)
    assert default_lambda((7, 7, 7), (7, 7, 7)) == (3.0, 3.0, 3.0)
    lam = default_lambda((121, 145, 121), (61, 73, 61))
    expected = (3 * math.sqrt(121 / 61), 3 * math.sqrt(145 / 73), 3 * math.sqrt(121 / 61))
    assert lam == pytest.approx(expected, rel=1e-15)
    with pytest.raises(ValueError):
        default_lambda((10, 10, 10), (11, 1, 1))


def test_noisy_config_validation():
    with pytest.raises(ValueError):
        NoisyConfig((1.0, -1.0, 1.0))
    with pytest.raises(ValueError):
        NoisyConfig((1.0, 1.0, 1.0), singularity_rel_tol=1.5)
    assert NoisyConfig(2.0).lambdas == (2.0, 2.0, 2.0)


def test_noiseless_rank_one_singletons():
    rng = np.random.default_rng(0)
    u, v, w = (rng.uniform(0.5, 2.0, n) * rng.choice([-1, 1], n) for n in (5, 6, 7))
    x = np.einsum("i,j,k->ijk", u, v, w)
    idx = CrossIndices(x.shape, [[0], [0], [0]], [[[0, 0]], [[0, 0]], [[0, 0]]])
    est = complete_noiseless(extract_observations(x, idx))
    assert rel_err(est, x) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_exact_at_minimal_sizes(seed):
    p, r = (30, 40, 50), (3, 2, 4)
    x = gaussian_lowrank(p, r, seed)
    for attempt in range(100):
        idx = random_cross_indices(p, r, r, seed=1000 * seed + attempt)
        obs = extract_observations(x, idx)
        if all(numerical_rank(j) == rt for j, rt in zip(obs.joints, r)):
            break
    assert rel_err(complete_noiseless(obs), x) <= 1e-8


def test_noisy_with_zero_noise_is_exact():
    p, r = (30, 30, 30), (3, 3, 3)
    x = gaussian_lowrank(p, r, 3)
    obs = extract_observations(x, random_cross_indices(p, 8, 8, seed=3))
    report = complete_noisy(obs)
    assert report.r_hat == r
    assert rel_err(report.estimate, x) <= 1e-8
    assert report.lambda_used == default_lambda(p, (8, 8, 8))


def test_rotate_identities():
    x = gaussian_lowrank((20, 21, 22), (2, 3, 2), 4)
    obs = noisy_obs(x, random_cross_indices(x.shape, 5, 6, seed=4), 0.1, 4)
    for t in range(3):
        arm, joint = obs.arms[t], obs.joints[t]
        a, j, u = rotate(arm, joint, matricize(obs.body, t + 1))
        m, g = joint.shape
        assert a.shape == arm.shape and j.shape == (m, g) and u.shape == (m, m)
        np.testing.assert_allclose(u.T @ u, np.eye(m), atol=1e-12)
        # A restricted to omega rows is U J
        np.testing.assert_allclose(a[obs.indices.omega[t]], u @ j, atol=1e-10)
        # A has non-increasing column norms (right singular basis of the arm)
        norms = np.linalg.norm(a, axis=0)
        assert np.all(np.diff(norms) <= 1e-10)


def test_rotate_pads_bases_when_rank_deficient():
    # g > p: arm has only p right singular vectors; the basis is completed
    x = gaussian_lowrank((4, 6, 6), (2, 2, 2), 5)
    obs = extract_observations(x, random_cross_indices(x.shape, (3, 3, 3), (6, 6, 6), seed=5))
    a, j, u = rotate(obs.arms[0], obs.joints[0], matricize(obs.body, 1))
    assert a.shape == (4, 6) and j.shape == (3, 6)
    np.testing.assert_allclose(a[:, 4:], 0.0, atol=1e-12)


def test_trim_hand_built():
    j = np.diag([1.0, 1e-3, 1e-20])
    a = np.vstack([np.eye(3), np.zeros((2, 3))])
    s, prod, trace = trim(a, j, lam=10.0)
    assert s == 1
    np.testing.assert_allclose(prod, a[:, :1])
    assert [step.size for step in trace] == [3, 2, 1]
    assert trace[0].ratio is None and not trace[0].accepted
    assert trace[1].ratio == pytest.approx(1e3)
    assert trace[2].accepted
    s, prod, trace = trim(a, j, lam=1e4)
    assert s == 2
    s, prod, trace = trim(a, j, lam=1e-3)
    assert s == 0 and prod is None and len(trace) == 3


@pytest.mark.parametrize("seed", range(10))
def test_trimming_maximality_from_trace(seed):
    x = gaussian_lowrank((25, 25, 25), (3, 3, 3), seed)
    obs = noisy_obs(x, random_cross_indices(x.shape, 8, 8, seed=seed), 0.5, seed)
    report = complete_noisy(obs)
    for t, d in enumerate(report.diagnostics):
        r = report.r_hat[t]
        assert r <= min(obs.indices.m[t], obs.indices.g[t])
        sizes = [step.size for step in d.trace]
        assert sizes == list(range(min(obs.joints[t].shape), max(r, 1) - 1, -1))
        for step in d.trace[:-1]:
            assert not step.accepted
        if r > 0:
            assert d.trace[-1].accepted and d.arm_joint_ratio <= report.lambda_used[t]
        assert d.trimming_steps == len(d.trace)


@pytest.mark.parametrize("seed", range(6))
def test_noisy_matches_reference_transcription(seed):
    x = gaussian_lowrank((20, 22, 24), (3, 2, 3), seed)
    obs = noisy_obs(x, random_cross_indices(x.shape, (6, 5, 7), (6, 7, 5), seed=seed), 0.2, seed)
    lam = default_lambda(obs.dims, obs.indices.m)
    report = complete_noisy(obs, NoisyConfig(lam))
    expected, shapes = reference_estimate(obs, lam)
    if shapes is not None:
        assert tuple(f.shape for f in report.factors) == shapes
    np.testing.assert_allclose(report.estimate, expected, atol=1e-9 * np.abs(x).max())


def test_assembly_factor_has_body_side_width():
    x = gaussian_lowrank((20, 20, 20), (2, 2, 2), 8)
    obs = noisy_obs(x, random_cross_indices(x.shape, (4, 5, 6), (7, 6, 5), seed=8), 0.05, 8)
    report = complete_noisy(obs)
    for t, f in enumerate(report.factors):
        assert f.shape == (obs.dims[t], obs.indices.m[t])


def test_degenerate_threshold_gives_zero_tensor():
    x = gaussian_lowrank((15, 15, 15), (2, 2, 2), 9)
    obs = extract_observations(x, random_cross_indices(x.shape, 5, 5, seed=9))
    report = complete_noisy(obs, NoisyConfig((1e-9, 1e-9, 1e-9)))
    assert report.r_hat == (0, 0, 0)
    assert report.degenerate
    assert not report.estimate.any()
    assert report.estimate.shape == x.shape
    doc = json.loads(json.dumps(report.to_dict()))
    assert doc["degenerate"] is True


def test_one_degenerate_mode_zeroes_everything():
    x = gaussian_lowrank((15, 15, 15), (2, 2, 2), 10)
    obs = extract_observations(x, random_cross_indices(x.shape, 5, 5, seed=10))
    report = complete_noisy(obs, NoisyConfig((100.0, 1e-9, 100.0)))
    assert report.r_hat[1] == 0 and report.r_hat[0] > 0
    assert not report.estimate.any()


@pytest.mark.parametrize("seed", range(5))
def test_scale_equivariance(seed):
    x = gaussian_lowrank((20, 20, 20), (3, 3, 3), seed)
    obs = noisy_obs(x, random_cross_indices(x.shape, 7, 7, seed=seed), 0.3, seed)
    cfg = NoisyConfig.default_for(obs)
    base = complete_noisy(obs, cfg)
    scaled = complete_noisy(obs.scaled(7.3), cfg)
    assert scaled.r_hat == base.r_hat
    np.testing.assert_allclose(scaled.estimate, 7.3 * base.estimate, rtol=0,
                               atol=1e-10 * np.abs(7.3 * base.estimate).max())


@pytest.mark.parametrize("seed", range(5))
def test_output_rank_bounded_by_selected_rank(seed):
    x = gaussian_lowrank((20, 20, 20), (3, 3, 3), seed)
    obs = noisy_obs(x, random_cross_indices(x.shape, 8, 8, seed=seed), 1.0, seed)
    report = complete_noisy(obs)
    for t in range(3):
        assert numerical_rank(matricize(report.estimate, t + 1), 1e-9) <= report.r_hat[t]


def test_permutation_equivariance():
    p = (12, 13, 14)
    x = gaussian_lowrank(p, (2, 3, 2), 11)
    x = x + 0.1 * np.random.default_rng(11).standard_normal(p)
    idx = random_cross_indices(p, (5, 5, 5), (6, 6, 6), seed=11)
    perm = np.random.default_rng(12).permutation(p[0])
    inv = np.argsort(perm)
    xp = x[perm]
    omega = [inv[idx.omega[0]], idx.omega[1], idx.omega[2]]
    xi = [
        idx.xi[0],
        np.column_stack([idx.xi[1][:, 0], inv[idx.xi[1][:, 1]]]),
        np.column_stack([inv[idx.xi[2][:, 0]], idx.xi[2][:, 1]]),
    ]
    idx_p = CrossIndices(p, omega, xi)
    a = complete_noisy(extract_observations(x, idx))
    b = complete_noisy(extract_observations(xp, idx_p))
    assert a.r_hat == b.r_hat
    np.testing.assert_allclose(b.estimate, a.estimate[perm], atol=1e-10 * np.abs(a.estimate).max())


def test_ratio_diagnostics_zero_tensor():
    idx = random_cross_indices((6, 6, 6), 3, 3, seed=0)
    obs = extract_observations(np.zeros((6, 6, 6)), idx)
    for t in (1, 2, 3):
        assert arm_joint_ratio(obs, t) == 0.0
        assert joint_body_ratio(obs, t) == 0.0


def test_arm_joint_ratio_at_least_one():
    x = gaussian_lowrank((20, 20, 20), (3, 3, 3), 13)
    obs = extract_observations(x, random_cross_indices(x.shape, 6, 6, seed=13))
    for t in (1, 2, 3):
        assert arm_joint_ratio(obs, t) >= 1.0 - 1e-12


def test_joint_body_ratio_exhaustive_xi_brute_force():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((4, 4, 4))
    m = (2, 2, 2)
    omega = [np.sort(rng.choice(4, 2, replace=False)) for _ in range(3)]
    xi = [
        [(j, k) for j in omega[1] for k in omega[2]],
        [(k, i) for k in omega[2] for i in omega[0]],
        [(i, j) for i in omega[0] for j in omega[1]],
    ]
    idx = CrossIndices((4, 4, 4), omega, xi)
    obs = extract_observations(x, idx)
    for t in range(3):
        body = matricize(obs.body, t + 1)
        # exhaustive xi: the joint block holds every column of the body unfolding
        assert obs.joints[t].shape == (m[t], 4)
        expected = np.linalg.norm(np.linalg.pinv(obs.joints[t]) @ body, 2)
        assert joint_body_ratio(obs, t + 1) == pytest.approx(expected, rel=1e-10)
        assert joint_body_ratio(obs, t + 1) >= 1.0 - 1e-12


def test_small_noise_beats_large_noise():
    p, lam = (50, 50, 50), 3 * math.sqrt(5)
    means = {}
    for sigma in (1.0, 0.01):
        losses = []
        for s in range(100):
            x = gaussian_lowrank(p, (3, 3, 3), s)
            obs = noisy_obs(x, random_cross_indices(p, 10, 10, seed=s), sigma, s)
            losses.append(rel_err(complete_noisy(obs, NoisyConfig((lam, lam, lam))).estimate, x))
        means[sigma] = np.mean(losses)
    assert means[0.01] < means[1.0]
    assert means[0.01] < 0.1


def test_ratio_diagnostics_reject_bad_mode():
    obs = extract_observations(np.ones((3, 3, 3)), random_cross_indices((3, 3, 3), 1, 1, seed=0))
    with pytest.raises(ValueError):
        arm_joint_ratio(obs, 0)
    with pytest.raises(ValueError):
        joint_body_ratio(obs, 4)


def test_default_lambda_dominates_twice_arm_joint_ratio():
    # Monte Carlo claim: lambda_t >= 2 * ||arm_t pinv(joint_t)|| in at least 90% of
    # random incoherent draws at p=50, r=3, m=g=10. Counted per (draw, mode).
    p, m, draws = (50, 50, 50), (10, 10, 10), 100
    lam = default_lambda(p, m)
    hits = []
    for s in range(draws):
        x = gaussian_lowrank(p, (3, 3, 3), s)
        obs = extract_observations(x, random_cross_indices(p, m, m, seed=s))
        hits.extend(lam[t] >= 2 * arm_joint_ratio(obs, t + 1) for t in range(3))
    rate = float(np.mean(hits))
    assert rate >= 0.90, f"lambda >= 2*arm_joint_ratio held in {rate:.1%} of (draw, mode) pairs"
