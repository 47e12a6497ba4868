"""Cross measurement index sets and extraction of body, arm and joint blocks.

A Cross pattern on a ``p1 x p2 x p3`` tensor consists of

* ``omega[t]``: ``m_t`` distinct positions along mode ``t``;
* ``xi[t]``: ``g_t`` distinct pairs drawn from the product of the *other two*
  omega sets, oriented cyclically: ``xi[0]`` holds ``(j, k)`` pairs from
  ``omega[1] x omega[2]``, ``xi[1]`` holds ``(k, i)`` pairs from
  ``omega[2] x omega[0]`` and ``xi[2]`` holds ``(i, j)`` pairs from
  ``omega[0] x omega[1]``.

The observed entries are the body ``omega[0] x omega[1] x omega[2]`` plus, for
every pair in ``xi[t]``, the full mode-t fiber through it (an "arm"). Arms meet
the body in the joint blocks.

Positions are stored 0-based. Only the JSON form uses 1-based positions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_tensor3, check_triple
from .tensor_core import matricize

#: Coordinate labels for each xi set, in storage order.
XI_MODES = (("j", "k"), ("k", "i"), ("i", "j"))

# For xi[t], the modes whose omega sets supply the first and second coordinate.
_XI_SOURCES = ((1, 2), (2, 0), (0, 1))


def _frozen(a, dtype=np.int64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CrossIndices:
    """Index sets of a Cross measurement pattern (0-based positions)."""

    dims: tuple
    omega: tuple
    xi: tuple
    seed: int = None

    def __post_init__(self):
        dims = check_triple(self.dims, "dims")
        if len(self.omega) != 3 or len(self.xi) != 3:
            raise ValueError("omega and xi must each hold three index sets")
        omega = []
        for t, (o, p) in enumerate(zip(self.omega, dims), start=1):
            o = np.asarray(o, dtype=np.int64).reshape(-1)
            if o.size < 1:
                raise ValueError(f"omega_{t} is empty")
            if o.min() < 0 or o.max() >= p:
                raise ValueError(f"omega_{t} has positions outside [0, {p})")
            if np.any(np.diff(o) <= 0):
                # Sorting is part of the canonical form; duplicates are errors.
                o = np.sort(o)
                if np.any(np.diff(o) == 0):
                    raise ValueError(f"omega_{t} contains duplicate positions")
            omega.append(_frozen(o))
        xi = []
        for t, pairs in enumerate(self.xi):
            pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
            if pairs.shape[0] < 1:
                raise ValueError(f"xi_{t + 1} is empty")
            a, b = _XI_SOURCES[t]
            if not (np.isin(pairs[:, 0], omega[a]).all() and np.isin(pairs[:, 1], omega[b]).all()):
                first, second = XI_MODES[t]
                raise ValueError(
                    f"xi_{t + 1} pairs ({first}, {second}) must lie in omega_{a + 1} x omega_{b + 1}"
                )
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            pairs = pairs[order]
            if np.any(np.all(np.diff(pairs, axis=0) == 0, axis=1)):
                raise ValueError(f"xi_{t + 1} contains duplicate pairs")
            xi.append(_frozen(pairs))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "omega", tuple(omega))
        object.__setattr__(self, "xi", tuple(xi))
        if self.seed is not None:
            object.__setattr__(self, "seed", int(self.seed))

    @property
    def m(self):
        return tuple(len(o) for o in self.omega)

    @property
    def g(self):
        return tuple(len(x) for x in self.xi)

    def __eq__(self, other):
        if not isinstance(other, CrossIndices):
            return NotImplemented
        return (
            self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.omega, other.omega))
            and all(np.array_equal(a, b) for a, b in zip(self.xi, other.xi))
        )

    def __repr__(self):
        return f"CrossIndices(dims={self.dims}, m={self.m}, g={self.g}, seed={self.seed})"

    def observed_mask(self):
        """Boolean tensor marking every observed entry."""
        mask = np.zeros(self.dims, dtype=bool)
        o1, o2, o3 = self.omega
        mask[np.ix_(o1, o2, o3)] = True
        x1, x2, x3 = self.xi
        mask[:, x1[:, 0], x1[:, 1]] = True
        mask[x2[:, 1], :, x2[:, 0]] = True
        mask[x3[:, 0], x3[:, 1], :] = True
        return mask


@dataclass(frozen=True, eq=False)
class CrossObservations:
    """Measured values of a Cross pattern.

    ``arms[t]`` is ``p_t x g_t``; column ``c`` is the mode-t fiber through
    ``indices.xi[t][c]``. ``joints[t]`` is the ``m_t x g_t`` restriction of
    ``arms[t]`` to the rows in ``omega[t]`` and is derived, not stored.
    """

    body: np.ndarray
    arms: tuple
    indices: CrossIndices
    joints: tuple = field(init=False)

    def __post_init__(self):
        idx = self.indices
        body = check_tensor3(self.body, name="body")
        if body.shape != idx.m:
            raise ValueError(f"body has shape {body.shape}, expected {idx.m}")
        arms = []
        for t, (a, p, g) in enumerate(zip(self.arms, idx.dims, idx.g), start=1):
            a = check_matrix(a, name=f"arm_{t}")
            if a.shape != (p, g):
                raise ValueError(f"arm_{t} has shape {a.shape}, expected {(p, g)}")
            arms.append(a)
        joints = tuple(a[o] for a, o in zip(arms, idx.omega))
        _check_joint_consistency(body, joints, idx)
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "arms", tuple(arms))
        object.__setattr__(self, "joints", joints)

    @property
    def dims(self):
        return self.indices.dims

    def scaled(self, c):
        return CrossObservations(c * self.body, tuple(c * a for a in self.arms), self.indices)


def _joint_positions(idx):
    """For each mode, the body coordinates of every joint entry.

    Returns three ``(a, b, pos_a, pos_b)`` tuples: ``joint[t][r, c]`` sits in
    the body at position ``r`` on mode ``t``, ``pos_a[c]`` on mode ``a`` and
    ``pos_b[c]`` on mode ``b``.
    """
    out = []
    for t in range(3):
        a, b = _XI_SOURCES[t]
        pa = np.searchsorted(idx.omega[a], idx.xi[t][:, 0])
        pb = np.searchsorted(idx.omega[b], idx.xi[t][:, 1])
        out.append((a, b, pa, pb))
    return out


def joint_values_from_body(body, idx):
    """The three joint blocks as read from the body block."""
    out = []
    for t, (a, b, pa, pb) in enumerate(_joint_positions(idx)):
        where = [None, None, None]
        where[t] = np.arange(idx.m[t])[:, None]
        where[a] = pa[None, :]
        where[b] = pb[None, :]
        out.append(body[where[0], where[1], where[2]])
    return out


def _check_joint_consistency(body, joints, idx):
    for t, expected in enumerate(joint_values_from_body(body, idx)):
        if not np.array_equal(expected, joints[t]):
            raise ValueError(
                f"joint block {t + 1} disagrees with the body block; an entry observed by "
                "several blocks must carry one value"
            )


def degrees_of_freedom(p, r):
    """``r1*r2*r3 + sum_t r_t * (p_t - r_t)`` for Tucker rank ``r`` in dims ``p``."""
    p = check_triple(p, "p")
    r = check_triple(r, "r")
    for t in range(3):
        if r[t] > p[t]:
            raise ValueError(f"requires r_t <= p_t: r{t + 1}={r[t]} > p{t + 1}={p[t]}")
    if max(r) ** 2 > math.prod(r):
        raise ValueError(f"requires max(r)^2 <= r1*r2*r3: {max(r)}^2 > {math.prod(r)}")
    return math.prod(r) + sum(rt * (pt - rt) for pt, rt in zip(p, r))


def measurement_count(idx):
    return math.prod(idx.m) + sum(g * (p - m) for p, m, g in zip(idx.dims, idx.m, idx.g))


def sampling_ratio(idx):
    return measurement_count(idx) / math.prod(idx.dims)


def random_cross_indices(p, m, g, seed=None):
    """Draw a Cross pattern uniformly at random.

    ``omega[t]`` is a uniform ``m_t``-subset of the mode-t positions and
    ``xi[t]`` a uniform ``g_t``-subset of the product of the other two omega
    sets. ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    p = check_triple(p, "p")
    m = check_triple(m, "m")
    g = check_triple(g, "g")
    for t in range(3):
        if m[t] > p[t]:
            raise ValueError(f"requires m_t <= p_t: m{t + 1}={m[t]} > p{t + 1}={p[t]}")
    for t, (a, b) in enumerate(_XI_SOURCES):
        if g[t] > m[a] * m[b]:
            raise ValueError(
                f"requires g_t <= product of the other m's: g{t + 1}={g[t]} > "
                f"m{a + 1}*m{b + 1}={m[a] * m[b]}"
            )
    rng = np.random.default_rng(seed)
    omega = [np.sort(rng.choice(p[t], size=m[t], replace=False)) for t in range(3)]
    xi = []
    for t, (a, b) in enumerate(_XI_SOURCES):
        flat = rng.choice(m[a] * m[b], size=g[t], replace=False)
        ia, ib = np.divmod(flat, m[b])
        xi.append(np.column_stack([omega[a][ia], omega[b][ib]]))
    return CrossIndices(p, omega, xi, seed=seed if isinstance(seed, (int, np.integer)) else None)


def round_half_away(x):
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def rho_policy_sizes(p, rho):
    """``m_t = round(rho * p_t)`` and ``g_t = round(m1*m2*m3 / p_t)``, rounding half away from zero."""
    p = check_triple(p, "p")
    rho = float(rho)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    m = tuple(max(1, round_half_away(rho * pt)) for pt in p)
    g = tuple(max(1, round_half_away(math.prod(m) / pt)) for pt in p)
    return m, g


def rho_policy_indices(p, rho, seed=None):
    m, g = rho_policy_sizes(p, rho)
    return random_cross_indices(p, m, g, seed=seed)


def extract_observations(x, idx):
    """Read the body, arm and joint blocks of ``x`` on the pattern ``idx``.

    Only the observed entries of ``x`` are touched, so unobserved entries may
    hold anything (including NaN).
    """
    x = check_tensor3(x, ensure_finite=False)
    if x.shape != idx.dims:
        raise ValueError(f"tensor has dims {x.shape} but the indices were built for {idx.dims}")
    o1, o2, o3 = idx.omega
    x1, x2, x3 = idx.xi
    body = x[np.ix_(o1, o2, o3)]
    arms = (
        x[:, x1[:, 0], x1[:, 1]],
        x[x2[:, 1], :, x2[:, 0]].T,
        x[x3[:, 0], x3[:, 1], :].T,
    )
    return CrossObservations(np.ascontiguousarray(body), tuple(np.ascontiguousarray(a) for a in arms), idx)


def body_matricization(obs, mode):
    return matricize(obs.body, mode)
