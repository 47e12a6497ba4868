"""Input validation helpers shared by the functional API and the estimators."""

import numbers

import numpy as np
from sklearn.utils import check_array


def check_tensor3(x, name="x", ensure_finite=True):
    """Return ``x`` as a float64 array of shape ``(p1, p2, p3)``.

    Raises ``ValueError`` if the array is not order-3, has an empty mode, or
    (when ``ensure_finite``) contains NaN/Inf.
    """
    x = check_array(
        x,
        dtype=np.float64,
        allow_nd=True,
        ensure_2d=False,
        ensure_all_finite=ensure_finite,
        ensure_min_samples=0,
        input_name=name,
    )
    if x.ndim != 3:
        raise ValueError(f"{name} must be an order-3 tensor, got ndim={x.ndim}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty mode: shape={x.shape}")
    return x


def check_matrix(m, name="m", ensure_finite=True):
    m = check_array(
        m,
        dtype=np.float64,
        ensure_2d=True,
        ensure_all_finite=ensure_finite,
        ensure_min_samples=1,
        ensure_min_features=1,
        input_name=name,
    )
    return m


def check_mode(mode):
    """Modes are 1-based in the public API (1, 2, 3); returns the 0-based axis."""
    if isinstance(mode, bool) or not isinstance(mode, numbers.Integral) or mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return int(mode) - 1


def check_triple(values, name, minimum=1):
    """Coerce a length-3 sequence (or a scalar, broadcast) of integers."""
    if isinstance(values, numbers.Integral):
        values = (values,) * 3
    values = tuple(values)
    if len(values) != 3:
        raise ValueError(f"{name} must have exactly three entries, got {len(values)}")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, numbers.Integral):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            else:
                raise ValueError(f"{name} entries must be integers, got {v!r}")
        if v < minimum:
            raise ValueError(f"{name} entries must be >= {minimum}, got {values}")
        out.append(int(v))
    return tuple(out)


def check_positive_triple(values, name):
    if isinstance(values, numbers.Real):
        values = (values,) * 3
    values = tuple(float(v) for v in values)
    if len(values) != 3:
        raise ValueError(f"{name} must have exactly three entries")
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise ValueError(f"{name} entries must be finite and positive, got {values}")
    return values


def check_unit_interval(value, name):
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_orthonormal(u, name="u", atol=1e-8):
    """Raise ``ValueError`` unless the columns of ``u`` are orthonormal."""
    u = check_matrix(u, name=name)
    r = u.shape[1]
    if r > u.shape[0]:
        raise ValueError(f"{name} has more columns than rows: {u.shape}")
    err = np.max(np.abs(u.T @ u - np.eye(r)))
    if err > atol:
        raise ValueError(f"{name} does not have orthonormal columns (max |U^T U - I| = {err:.3g})")
    return u
