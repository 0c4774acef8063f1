"""Cylindrical Bessel and Hankel functions of integer order.

Thin, domain-checked wrappers around :mod:`scipy.special`; orders 0 and 1
go through the dedicated Cephes routines, which are several times faster
than the general-order ones and used for every kernel evaluation. Orders are
restricted to ``0 <= n <= N_MAX`` and arguments to the real half line.
All functions accept scalars or arrays and broadcast like numpy ufuncs.
"""

import numpy as np
from scipy import special

N_MAX = 200


class DomainError(ValueError):
    """Raised when an order or argument is outside the supported domain."""


def _check_order(n):
    n_arr = np.asarray(n)
    if not np.issubdtype(n_arr.dtype, np.integer):
        if not np.all(np.isfinite(n_arr)) or np.any(n_arr != np.round(n_arr)):
            raise DomainError(f"order must be an integer, got {n!r}")
    if np.any(n_arr < 0) or np.any(n_arr > N_MAX):
        raise DomainError(f"order must lie in [0, {N_MAX}], got {n!r}")
    return n_arr


def _check_arg(x, strict):
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)):
        raise DomainError("argument must be finite")
    bad = x_arr <= 0 if strict else x_arr < 0
    if np.any(bad):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"argument must be {bound}")
    return x_arr


_FAST_J = {0: special.j0, 1: special.j1}
_FAST_Y = {0: special.y0, 1: special.y1}


def _jn(n_arr, x_arr):
    if n_arr.ndim == 0 and int(n_arr) in _FAST_J:
        return _FAST_J[int(n_arr)](x_arr)
    return special.jv(n_arr, x_arr)


def _yn(n_arr, x_arr):
    if n_arr.ndim == 0 and int(n_arr) in _FAST_Y:
        return _FAST_Y[int(n_arr)](x_arr)
    return special.yv(n_arr, x_arr)


def _unwrap(value):
    return value.item() if np.ndim(value) == 0 else value


def bessel_j(n, x):
    """Bessel function of the first kind ``J_n(x)`` for ``x >= 0``."""
    n_arr = _check_order(n)
    x_arr = _check_arg(x, strict=False)
    return _unwrap(_jn(n_arr, x_arr))


def bessel_y(n, x):
    """Bessel function of the second kind ``Y_n(x)`` for ``x > 0``.

    ``x = 0`` is the logarithmic singularity and raises :class:`DomainError`
    instead of returning ``-inf``.
    """
    n_arr = _check_order(n)
    x_arr = _check_arg(x, strict=True)
    return _unwrap(_yn(n_arr, x_arr))


def hankel1(n, x):
    """Hankel function of the first kind ``H_n^(1)(x) = J_n(x) + i Y_n(x)``."""
    n_arr = _check_order(n)
    x_arr = _check_arg(x, strict=True)
    j = _jn(n_arr, x_arr)
    y = _yn(n_arr, x_arr)
    return _unwrap(j + 1j * y)
