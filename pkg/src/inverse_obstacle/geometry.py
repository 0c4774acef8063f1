"""Star-shaped boundaries described by a truncated Fourier radius function.

A boundary is ``Gamma(t) = r(t) (cos t, sin t)`` with

    r(t; c) = c_0 + sum_{m=1}^M c_m cos(m t) + c_{m+M} sin(m t).

Coefficient vectors are stored as flat numpy arrays laid out as
``[c_0, c_1..c_M, c_{M+1}..c_{2M}]``; :class:`StarCoeffs` is a light wrapper
that carries ``M`` alongside them.
"""

from dataclasses import dataclass

import numpy as np

VALIDATION_GRID = 1024


class InvalidCurveError(ValueError):
    """The radius function is not strictly positive."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Angular samples do not determine all Fourier coefficients."""


@dataclass(frozen=True)
class StarCoeffs:
    """Fourier coefficients of a star-shaped radius function."""

    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        if c.size % 2 != 1:
            raise ValueError(f"coefficient vector must have odd length 2M+1, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def M(self) -> int:
        return (self.c.size - 1) // 2

    @classmethod
    def circle(cls, radius: float = 1.0, M: int = 0) -> "StarCoeffs":
        c = np.zeros(2 * M + 1)
        c[0] = radius
        return cls(c)

    @classmethod
    def from_modes(cls, M: int, c0: float, cos=None, sin=None) -> "StarCoeffs":
        """Build coefficients from dicts ``{m: amplitude}`` of cosine/sine modes."""
        c = np.zeros(2 * M + 1)
        c[0] = c0
        for m, a in (cos or {}).items():
            c[m] = a
        for m, a in (sin or {}).items():
            c[m + M] = a
        return cls(c)

    def __len__(self):
        return self.c.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.c, dtype=dtype)


def _as_vector(c) -> np.ndarray:
    if isinstance(c, StarCoeffs):
        return c.c
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size % 2 != 1:
        raise ValueError(f"coefficient vector must have odd length 2M+1, got {c.size}")
    return c


def fourier_basis(t, M: int, deriv: int = 0) -> np.ndarray:
    """Matrix whose columns are the ``deriv``-th derivatives of the basis.

    Row ``i`` evaluates ``[1, cos(mt), ..., sin(mt), ...]`` (differentiated
    ``deriv`` times) at ``t[i]``, so ``fourier_basis(t, M) @ c = r(t; c)``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    m = np.arange(1, M + 1)
    arg = np.outer(t, m)
    # d^k/dt^k cos(mt) = m^k cos(mt + k pi/2), likewise for sin
    shift = deriv * np.pi / 2
    scale = m.astype(float) ** deriv
    cos_part = scale * np.cos(arg + shift)
    sin_part = scale * np.sin(arg + shift)
    const = np.full((t.size, 1), 1.0 if deriv == 0 else 0.0)
    return np.hstack([const, cos_part, sin_part])


def radius(c, t, deriv: int = 0):
    """Radius function ``r(t; c)`` (or its ``deriv``-th derivative)."""
    c = _as_vector(c)
    M = (c.size - 1) // 2
    out = fourier_basis(t, M, deriv) @ c
    return out.item() if np.ndim(t) == 0 else out.reshape(np.shape(t))


def is_valid(c) -> bool:
    """True iff ``r(t; c) > 0`` on a uniform 1024-point grid."""
    t = 2 * np.pi * np.arange(VALIDATION_GRID) / VALIDATION_GRID
    return bool(np.min(radius(c, t)) > 0)


def min_radius(c) -> float:
    t = 2 * np.pi * np.arange(VALIDATION_GRID) / VALIDATION_GRID
    return float(np.min(radius(c, t)))


@dataclass(frozen=True)
class DiscretizedCurve:
    """Boundary sampled at ``t_j = 2 pi j / n``.

    Attributes
    ----------
    t : (n,) parameter grid
    points : (n, 2) boundary nodes ``Gamma(t_j)``
    deriv1 : (n, 2) ``Gamma'(t_j)``
    deriv2 : (n, 2) ``Gamma''(t_j)``
    speed : (n,) ``|Gamma'(t_j)|``
    normals : (n, 2) unit outward normals
    radial : (n, 2) unit radial directions ``(cos t_j, sin t_j)``
    """

    t: np.ndarray
    points: np.ndarray
    deriv1: np.ndarray
    deriv2: np.ndarray
    speed: np.ndarray
    normals: np.ndarray
    radial: np.ndarray

    @property
    def n(self) -> int:
        return self.t.size

    def arclength(self) -> float:
        return float(np.sum(self.speed) * 2 * np.pi / self.n)


def discretize(c, n: int) -> DiscretizedCurve:
    """Sample the boundary at ``n`` equispaced parameters with exact derivatives."""
    if n < 16 or n % 2:
        raise ValueError(f"n must be an even integer >= 16, got {n}")
    if not is_valid(c):
        raise InvalidCurveError("radius function is not strictly positive")
    c = _as_vector(c)
    M = (c.size - 1) // 2
    t = 2 * np.pi * np.arange(n) / n
    r0 = fourier_basis(t, M, 0) @ c
    r1 = fourier_basis(t, M, 1) @ c
    r2 = fourier_basis(t, M, 2) @ c
    cos_t, sin_t = np.cos(t), np.sin(t)
    e_r = np.column_stack([cos_t, sin_t])
    e_t = np.column_stack([-sin_t, cos_t])
    points = r0[:, None] * e_r
    d1 = r1[:, None] * e_r + r0[:, None] * e_t
    d2 = (r2 - r0)[:, None] * e_r + 2 * r1[:, None] * e_t
    speed = np.hypot(d1[:, 0], d1[:, 1])
    # counter-clockwise parametrization: outward normal is the tangent rotated by -90 degrees
    normals = np.column_stack([d1[:, 1], -d1[:, 0]]) / speed[:, None]
    return DiscretizedCurve(t, points, d1, d2, speed, normals, e_r)


def gaussian_filter(dc, sigma: float, M: int | None = None) -> np.ndarray:
    """Damp mode ``m`` of a coefficient update by ``exp(-m^2 / (sigma^2 M^2))``.

    Returns a new array; the input is left unchanged.
    """
    dc = np.array(_as_vector(dc), dtype=float)
    if M is None:
        M = (dc.size - 1) // 2
    if dc.size != 2 * M + 1:
        raise ValueError(f"update has length {dc.size}, expected {2 * M + 1}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if M == 0:
        return dc
    m = np.arange(1, M + 1)
    with np.errstate(under="ignore"):
        damp = np.exp(-(m**2) / (sigma**2 * M**2))
    dc[1 : M + 1] *= damp
    dc[M + 1 :] *= damp
    return dc


def _as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("point cloud is empty")
    return pts


def _nearest_distances(src: np.ndarray, dst: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(src.shape[0])
    for start in range(0, src.shape[0], chunk):
        block = src[start : start + chunk]
        d2 = np.sum((block[:, None, :] - dst[None, :, :]) ** 2, axis=-1)
        out[start : start + chunk] = np.sqrt(np.min(d2, axis=1))
    return out


def chamfer(S1, S2) -> float:
    """Symmetric Chamfer distance between two 2D point clouds."""
    a = _as_cloud(S1)
    b = _as_cloud(S2)
    d_ab = _nearest_distances(a, b).mean()
    d_ba = _nearest_distances(b, a).mean()
    # sorted addition keeps the result exactly symmetric in its arguments
    lo, hi = sorted((d_ab, d_ba))
    return float(0.5 * lo + 0.5 * hi)


def fit_star(points, M: int) -> StarCoeffs:
    """Least-squares star-shaped fit to a point cloud.

    Minimizes ``sum_l (|t_l| - r(arg t_l; c))^2`` using a QR factorization.
    """
    pts = _as_cloud(points)
    n_coef = 2 * M + 1
    if pts.shape[0] < n_coef:
        raise RankDeficiencyError(
            f"{pts.shape[0]} points cannot determine {n_coef} coefficients"
        )
    rho = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(rho == 0):
        raise ValueError("point cloud contains the origin")
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    theta = np.where(theta == -np.pi, np.pi, theta)
    A = fourier_basis(theta, M)
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0) * np.sqrt(pts.shape[0]):
        raise RankDeficiencyError("angular samples do not determine the coefficients")
    coef = np.linalg.solve(R, Q.T @ rho)
    return StarCoeffs(coef)


def relative_error(c_est, c_true) -> float:
    """``||c_est - c_true|| / ||c_true||`` in the Euclidean norm."""
    a = _as_vector(c_est)
    b = _as_vector(c_true)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
