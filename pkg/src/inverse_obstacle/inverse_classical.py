"""Gauss-Newton shape iteration and the linear sampling method."""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from skimage import measure

from . import specfun
from .forward import ScatterConfig, frechet_matrix, solve_forward
from .geometry import StarCoeffs, chamfer, fit_star, gaussian_filter, is_valid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GNParams:
    n_max: int = 20
    eps_s: float = 5e-8
    eps_r: float = 1e-6
    max_filter_attempts: int = 10

    def __post_init__(self):
        if min(self.n_max, self.eps_s, self.eps_r, self.max_filter_attempts) <= 0:
            raise ValueError("Gauss-Newton parameters must be positive")


@dataclass
class GNResult:
    c_final: StarCoeffs
    iterations: int
    residual_history: np.ndarray
    termination: str
    step_history: list = field(default_factory=list)
    filtered_steps: int = 0


def solve_stacked_lsq(J: np.ndarray, residual: np.ndarray, cond_max: float = 1e12) -> np.ndarray:
    """Real least-squares update for a complex Jacobian.

    Solves ``[Re J; Im J] dc = [Re r; Im r]`` by pivoted QR, switching to a
    truncated SVD when the triangular factor is too ill-conditioned.
    """
    A = np.vstack([J.real, J.imag])
    b = np.concatenate([residual.real, residual.imag])
    Q, R, perm = la.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] > 0 and diag[0] / diag[-1] < cond_max and np.linalg.cond(R) < cond_max:
        x = np.empty(A.shape[1])
        x[perm] = la.solve_triangular(R, Q.T @ b)
        return x
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s >= 1e-12 * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])


def gauss_newton(u_meas, c0, cfg: ScatterConfig, p: GNParams = GNParams()) -> GNResult:
    """Gauss-Newton iteration with Gaussian filtering of invalid updates.

    Iterates ``c <- c + dc`` where ``dc`` solves the stacked real linearized
    problem. When ``c + dc`` is not star-shaped the update is damped by
    :func:`~inverse_obstacle.geometry.gaussian_filter` with ``sigma = 1, 0.1,
    0.01, ...``; the iteration stops with ``"filter_failed"`` if that never
    yields a valid curve.

    Termination reasons: ``residual_met``, ``update_small``, ``max_iters``,
    ``filter_failed``.
    """
    u_meas = np.asarray(u_meas)
    if u_meas.shape != (cfg.n_t, cfg.n_d):
        raise ValueError(f"data has shape {u_meas.shape}, config expects {(cfg.n_t, cfg.n_d)}")
    c = np.array(np.asarray(c0, dtype=float))
    if not is_valid(c):
        raise ValueError("initial guess is not a valid star-shaped curve")
    M = (c.size - 1) // 2
    target = u_meas.ravel(order="F")

    data, sol = solve_forward(c, cfg)
    res_vec = target - data.ravel(order="F")
    residuals = [float(np.linalg.norm(res_vec))]
    steps = []
    filtered = 0
    it = 0
    step = 2 * p.eps_s
    while True:
        if residuals[-1] <= p.eps_r:
            termination = "residual_met"
            break
        if step <= p.eps_s:
            termination = "update_small"
            break
        if it >= p.n_max:
            termination = "max_iters"
            break
        J = frechet_matrix(c, cfg, sol)
        dc = solve_stacked_lsq(J, res_vec)
        trial = dc
        sigma = 1.0
        attempts = 0
        while not is_valid(c + trial):
            if attempts == p.max_filter_attempts:
                trial = None
                break
            trial = gaussian_filter(dc, sigma, M)
            sigma /= 10
            attempts += 1
        if trial is None:
            termination = "filter_failed"
            break
        filtered += attempts > 0
        c = c + trial
        step = float(np.linalg.norm(trial))
        steps.append(step)
        it += 1
        data, sol = solve_forward(c, cfg)
        res_vec = target - data.ravel(order="F")
        residuals.append(float(np.linalg.norm(res_vec)))
        logger.debug("GN iter %d: residual %.3e, step %.3e", it, residuals[-1], step)
    return GNResult(StarCoeffs(c), it, np.array(residuals), termination, steps, filtered)


@dataclass(frozen=True)
class LsmParams:
    grid_size: int = 200
    extent: float = 3.0
    alpha: float = 1e-4
    levels: tuple = tuple(7 - 0.2 * j for j in range(16))
    jump: float = 0.1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.grid_size < 2:
            raise ValueError("grid must have at least two points per axis")

    def axis(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.grid_size)

    def points(self) -> np.ndarray:
        ax = self.axis()
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


class NoLevelFoundError(RuntimeError):
    """No level set satisfies the selection heuristic."""


def scaled_green(points, receivers, k: float) -> np.ndarray:
    """``exp(i pi/4) sqrt(pi k/2) H_0^(1)(k |x - x_j|)``, shape (N_t, n_points)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    diff = receivers[:, None, :] - points[None, :, :]
    r = np.hypot(diff[..., 0], diff[..., 1])
    return np.exp(1j * np.pi / 4) * np.sqrt(np.pi * k / 2) * specfun.hankel1(0, k * r)


def lsm_indicator_points(u_meas, cfg: ScatterConfig, points, alpha: float = 1e-4) -> np.ndarray:
    """Indicator ``h(x) = log ||g_x||`` at arbitrary sampling points.

    ``g_x`` is the Tikhonov-regularized solution of ``A g = Phi_x`` with
    ``A = (2 pi / N_d) u_meas``. One SVD of ``A`` serves all points.
    """
    u_meas = np.asarray(u_meas)
    if u_meas.shape != (cfg.n_t, cfg.n_d):
        raise ValueError(f"data has shape {u_meas.shape}, config expects {(cfg.n_t, cfg.n_d)}")
    if min(u_meas.shape) < 2:
        raise ValueError("need at least two receivers and two directions")
    A = (2 * np.pi / cfg.n_d) * u_meas
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    filt = s / (s**2 + alpha**2)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.empty(points.shape[0])
    chunk = 4096
    for start in range(0, points.shape[0], chunk):
        phi = scaled_green(points[start : start + chunk], cfg.receivers, cfg.k)
        coef = filt[:, None] * (U.conj().T @ phi)
        # V has orthonormal columns, so ||g_x|| = ||coef||
        out[start : start + chunk] = np.log(np.linalg.norm(coef, axis=0))
    return out


def lsm_indicator(u_meas, cfg: ScatterConfig, p: LsmParams = LsmParams()) -> np.ndarray:
    """Indicator tabulated on the sampling grid; entry ``[i, j]`` is at ``(x_i, y_j)``."""
    h = lsm_indicator_points(u_meas, cfg, p.points(), p.alpha)
    return h.reshape(p.grid_size, p.grid_size)


def level_set(values: np.ndarray, axis: np.ndarray, level: float):
    """Outer boundary curve of ``{values < level}`` on a square grid.

    ``values[i, j]`` sits at ``(axis[i], axis[j])``. Contours are traced with
    marching squares (linear interpolation on cell edges). The returned point
    cloud is the outermost contour (largest mean distance from the origin);
    interior islands are dropped.

    Returns
    -------
    points : (P, 2) array, empty when the level is not attained
    encloses : bool
        Whether ``points`` is a closed curve around the origin.
    """
    step = axis[1] - axis[0]
    contours = [axis[0] + step * cc for cc in measure.find_contours(values, level)]
    if not contours:
        return np.empty((0, 2)), False
    mean_radius = [np.mean(np.hypot(cc[:, 0], cc[:, 1])) for cc in contours]
    best = int(np.argmax(mean_radius))
    closed = _encloses_origin(contours[best])
    return (contours[best][:-1] if closed else contours[best]), closed


def _encloses_origin(curve: np.ndarray) -> bool:
    if curve.shape[0] < 4 or not np.allclose(curve[0], curve[-1]):
        return False
    # winding number of the closed polyline about the origin
    ang = np.arctan2(curve[:, 1], curve[:, 0])
    turn = np.diff(ang)
    turn = (turn + np.pi) % (2 * np.pi) - np.pi
    return abs(np.sum(turn)) > np.pi


def select_level(level_sets, jump: float = 0.1, closed=None) -> int:
    """Smallest ``j`` with ``|d(S_j, S_{j+1}) - d(S_{j+1}, S_{j+2})| > jump``.

    ``d`` is the Chamfer distance. Levels whose point set is empty are
    skipped. If no triple of levels shows such a jump, the deepest level whose
    set is a closed curve around the origin (per ``closed``) is returned.
    """
    usable = [j for j, s in enumerate(level_sets) if len(s)]
    if not usable:
        raise NoLevelFoundError("every level set is empty")
    dists = {}

    def dist(a, b):
        if (a, b) not in dists:
            dists[(a, b)] = chamfer(level_sets[a], level_sets[b])
        return dists[(a, b)]

    for q in range(len(usable) - 2):
        j0, j1, j2 = usable[q : q + 3]
        if abs(dist(j0, j1) - dist(j1, j2)) > jump:
            return j0
    clean = [j for j in usable if closed is None or closed[j]]
    if not clean:
        raise NoLevelFoundError("no level satisfies the Chamfer jump criterion")
    return clean[-1]


def lsm_reconstruct(u_meas, cfg: ScatterConfig, M: int, p: LsmParams = LsmParams(), return_info=False):
    """Star-shaped fit to the selected level set of the LSM indicator."""
    h = lsm_indicator(u_meas, cfg, p)
    axis = p.axis()
    traced = [level_set(h, axis, C) for C in p.levels]
    level_sets = [pts for pts, _ in traced]
    j_opt = select_level(level_sets, p.jump, [enc for _, enc in traced])
    c = fit_star(level_sets[j_opt], M)
    if not is_valid(c):
        raise NoLevelFoundError("fitted curve from the selected level set is not star-shaped")
    if return_info:
        return c, {"j_opt": j_opt, "level": p.levels[j_opt], "indicator": h,
                   "n_points": [len(s) for s in level_sets]}
    return c
