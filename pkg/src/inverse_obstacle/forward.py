"""Exterior Dirichlet (sound-soft) Helmholtz scattering by star-shaped obstacles.

Boundary integral operators on a smooth closed curve are discretized with
the Kress/Martensen-Kussmaul Nystrom rule for kernels with a logarithmic
singularity,

    A(t, s) = A1(t, s) ln(4 sin^2((t - s)/2)) + A2(t, s),

which converges spectrally for analytic boundaries. With
``Phi(x, y) = (i/4) H_0^(1)(k|x - y|)`` the operators are

    S   single layer            int Phi(x, y) phi(y) ds(y)
    K   double layer            int dPhi/dnu(y) phi(y) ds(y)
    K'  adjoint double layer    int dPhi/dnu(x) phi(y) ds(y)

Two combined-field equations with coupling ``eta`` are used:

* direct, for the sound-soft problem itself: ``(I/2 + K' - i eta S) psi =
  du_inc/dnu - i eta u_inc`` whose solution is ``psi = du_tot/dnu``;
  then ``u_scat(x) = -S[psi](x)`` off the boundary;
* indirect, for generic Dirichlet data ``g``: ``v = (D - i eta S)[phi]``
  with ``(I/2 + K - i eta S) phi = g``.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la

from . import specfun
from .geometry import DiscretizedCurve, StarCoeffs, discretize, fourier_basis, is_valid, radius
from .geometry import InvalidCurveError  # noqa: F401  (re-exported for callers)

logger = logging.getLogger(__name__)

RECEIVER_RADIUS = 10.0
MIN_NODES = 256
POINTS_PER_WAVELENGTH_FACTOR = 8


class SingularSystemError(np.linalg.LinAlgError):
    """The Nystrom system matrix is numerically singular."""


@dataclass(frozen=True)
class ScatterConfig:
    """Wavenumber, receiver positions and incident directions.

    Attributes
    ----------
    k : float
        Wavenumber.
    receivers : (N_t, 2) array
        Receiver locations.
    directions : (N_d, 2) array
        Unit incident directions.
    aperture : str
        ``"full"`` or ``"half"``; informational, the geometry is carried by
        ``receivers`` and ``directions``.
    """

    k: float
    receivers: np.ndarray
    directions: np.ndarray
    aperture: str = "full"
    receiver_radius: float = RECEIVER_RADIUS

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("wavenumber must be positive")
        rec = np.asarray(self.receivers, dtype=float).reshape(-1, 2)
        dirs = np.asarray(self.directions, dtype=float).reshape(-1, 2)
        if not np.allclose(np.hypot(dirs[:, 0], dirs[:, 1]), 1.0, atol=1e-12):
            raise ValueError("incident directions must be unit vectors")
        if self.aperture not in ("full", "half"):
            raise ValueError(f"unknown aperture {self.aperture!r}")
        object.__setattr__(self, "receivers", rec)
        object.__setattr__(self, "directions", dirs)

    @classmethod
    def make(cls, k, n_t, n_d, aperture="full", receiver_radius=RECEIVER_RADIUS):
        """Receivers on a circle and equispaced incident angles.

        Full aperture uses angles ``2 pi j / N`` for ``j = 0..N-1``; half
        aperture uses ``pi j / N`` for ``j = 1..N``.
        """
        if aperture == "full":
            rec_angles = 2 * np.pi * np.arange(n_t) / n_t
            dir_angles = 2 * np.pi * np.arange(n_d) / n_d
        elif aperture == "half":
            rec_angles = np.pi * np.arange(1, n_t + 1) / n_t
            dir_angles = np.pi * np.arange(1, n_d + 1) / n_d
        else:
            raise ValueError(f"unknown aperture {aperture!r}")
        rec = receiver_radius * np.column_stack([np.cos(rec_angles), np.sin(rec_angles)])
        dirs = np.column_stack([np.cos(dir_angles), np.sin(dir_angles)])
        return cls(float(k), rec, dirs, aperture, float(receiver_radius))

    @property
    def n_t(self) -> int:
        return self.receivers.shape[0]

    @property
    def n_d(self) -> int:
        return self.directions.shape[0]

    @property
    def direction_angles(self) -> np.ndarray:
        return np.arctan2(self.directions[:, 1], self.directions[:, 0])

    def check_far(self, r_max: float, strict: bool = False) -> bool:
        """Check that receivers sit at least five wavelengths outside the obstacle."""
        dist = np.min(np.hypot(self.receivers[:, 0], self.receivers[:, 1])) - r_max
        if dist <= 0:
            raise ValueError("receivers must lie outside the obstacle's bounding circle")
        ok = dist >= 5 * 2 * np.pi / self.k
        if not ok:
            msg = f"receivers are only {dist:.3g} from the obstacle (< 5 wavelengths at k={self.k})"
            if strict:
                raise ValueError(msg)
            logger.debug(msg)
        return ok


@dataclass
class BoundarySolution:
    """Normal derivative of the total field on the boundary, one column per direction."""

    psi: np.ndarray
    curve: DiscretizedCurve
    operators: "NystromOperators" = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.psi.shape[0]


def node_count(c, k: float) -> int:
    r_max = float(np.max(radius(c, 2 * np.pi * np.arange(1024) / 1024)))
    n = 2 * math.ceil(POINTS_PER_WAVELENGTH_FACTOR * k * r_max)
    n = max(MIN_NODES, n)
    return n + (n % 2)


def _log_weights(n: int) -> np.ndarray:
    """Kress weights ``R_{|i-j|}`` for ``int ln(4 sin^2((t-s)/2)) f(s) ds``."""
    N = n // 2
    m = np.arange(1, N)
    d = np.arange(n)
    arg = np.outer(d, m) * np.pi / N
    w = -(2 * np.pi / N) * (np.cos(arg) @ (1.0 / m)) - (np.pi / N**2) * np.cos(d * np.pi)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return w[idx]


class NystromOperators:
    """Nystrom matrices of S, K, K' on one discretized curve.

    Matrices act on density values at the nodes and already include the
    quadrature weights and the parametrization speed, so that
    ``(S @ phi)[i]`` approximates ``S[phi](x(t_i))``.
    """

    def __init__(self, curve: DiscretizedCurve, k: float, eta: float | None = None):
        self.curve = curve
        self.k = float(k)
        self.eta = self.k if eta is None else float(eta)
        n = curve.n
        self.weight = 2 * np.pi / n
        x = curve.points
        diff = x[:, None, :] - x[None, :, :]  # x(t_i) - x(t_j)
        r = np.hypot(diff[..., 0], diff[..., 1])
        diag = np.eye(n, dtype=bool)
        r_safe = np.where(diag, 1.0, r)
        kr = self.k * r_safe
        self._j0 = specfun.bessel_j(0, kr)
        self._j1 = specfun.bessel_j(1, kr)
        self._h0 = specfun.hankel1(0, kr)
        self._h1 = specfun.hankel1(1, kr)
        t = curve.t
        log_term = np.log(np.where(diag, 1.0, 4 * np.sin((t[:, None] - t[None, :]) / 2) ** 2))
        self._diff = diff
        self._r = r_safe
        self._diag = diag
        self._log = log_term
        self._R = _log_weights(n)
        d1, d2 = curve.deriv1, curve.deriv2
        self._kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / curve.speed**2

    def _assemble(self, A1, A2):
        return self._R * A1 + self.weight * A2

    @cached_property
    def S(self) -> np.ndarray:
        k, speed = self.k, self.curve.speed
        full = 0.25j * self._h0 * speed[None, :]
        A1 = -(1 / (4 * np.pi)) * self._j0 * speed[None, :]
        A2 = full - A1 * self._log
        diag_val = (0.25j - np.euler_gamma / (2 * np.pi) - np.log(k * speed / 2) / (2 * np.pi)) * speed
        A2[self._diag] = diag_val
        A1[self._diag] = -speed / (4 * np.pi)
        return self._assemble(A1, A2)

    @cached_property
    def K(self) -> np.ndarray:
        # unnormalized normal n(s) = |x'(s)| nu(s) at the source node
        d1 = self.curve.deriv1
        nrm = np.column_stack([d1[:, 1], -d1[:, 0]])
        proj = np.einsum("ijc,jc->ij", self._diff, nrm) / self._r
        return self._double_layer_like(proj)

    @cached_property
    def Kp(self) -> np.ndarray:
        nu = self.curve.normals
        speed = self.curve.speed
        proj = -np.einsum("ijc,ic->ij", self._diff, nu) / self._r * speed[None, :]
        return self._double_layer_like(proj)

    def _double_layer_like(self, proj):
        k = self.k
        full = 0.25j * k * self._h1 * proj
        A1 = -(k / (4 * np.pi)) * self._j1 * proj
        A2 = full - A1 * self._log
        A1[self._diag] = 0.0
        A2[self._diag] = -self._kappa / (4 * np.pi)
        return self._assemble(A1, A2)

    def _factor(self, A):
        lu, piv = la.lu_factor(A, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if pivots.min() <= 1e-14 * pivots.max():
            raise SingularSystemError("Nystrom system is numerically singular")
        return lu, piv

    @cached_property
    def direct_lu(self):
        n = self.curve.n
        return self._factor(0.5 * np.eye(n) + self.Kp - 1j * self.eta * self.S)

    @cached_property
    def indirect_lu(self):
        n = self.curve.n
        return self._factor(0.5 * np.eye(n) + self.K - 1j * self.eta * self.S)

    def solve_direct(self, rhs):
        return la.lu_solve(self.direct_lu, rhs, check_finite=False)

    def solve_indirect(self, rhs):
        return la.lu_solve(self.indirect_lu, rhs, check_finite=False)

    def _target_geometry(self, targets):
        targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        diff = targets[:, None, :] - self.curve.points[None, :, :]
        r = np.hypot(diff[..., 0], diff[..., 1])
        if np.min(r) <= 0:
            raise ValueError("evaluation target lies on the boundary")
        return diff, r

    def single_layer_eval(self, targets) -> np.ndarray:
        """Matrix mapping densities to ``S[phi](target)`` (trapezoidal rule)."""
        _, r = self._target_geometry(targets)
        return 0.25j * specfun.hankel1(0, self.k * r) * (self.curve.speed * self.weight)[None, :]

    def double_layer_eval(self, targets) -> np.ndarray:
        """Matrix mapping densities to ``D[phi](target)`` (trapezoidal rule)."""
        diff, r = self._target_geometry(targets)
        d1 = self.curve.deriv1
        nrm = np.column_stack([d1[:, 1], -d1[:, 0]])
        proj = np.einsum("ijc,jc->ij", diff, nrm) / r
        return 0.25j * self.k * specfun.hankel1(1, self.k * r) * proj * self.weight


def _check_inputs(c, cfg: ScatterConfig):
    if not is_valid(c):
        raise InvalidCurveError("radius function is not strictly positive")
    r_max = float(np.max(radius(c, 2 * np.pi * np.arange(1024) / 1024)))
    cfg.check_far(r_max)


def incident_field(points, normals, cfg: ScatterConfig):
    """Plane waves and their normal derivatives at boundary points, shape (n, N_d)."""
    phase = points @ cfg.directions.T
    u = np.exp(1j * cfg.k * phase)
    du = 1j * cfg.k * (normals @ cfg.directions.T) * u
    return u, du


def solve_forward(c, cfg: ScatterConfig, n: int | None = None):
    """Scattered field at the receivers for every incident direction.

    Returns
    -------
    data : (N_t, N_d) complex array
        ``data[j, l] = u_scat(x_j; d_l)``.
    solution : BoundarySolution
        ``du_tot/dnu`` at the boundary nodes, reused by :func:`frechet_matrix`.
    """
    _check_inputs(c, cfg)
    if n is None:
        n = node_count(c, cfg.k)
    curve = discretize(c, n)
    ops = NystromOperators(curve, cfg.k)
    u_inc, du_inc = incident_field(curve.points, curve.normals, cfg)
    psi = ops.solve_direct(du_inc - 1j * ops.eta * u_inc)
    data = -ops.single_layer_eval(cfg.receivers) @ psi
    return data, BoundarySolution(psi, curve, ops)


def forward_data(c, cfg: ScatterConfig, n: int | None = None) -> np.ndarray:
    """Only the measurement matrix of :func:`solve_forward`."""
    return solve_forward(c, cfg, n)[0]


def frechet_apply(sol: BoundarySolution, cfg: ScatterConfig, delta_r) -> np.ndarray:
    """Frechet derivative of the forward map along radial perturbations.

    Parameters
    ----------
    sol : BoundarySolution
        From :func:`solve_forward` for the same curve and configuration.
    delta_r : (n,) or (n, P) array
        Perturbation(s) ``delta r(t_j)`` of the radius function at the nodes.

    Returns
    -------
    (N_t, N_d, P) complex array (``P`` axis dropped for 1-D input).
    """
    ops = sol.operators
    if ops is None or ops.k != cfg.k:
        ops = NystromOperators(sol.curve, cfg.k)
    curve = sol.curve
    dr = np.asarray(delta_r, dtype=float)
    squeeze = dr.ndim == 1
    dr = dr.reshape(curve.n, -1)
    nu_dot_er = np.sum(curve.normals * curve.radial, axis=1)
    # boundary data g = -(nu . delta_r e_r) du_tot/dnu for each (direction, perturbation)
    g = -(nu_dot_er[:, None, None] * sol.psi[:, :, None]) * dr[:, None, :]
    n_d, n_p = sol.psi.shape[1], dr.shape[1]
    phi = ops.solve_indirect(g.reshape(curve.n, n_d * n_p))
    E = ops.double_layer_eval(cfg.receivers) - 1j * ops.eta * ops.single_layer_eval(cfg.receivers)
    v = (E @ phi).reshape(cfg.n_t, n_d, n_p)
    return v[..., 0] if squeeze else v


def frechet_matrix(c, cfg: ScatterConfig, psi: BoundarySolution) -> np.ndarray:
    """Jacobian of the stacked measurements w.r.t. the Fourier coefficients.

    Column ``l`` is the derivative along ``e_l`` flattened with the receiver
    index fastest, matching ``data.ravel(order="F")``.
    """
    M = (len(np.asarray(c)) - 1) // 2
    basis = fourier_basis(psi.curve.t, M)
    v = frechet_apply(psi, cfg, basis)
    return v.reshape(cfg.n_t * cfg.n_d, 2 * M + 1, order="F")


def mie_circle(radius: float, k: float, cfg: ScatterConfig) -> np.ndarray:
    """Fourier-Bessel series for plane-wave scattering by a sound-soft disk.

    ``u_scat(x) = -sum_n i^n J_n(ka)/H_n(ka) H_n(k|x|) e^{i n (theta_x - theta_d)}``
    truncated at ``|n| <= ceil(k a) + 40``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    n_trunc = math.ceil(k * radius) + 40
    if n_trunc > specfun.N_MAX:
        raise ValueError(f"series needs {n_trunc} terms, more than the supported {specfun.N_MAX}")
    orders = np.arange(n_trunc + 1)
    ka = k * radius
    coef = (1j**orders) * specfun.bessel_j(orders, ka) / specfun.hankel1(orders, ka)
    coef[1:] *= 2  # orders n and -n combine into 2 cos(n theta)
    rho = np.hypot(cfg.receivers[:, 0], cfg.receivers[:, 1])
    theta = np.arctan2(cfg.receivers[:, 1], cfg.receivers[:, 0])
    H = specfun.hankel1(orders[None, :], k * rho[:, None])  # (N_t, n)
    rel = theta[:, None] - cfg.direction_angles[None, :]  # (N_t, N_d)
    cos_terms = np.cos(orders[None, None, :] * rel[:, :, None])
    return -np.einsum("n,jn,jln->jl", coef, H, cos_terms)
