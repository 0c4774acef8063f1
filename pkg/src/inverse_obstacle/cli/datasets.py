"""Random shapes, measurement noise and the binary dataset format.

Dataset files are little-endian: the 5-byte magic ``ISDS1``, u32 format
version, f64 wavenumber, u32 ``M``, ``N_t``, ``N_d`` and sample count, u8
aperture (0 full, 1 half), f64 receiver radius. Each sample follows as
``2M+1`` f64 coefficients and ``N_t * N_d`` complex values stored as (re, im)
f64 pairs, receiver index fastest.
"""

import logging
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..forward import RECEIVER_RADIUS, ScatterConfig, solve_forward
from ..geometry import StarCoeffs, is_valid

logger = logging.getLogger(__name__)

MAGIC = b"ISDS1"
VERSION = 1
_HEADER = struct.Struct("<Id4IBd")
_APERTURES = ("full", "half")
MAX_REJECTIONS = 10_000


def derive_rng(master_seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for one purpose (and optional case index).

    The stream is seeded by ``SeedSequence([master_seed, crc32(purpose),
    *index])``, so e.g. the noise of case 7 does not depend on how many shapes
    were drawn before it.
    """
    key = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), key, *map(int, index)]))


def sample_coeffs(M: int, rng: np.random.Generator) -> StarCoeffs:
    """Draw ``c_0 ~ U[1, 1.2]`` and each mode pair as ``r (cos th, sin th)``, ``r ~ U[0, 0.1]``.

    Draws are repeated until the radius is positive.
    """
    if M < 0:
        raise ValueError("M must be non-negative")
    for _ in range(MAX_REJECTIONS):
        c0 = rng.uniform(1.0, 1.2)
        r = rng.uniform(0.0, 0.1, size=M)
        theta = rng.uniform(0.0, 2 * np.pi, size=M)
        c = np.concatenate([[c0], r * np.cos(theta), r * np.sin(theta)])
        if is_valid(c):
            return StarCoeffs(c)
    raise RuntimeError(f"no valid shape after {MAX_REJECTIONS} draws")


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise level must be non-negative")
        if self.sigma >= 1:
            warnings.warn(f"noise level {self.sigma} is not small", stacklevel=2)


def add_noise(data, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Multiply each entry by ``1 + xi exp(i chi)``, ``xi ~ U[0, 2 sigma]``, ``chi ~ U[0, 2 pi]``."""
    data = np.asarray(data, dtype=complex)
    if sigma < 0:
        raise ValueError("noise level must be non-negative")
    xi = rng.uniform(0.0, 2 * sigma, size=data.shape)
    chi = rng.uniform(0.0, 2 * np.pi, size=data.shape)
    return data * (1 + xi * np.exp(1j * chi))


class DatasetFormatError(ValueError):
    """The file is not a valid dataset file."""


@dataclass
class Dataset:
    k: float
    M: int
    n_t: int
    n_d: int
    aperture: str
    receiver_radius: float
    coeffs: np.ndarray  # (count, 2M+1)
    data: np.ndarray  # (count, N_t, N_d) complex

    def __post_init__(self):
        if self.aperture not in _APERTURES:
            raise ValueError(f"aperture must be one of {_APERTURES}")
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, 2 * self.M + 1)
        self.data = np.asarray(self.data, dtype=complex).reshape(-1, self.n_t, self.n_d)
        if self.coeffs.shape[0] != self.data.shape[0]:
            raise ValueError("coefficient and data counts differ")

    def __len__(self):
        return self.coeffs.shape[0]

    @property
    def config(self) -> ScatterConfig:
        return ScatterConfig.make(self.k, self.n_t, self.n_d, self.aperture, self.receiver_radius)

    def to_bytes(self) -> bytes:
        head = MAGIC + _HEADER.pack(VERSION, self.k, self.M, self.n_t, self.n_d, len(self),
                                    _APERTURES.index(self.aperture), self.receiver_radius)
        n = self.n_t * self.n_d
        body = np.empty((len(self), 2 * self.M + 1 + 2 * n), dtype="<f8")
        body[:, : 2 * self.M + 1] = self.coeffs
        flat = self.data.transpose(0, 2, 1).reshape(len(self), n)  # receiver index fastest
        body[:, 2 * self.M + 1 :] = flat.view(np.float64).reshape(len(self), 2 * n)
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Dataset":
        if buf[: len(MAGIC)] != MAGIC:
            raise DatasetFormatError("bad magic")
        try:
            version, k, M, n_t, n_d, count, ap, radius = _HEADER.unpack_from(buf, len(MAGIC))
        except struct.error as exc:
            raise DatasetFormatError("truncated header") from exc
        if version != VERSION:
            raise DatasetFormatError(f"unsupported version {version}")
        if ap >= len(_APERTURES):
            raise DatasetFormatError(f"bad aperture code {ap}")
        start = len(MAGIC) + _HEADER.size
        rec = 2 * M + 1 + 2 * n_t * n_d
        if len(buf) - start != 8 * rec * count:
            raise DatasetFormatError(f"payload has {len(buf) - start} bytes, header implies {8 * rec * count}")
        body = np.frombuffer(buf, dtype="<f8", offset=start).reshape(count, rec)
        coeffs = body[:, : 2 * M + 1].astype(float)
        pairs = np.ascontiguousarray(body[:, 2 * M + 1 :], dtype=float)
        data = pairs.view(complex).reshape(count, n_d, n_t).transpose(0, 2, 1)
        return cls(k, M, n_t, n_d, _APERTURES[ap], radius, coeffs, np.ascontiguousarray(data))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())


def generate_dataset(k: float, M: int, count: int, cfg: ScatterConfig, seed: int, path=None) -> Dataset:
    """Sample ``count`` shapes and their synthetic measurements (written to ``path`` if given)."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if cfg.k != k:
        raise ValueError("wavenumber disagrees with the scattering configuration")
    rng = derive_rng(seed, "shapes")
    coeffs = np.empty((count, 2 * M + 1))
    data = np.empty((count, cfg.n_t, cfg.n_d), dtype=complex)
    for i in range(count):
        coeffs[i] = sample_coeffs(M, rng).c
        try:
            data[i] = solve_forward(coeffs[i], cfg)[0]
        except Exception as exc:
            raise RuntimeError(f"forward solve failed for sample {i}") from exc
        if i % 100 == 0:
            logger.debug("generated sample %d/%d", i, count)
    ds = Dataset(k, M, cfg.n_t, cfg.n_d, cfg.aperture, cfg.receiver_radius, coeffs, data)
    if path is not None:
        ds.save(path)
    return ds
