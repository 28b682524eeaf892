"""Feature-level fusion of face and fingerprint vectors.

Both reduced vectors are whitened with per-component training statistics
(the Mahalanobis transform for the diagonal covariance of PCA coordinates),
squashed into (0, 1) with the tanh estimator, and averaged component-wise.
The fused vector has the same dimension as each input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError, DimensionError, InsufficientDataError
from .gabor import FeatureVector

SIGMA_FLOOR = 1e-8
DEFAULT_TANH_C = 0.01

WS_MAGIC = b"BFWS"
WS_VERSION = 1
_WS_HEADER = struct.Struct("<4sIIQd")

# tanh saturates to exactly +-1 in float64 for |x| > ~19; keep outputs strictly inside (0, 1).
_OPEN_LO = np.nextafter(0.0, 1.0)
_OPEN_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class WhiteningStats:
    modality: str
    mu: np.ndarray
    sigma: np.ndarray
    floor: float = SIGMA_FLOOR

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.maximum(np.asarray(self.sigma, dtype=np.float64).reshape(-1), self.floor)
        if mu.shape != sigma.shape:
            raise DimensionError(f"mu has {mu.size} components but sigma has {sigma.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return (x - self.mu) / self.sigma

    def to_bytes(self) -> bytes:
        tag = self.modality.encode("utf-8")
        header = _WS_HEADER.pack(WS_MAGIC, WS_VERSION, len(tag), self.dim, self.floor)
        return header + tag + np.concatenate([self.mu, self.sigma]).astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, path=None) -> "WhiteningStats":
        if len(data) < _WS_HEADER.size:
            raise DecodeError("truncated whitening header", len(data), path)
        magic, version, tag_len, dim, floor = _WS_HEADER.unpack_from(data)
        if magic != WS_MAGIC:
            raise DecodeError(f"bad magic {magic!r}, expected {WS_MAGIC!r}", 0, path)
        if version != WS_VERSION:
            raise DecodeError(f"unsupported whitening version {version}", 4, path)
        start = _WS_HEADER.size + tag_len
        need = start + 16 * dim
        if len(data) < need:
            raise DecodeError(f"truncated whitening body: need {need} bytes", len(data), path)
        modality = data[_WS_HEADER.size : start].decode("utf-8")
        flat = np.frombuffer(data, dtype="<f8", count=2 * dim, offset=start).astype(np.float64)
        return cls(modality, flat[:dim].copy(), flat[dim:].copy(), floor)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WhiteningStats":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), path)


def fit_whitening(samples, floor: float = SIGMA_FLOOR, modality: str | None = None) -> WhiteningStats:
    """Per-component mean and standard deviation (divisor n - 1), sigma floored.

    ``samples`` is a sequence of FeatureVectors of one modality, or an
    ``(n, k)`` array together with an explicit ``modality``.
    """
    if isinstance(samples, np.ndarray):
        if modality is None:
            raise ValueError("modality is required when fitting from an array")
        x = np.asarray(samples, dtype=np.float64)
    else:
        samples = list(samples)
        mods = {s.modality for s in samples}
        if len(mods) > 1:
            raise DimensionError(f"mixed modalities {sorted(mods)}")
        dims = {s.dim for s in samples}
        if len(dims) > 1:
            raise DimensionError(f"mixed dimensions {sorted(dims)}")
        modality = modality or (mods.pop() if mods else "face")
        x = np.vstack([s.values for s in samples]) if samples else np.empty((0, 0))
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"whitening needs at least 2 samples, got {x.shape[0] if x.ndim == 2 else 0}")
    return WhiteningStats(modality, x.mean(axis=0), x.std(axis=0, ddof=1), floor)


def whiten(v: FeatureVector, stats: WhiteningStats) -> FeatureVector:
    return FeatureVector(v.modality, stats.apply(v.values))


def tanh_squash(x: np.ndarray, c: float = DEFAULT_TANH_C) -> np.ndarray:
    out = 0.5 * (np.tanh(c * np.asarray(x, dtype=np.float64)) + 1.0)
    return np.clip(out, _OPEN_LO, _OPEN_HI)


def tanh_normalize(v: FeatureVector, c: float = DEFAULT_TANH_C) -> FeatureVector:
    """Map each component to ``(tanh(c * v_i) + 1) / 2``, strictly inside (0, 1)."""
    return FeatureVector(v.modality, tanh_squash(v.values, c))


def fuse(face: FeatureVector, fp: FeatureVector) -> FeatureVector:
    """Average sum rule over two normalised vectors of equal dimension."""
    if face.dim != fp.dim:
        raise DimensionError(f"cannot fuse vectors of dimension {face.dim} and {fp.dim}")
    return FeatureVector("fused", 0.5 * (face.values + fp.values))


def mahalanobis_distance(v: FeatureVector, stats: WhiteningStats) -> float:
    """Distance of ``v`` from the training mean under the diagonal covariance."""
    return float(np.linalg.norm(stats.apply(v.values)))
