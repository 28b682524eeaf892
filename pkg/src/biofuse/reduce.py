"""Dimensionality reduction: PCA and weighted 2-D PCA."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .eigen import fix_signs, jacobi_eigh
from .errors import DecodeError, DimensionError, InsufficientDataError
from .gabor import FeatureVector

DEFAULT_VARIANCE = 0.95

PCA_MAGIC = b"BFPC"
PCA_VERSION = 1
_PCA_HEADER = struct.Struct("<4sIQQd")

# Eigenvalues below this fraction of the largest are treated as zero.
_RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (d, k), orthonormal columns
    eigenvalues: np.ndarray  # (k,), descending
    total_variance: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def explained_fraction(self) -> float:
        if self.total_variance <= 0:
            return 0.0
        return float(self.eigenvalues.sum() / self.total_variance)

    def truncate(self, k: int) -> "PcaModel":
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate a {self.k}-component model to {k}")
        return PcaModel(self.mean, self.basis[:, :k].copy(), self.eigenvalues[:k].copy(), self.total_variance)

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Project row vectors ``(n, d)`` (or one ``(d,)`` vector)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return (x - self.mean) @ self.basis

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(coeffs) @ self.basis.T

    def to_bytes(self) -> bytes:
        header = _PCA_HEADER.pack(PCA_MAGIC, PCA_VERSION, self.dim, self.k, float(self.total_variance))
        body = np.concatenate([self.mean, self.basis.ravel(), self.eigenvalues]).astype("<f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes, path=None) -> "PcaModel":
        if len(data) < _PCA_HEADER.size:
            raise DecodeError("truncated PCA model header", len(data), path)
        magic, version, d, k, total = _PCA_HEADER.unpack_from(data)
        if magic != PCA_MAGIC:
            raise DecodeError(f"bad magic {magic!r}, expected {PCA_MAGIC!r}", 0, path)
        if version != PCA_VERSION:
            raise DecodeError(f"unsupported PCA model version {version}", 4, path)
        count = d + d * k + k
        need = _PCA_HEADER.size + 8 * count
        if len(data) < need:
            raise DecodeError(f"truncated PCA model body: need {need} bytes", len(data), path)
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=_PCA_HEADER.size).astype(np.float64)
        return cls(flat[:d].copy(), flat[d : d + d * k].reshape(d, k).copy(), flat[d + d * k :].copy(), total)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PcaModel":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), path)


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionError("sample matrix must be 2-D")
        return x
    rows = [s.values if isinstance(s, FeatureVector) else np.asarray(s, dtype=np.float64) for s in samples]
    dims = {r.shape[0] for r in rows}
    if len(dims) > 1:
        raise DimensionError(f"samples have differing dimensions {sorted(dims)}")
    return np.vstack(rows) if rows else np.empty((0, 0))


def fit_pca(samples, k: int | None = None, variance: float | None = None, method: str = "auto") -> PcaModel:
    """Fit PCA on ``n`` samples of dimension ``d``.

    Eigenpairs of the sample covariance (divisor ``n - 1``) come from the
    ``n x n`` Gram matrix when ``n < d`` (snapshot method) and from the
    ``d x d`` covariance otherwise; ``method`` may force ``"gram"`` or
    ``"covariance"``.  Give either a component count ``k`` or a retained
    ``variance`` fraction in (0, 1]; the default keeps 95% of the variance.

    Raises:
        InsufficientDataError: fewer than two samples, or all samples identical.
        ValueError: ``k`` exceeds the covariance rank, or ``variance`` out of range.
    """
    x = _as_matrix(samples)
    n, d = x.shape
    if n < 2:
        raise InsufficientDataError(f"PCA needs at least 2 samples, got {n}")
    if k is not None and variance is not None:
        raise ValueError("give k or variance, not both")
    if k is None and variance is None:
        variance = DEFAULT_VARIANCE
    if variance is not None and not 0.0 < variance <= 1.0:
        raise ValueError(f"variance fraction must be in (0, 1], got {variance}")

    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.einsum("ij,ij->", xc, xc) / (n - 1))

    if method == "auto":
        method = "gram" if n < d else "covariance"
    if method == "gram":
        evals, u = jacobi_eigh(xc @ xc.T / (n - 1))
    elif method == "covariance":
        evals, vecs = jacobi_eigh(xc.T @ xc / (n - 1))
    else:
        raise ValueError(f"unknown PCA method {method!r}")

    evals = np.where(evals < 0, 0.0, evals)
    top = evals[0] if evals.size else 0.0
    rank = int(np.count_nonzero(evals > _RANK_RTOL * top)) if top > 0 else 0
    rank = min(rank, d, n - 1)
    if rank == 0:
        raise InsufficientDataError("all samples are identical; covariance has rank 0")

    if k is None:
        cum = np.cumsum(evals[:rank]) / total
        k = int(np.searchsorted(cum, variance - 1e-12) + 1)
        k = min(k, rank)
    elif not 1 <= k <= rank:
        raise ValueError(f"requested {k} components but the covariance rank is {rank}")

    if method == "gram":
        basis = xc.T @ u[:, :k]
        basis /= np.linalg.norm(basis, axis=0)
        basis = fix_signs(basis)
    else:
        basis = vecs[:, :k].copy()
    return PcaModel(mean, basis, evals[:k].copy(), total)


def project(model: PcaModel, v: FeatureVector) -> FeatureVector:
    if v.dim != model.dim:
        raise DimensionError(f"vector has dimension {v.dim}, model expects {model.dim}")
    return FeatureVector(v.modality, model.transform(v.values))


# ---------------------------------------------------------------------------
# Weighted 2-D PCA


@dataclass(frozen=True, eq=False)
class W2dpcaModel:
    mean_image: np.ndarray  # (H, W)
    basis: np.ndarray  # (W, k)
    eigenvalues: np.ndarray  # (k,)
    scatter: np.ndarray  # (W, W) weighted image scatter matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean_image.shape

    @property
    def k(self) -> int:
        return self.basis.shape[1]


def weighted_mean_image(images: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.tensordot(weights, images, axes=1) / weights.sum()


def weighted_scatter(images: np.ndarray, weights: np.ndarray, mean_image: np.ndarray) -> np.ndarray:
    """``sum_i w_i (A_i - mean)^T (A_i - mean) / sum_i w_i``."""
    centered = images - mean_image
    g = np.einsum("i,ihw,ihv->wv", weights, centered, centered) / weights.sum()
    return 0.5 * (g + g.T)


def fit_w2dpca(images: Sequence[np.ndarray], weights: Sequence[float] | None = None, k: int = 1) -> W2dpcaModel:
    """Weighted 2DPCA: weighted mean image, weighted scatter ``G``, top-``k`` eigenvectors of ``G``."""
    stack = np.asarray([np.asarray(im, dtype=np.float64) for im in images])
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise InsufficientDataError("need at least one 2-D image of a common size")
    n, h, w = stack.shape
    wts = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if wts.shape != (n,):
        raise DimensionError(f"expected {n} weights, got {wts.shape[0] if wts.ndim else 'scalar'}")
    if np.any(wts < 0):
        raise ValueError("weights must be non-negative")
    if wts.sum() == 0:
        raise ValueError("weights sum to zero")
    if not 1 <= k <= w:
        raise ValueError(f"k must be in [1, {w}], got {k}")
    mean = weighted_mean_image(stack, wts)
    g = weighted_scatter(stack, wts, mean)
    evals, vecs = jacobi_eigh(g)
    return W2dpcaModel(mean, vecs[:, :k].copy(), evals[:k].copy(), g)


def project_w2dpca(model: W2dpcaModel, img: np.ndarray, modality: str = "face") -> FeatureVector:
    """Feature matrix ``(img - mean) @ basis`` flattened row-major (dim ``H * k``)."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != model.shape:
        raise DimensionError(f"image shape {img.shape} does not match model {model.shape}")
    return FeatureVector(modality, ((img - model.mean_image) @ model.basis).ravel())
