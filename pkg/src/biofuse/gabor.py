"""Gabor filter bank features.

Kernels use the standard real Gabor form

    g(x, y) = exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) * cos(2 pi x' / lambda + phi)
    x' =  x cos(theta) + y sin(theta)
    y' = -x sin(theta) + y cos(theta)

Magnitudes come from the quadrature pair (phi = 0 and phi = pi/2).  All
convolution is done in the spatial domain with half-sample symmetric
(reflective) borders, so responses keep the input size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError
from .imageio import GrayImage

FEATURE_MODALITIES = ("face", "fingerprint", "fused")

DEFAULT_SCALES = 5
DEFAULT_ORIENTATIONS = 8
DEFAULT_LAMBDA0 = 4.0
DEFAULT_LAMBDA_RATIO = math.sqrt(2.0)
DEFAULT_SIGMA_OVER_LAMBDA = 0.56
DEFAULT_GAMMA = 0.5
DEFAULT_RADIUS_CAP = 15
DEFAULT_DOWNSAMPLE = 64
ZSCORE_FLOOR = 1e-8

# Upper bound on the im2col scratch buffer, in float64 elements (~32 MB).
_IM2COL_BUDGET = 4_000_000


@dataclass(frozen=True)
class GaborParams:
    lam: float
    theta: float
    phi: float = 0.0
    sigma: float = 2.0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        for name in ("lam", "sigma", "gamma"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"Gabor {name} must be positive and finite, got {value}")
        theta = math.fmod(self.theta, math.pi)
        if theta < 0:
            theta += math.pi
        if theta >= math.pi:
            theta = 0.0
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    modality: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.modality not in FEATURE_MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature components must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.modality == other.modality and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"FeatureVector(modality={self.modality!r}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class ResponseMap:
    values: np.ndarray  # (height, width), non-negative

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def gabor_kernel(p: GaborParams, radius: int) -> np.ndarray:
    """Sample the kernel on ``[-radius, radius]^2``.

    Row index is ``y + radius`` and column index is ``x + radius``.
    """
    if radius < 1:
        raise ConfigError(f"kernel radius must be >= 1, got {radius}")
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    c, s = math.cos(p.theta), math.sin(p.theta)
    xr = x * c + y * s
    yr = -x * s + y * c
    envelope = np.exp(-(xr * xr + p.gamma * p.gamma * yr * yr) / (2.0 * p.sigma * p.sigma))
    return envelope * np.cos(2.0 * math.pi * xr / p.lam + p.phi)


@dataclass(frozen=True)
class FilterBank:
    """Scale-major, orientation-minor grid of Gabor filters sharing one radius."""

    filters: tuple[GaborParams, ...]
    kernel_radius: int
    scales: int = 1
    orientations: int = 1
    labels: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kernel_radius < 1:
            raise ConfigError(f"kernel radius must be >= 1, got {self.kernel_radius}")
        if not self.labels:
            object.__setattr__(
                self,
                "labels",
                tuple((i // self.orientations, i % self.orientations) for i in range(len(self.filters))),
            )

    def __len__(self) -> int:
        return len(self.filters)

    @cached_property
    def quadrature_kernels(self) -> np.ndarray:
        """Array ``(2 * n_filters, size, size)``: even kernels, then odd kernels."""
        even = [gabor_kernel(GaborParams(f.lam, f.theta, 0.0, f.sigma, f.gamma), self.kernel_radius) for f in self.filters]
        odd = [
            gabor_kernel(GaborParams(f.lam, f.theta, math.pi / 2, f.sigma, f.gamma), self.kernel_radius)
            for f in self.filters
        ]
        stack = np.stack(even + odd)
        stack.setflags(write=False)
        return stack


def build_bank(
    scales: int = DEFAULT_SCALES,
    orientations: int = DEFAULT_ORIENTATIONS,
    lambda0: float = DEFAULT_LAMBDA0,
    lambda_ratio: float = DEFAULT_LAMBDA_RATIO,
    sigma_over_lambda: float = DEFAULT_SIGMA_OVER_LAMBDA,
    gamma: float = DEFAULT_GAMMA,
    radius_cap: int = DEFAULT_RADIUS_CAP,
    radius: int | None = None,
) -> FilterBank:
    """Build ``scales * orientations`` filters.

    ``lambda_s = lambda0 * lambda_ratio**s``, ``theta_o = o * pi / orientations``
    and ``sigma = sigma_over_lambda * lambda_s``.  Unless ``radius`` is given,
    the shared radius is ``ceil(3 * sigma)`` of the widest filter, capped at
    ``radius_cap``.
    """
    if scales < 1 or orientations < 1:
        raise ConfigError(f"need at least one scale and one orientation, got {scales}x{orientations}")
    if lambda0 <= 0 or lambda_ratio <= 0 or sigma_over_lambda <= 0:
        raise ConfigError("lambda0, lambda_ratio and sigma_over_lambda must be positive")
    filters = []
    for s in range(scales):
        lam = lambda0 * lambda_ratio**s
        for o in range(orientations):
            filters.append(GaborParams(lam, o * math.pi / orientations, 0.0, sigma_over_lambda * lam, gamma))
    if radius is None:
        widest = max(f.sigma for f in filters)
        radius = max(1, min(int(math.ceil(3.0 * widest)), radius_cap))
    return FilterBank(tuple(filters), radius, scales, orientations)


# ---------------------------------------------------------------------------
# Convolution


def _check_kernel(shape: tuple[int, int], height: int, width: int) -> int:
    kh, kw = shape
    if kh != kw or kh % 2 == 0:
        raise ConfigError(f"kernel must be an odd-sided square, got {kh}x{kw}")
    if kh > 2 * min(width, height) + 1:
        raise ConfigError(f"kernel {kh}x{kw} too large for a {width}x{height} image")
    return kh // 2


def convolve_many(image: np.ndarray, kernels: np.ndarray, step: int = 1) -> np.ndarray:
    """Convolve one 2-D array with a stack of kernels ``(m, k, k)`` -> ``(m, H, W)``.

    ``out[y, x] = sum_ij K[j, i] * img[y - j, x - i]`` with symmetric padding.
    With ``step > 1`` only the outputs at rows/columns ``0, step, 2*step, ...``
    are computed, which is what a strided downsample keeps anyway.

    Rows are processed in fixed-size blocks so the im2col buffer stays bounded;
    the block size depends only on the shapes, never on threading.
    """
    image = np.asarray(image, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("image must be a non-empty 2-D array")
    m, kh, kw = kernels.shape
    h, w = image.shape
    r = _check_kernel((kh, kw), h, w)
    padded = np.pad(image, r, mode="symmetric")
    flipped = kernels[:, ::-1, ::-1].reshape(m, kh * kw).T.copy()
    windows = sliding_window_view(padded, (kh, kw))[::step, ::step]
    oh, ow = windows.shape[:2]
    out = np.empty((oh * ow, m))
    block = max(1, _IM2COL_BUDGET // (ow * kh * kw))
    for y0 in range(0, oh, block):
        y1 = min(oh, y0 + block)
        cols = windows[y0:y1].reshape((y1 - y0) * ow, kh * kw)
        out[y0 * ow : y1 * ow] = cols @ flipped
    return out.T.reshape(m, oh, ow)


def convolve(img, kernel: np.ndarray) -> np.ndarray:
    """Same-size convolution of an image (GrayImage or 2-D array) with one kernel."""
    data = img.pixels if isinstance(img, GrayImage) else img
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ConfigError("kernel must be 2-D")
    return convolve_many(data, kernel[None])[0]


def magnitude_response(img: GrayImage, p: GaborParams, radius: int) -> ResponseMap:
    """Quadrature magnitude ``sqrt(even^2 + odd^2)``; ``p.phi`` is ignored."""
    even = gabor_kernel(GaborParams(p.lam, p.theta, 0.0, p.sigma, p.gamma), radius)
    odd = gabor_kernel(GaborParams(p.lam, p.theta, math.pi / 2, p.sigma, p.gamma), radius)
    re, im = convolve_many(img.pixels, np.stack([even, odd]))
    return ResponseMap(np.hypot(re, im))


def stride_for(factor: int) -> int:
    stride = math.isqrt(factor) if factor >= 1 else 0
    if factor < 1 or stride * stride != factor:
        raise ConfigError(f"downsample factor must be a positive perfect square, got {factor}")
    return stride


def downsample(r: ResponseMap, factor: int) -> ResponseMap:
    """Keep every ``sqrt(factor)``-th row and column, starting at 0."""
    stride = stride_for(factor)
    if stride > min(r.width, r.height):
        raise ConfigError(f"stride {stride} exceeds map size {r.width}x{r.height}")
    return ResponseMap(r.values[::stride, ::stride])


def feature_dim(bank: FilterBank, width: int, height: int, factor: int) -> int:
    stride = stride_for(factor)
    return len(bank) * (-(-height // stride)) * (-(-width // stride))


def _zscore_rows(block: np.ndarray) -> np.ndarray:
    mean = block.mean(axis=1, keepdims=True)
    var = block.var(axis=1, keepdims=True)
    out = (block - mean) / np.sqrt(np.maximum(var, ZSCORE_FLOOR))
    # responses flatter than the floor carry no information; rounding noise would
    # otherwise leak through the division
    out[var[:, 0] < ZSCORE_FLOOR] = 0.0
    return out


def bank_responses(img: GrayImage, bank: FilterBank, step: int = 1) -> np.ndarray:
    """Magnitude responses for every filter in bank order, sampled every ``step`` pixels."""
    n = len(bank)
    resp = convolve_many(img.pixels, bank.quadrature_kernels, step=step)
    return np.hypot(resp[:n], resp[n:])


def extract_features(img: GrayImage, bank: FilterBank, factor: int = DEFAULT_DOWNSAMPLE, modality: str = "face") -> FeatureVector:
    """Concatenate each filter's downsampled, z-scored magnitude response."""
    stride = stride_for(factor)
    if stride > min(img.width, img.height):
        raise ConfigError(f"stride {stride} exceeds image size {img.width}x{img.height}")
    mags = bank_responses(img, bank, step=stride)
    flat = mags.reshape(len(bank), -1)
    return FeatureVector(modality, _zscore_rows(flat).ravel())
