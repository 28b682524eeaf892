from pathlib import Path

import numpy as np
import pytest

from biofuse.config import Config
from biofuse.imageio import GrayImage, resample, write_pgm


def smooth_pattern(rng: np.random.Generator, width: int, height: int, cells: int = 6) -> np.ndarray:
    """Random low-frequency pattern in [20, 220], built by bilinear upsampling of a coarse grid."""
    coarse = GrayImage(rng.integers(0, 256, size=(cells, cells)), 256)
    return resample(coarse, width, height).pixels.astype(np.float64) * (200 / 255) + 20


def write_orl_dataset(root: Path, subjects: int, samples: int, width: int, height: int,
                      seed: int = 0, noise: float = 12.0, prefix: str = "s") -> Path:
    """ORL-style tree root/<prefix><i>/<j>.pgm of noisy, jittered per-subject patterns."""
    rng = np.random.default_rng(seed)
    for s in range(1, subjects + 1):
        base = smooth_pattern(rng, width, height)
        d = root / f"{prefix}{s}"
        d.mkdir(parents=True, exist_ok=True)
        for j in range(1, samples + 1):
            dy, dx = rng.integers(-1, 2, size=2)
            img = np.roll(base, (dy, dx), axis=(0, 1)) + rng.normal(scale=noise, size=base.shape)
            write_pgm(d / f"{j}.pgm", GrayImage(np.clip(np.round(img), 0, 255).astype(np.int32), 256))
    return root


def write_flat_dataset(root: Path, subjects: int, samples: int, width: int, height: int, seed: int = 0) -> Path:
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for s in range(1, subjects + 1):
        base = smooth_pattern(rng, width, height, cells=10)
        for j in range(1, samples + 1):
            img = base + rng.normal(scale=10.0, size=base.shape)
            write_pgm(root / f"f{s}_{j}.pgm", GrayImage(np.clip(np.round(img), 0, 255).astype(np.int32), 256))
    return root


SMALL = {
    "image.width": 32,
    "image.height": 32,
    "bank.scales": 2,
    "bank.orientations": 4,
    "bank.kernel_radius_cap": 7,
    "gabor.downsample": 16,
}


@pytest.fixture
def small_config() -> Config:
    return Config(SMALL)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
