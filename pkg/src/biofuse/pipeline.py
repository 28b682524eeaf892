"""Shared pipeline plumbing: preprocessing, feature extraction, splits and model bundles."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config
from .enhance import equalize
from .errors import ConfigError, DecodeError, InsufficientDataError
from .fuse import WhiteningStats, fit_whitening, tanh_squash
from .gabor import FeatureVector, FilterBank, build_bank, extract_features, stride_for
from .imageio import DatasetManifest, GrayImage, load_pgm, resample
from .reduce import PcaModel, W2dpcaModel, fit_pca, fit_w2dpca, project_w2dpca

MODEL_MANIFEST = "manifest.json"


def make_bank(cfg: Config) -> FilterBank:
    return build_bank(
        cfg["bank.scales"],
        cfg["bank.orientations"],
        cfg["bank.lambda0"],
        cfg["bank.lambda_ratio"],
        cfg["bank.sigma_over_lambda"],
        cfg["bank.gamma"],
        cfg["bank.kernel_radius_cap"],
    )


def preprocess(img: GrayImage, cfg: Config) -> GrayImage:
    """Bring an image to the working resolution and equalise it."""
    return equalize(resample(img, cfg["image.width"], cfg["image.height"]))


def parallel_map(fn, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; the result never depends on ``threads``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _parse_weights(text: str) -> list[float]:
    if not text.strip():
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"w2dpca.weights: cannot parse {text!r}") from None


class FeatureExtractor:
    """Image -> raw feature vector, per the configured extractor.

    ``gabor`` (the default) and ``pixels`` are stateless.  ``w2dpca`` must be
    fitted on training images first.
    """

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.kind = cfg["features.extractor"]
        self.bank = make_bank(cfg) if self.kind == "gabor" else None
        self.factor = cfg["gabor.downsample"]
        stride_for(self.factor)
        self.w2d: W2dpcaModel | None = None

    def fit(self, images: Sequence[GrayImage], positions: Sequence[int] = ()) -> "FeatureExtractor":
        if self.kind != "w2dpca":
            return self
        weights = _parse_weights(self.cfg["w2dpca.weights"])
        w = None
        if weights:
            w = [weights[p] if p < len(weights) else 1.0 for p in positions]
        k = min(self.cfg["w2dpca.k"], images[0].width)
        self.w2d = fit_w2dpca([im.pixels for im in images], w, k)
        return self

    def __call__(self, img: GrayImage, modality: str) -> FeatureVector:
        if self.kind == "gabor":
            return extract_features(img, self.bank, self.factor, modality)
        if self.kind == "pixels":
            return FeatureVector(modality, img.pixels.astype(np.float64).ravel())
        if self.w2d is None:
            raise ConfigError("w2dpca extractor used before fitting")
        return project_w2dpca(self.w2d, img.pixels, modality)

    def matrix(self, images: Sequence[GrayImage], modality: str, threads: int = 1) -> np.ndarray:
        rows = parallel_map(lambda im: self(im, modality).values, images, threads)
        return np.vstack(rows)


def load_images(paths: Sequence[Path], cfg: Config, threads: int = 1) -> list[GrayImage]:
    return parallel_map(lambda p: preprocess(load_pgm(p), cfg), list(paths), threads)


# ---------------------------------------------------------------------------
# Splits


@dataclass
class Split:
    """Per-subject train/test partition of one manifest."""

    modality: str
    train: list[tuple[str, list[Path]]]
    test: list[tuple[str, list[Path]]]
    excluded: list[str]

    @property
    def subjects(self) -> list[str]:
        return [sid for sid, _ in self.train]

    def flat(self, part: str) -> tuple[list[Path], list[str], list[int]]:
        """Paths, subject labels and within-subject positions of one part."""
        paths, labels, positions = [], [], []
        for (sid, tr), (_, te) in zip(self.train, self.test):
            items, base = (tr, 0) if part == "train" else (te, len(tr))
            for j, p in enumerate(items):
                paths.append(p)
                labels.append(sid)
                positions.append(base + j)
        return paths, labels, positions


def split_manifest(manifest: DatasetManifest, train_count: int = 0) -> Split:
    """First ``train_count`` samples of each subject train, the rest test.

    ``train_count == 0`` means ``ceil(n / 2)`` per subject.  Subjects that
    would be left without a test sample are excluded.
    """
    train, test, excluded = [], [], []
    for sid, samples in manifest.subjects:
        n = len(samples)
        t = train_count if train_count > 0 else math.ceil(n / 2)
        if n < t + 1 or t < 1:
            excluded.append(sid)
            continue
        train.append((sid, list(samples[:t])))
        test.append((sid, list(samples[t:])))
    return Split(manifest.modality, train, test, excluded)


def training_split(manifest: DatasetManifest, train_count: int = 0) -> list[tuple[str, list[Path]]]:
    """Training portion only; used by ``train``, which needs no test samples.

    Raises:
        InsufficientDataError: an explicit ``train_count`` exceeds some subject's sample count.
    """
    short = [sid for sid, samples in manifest.subjects if train_count > 0 and len(samples) < train_count]
    if short:
        raise InsufficientDataError(
            f"split.train_count={train_count} exceeds the samples of subjects: {', '.join(short)}"
        )
    out = []
    for sid, samples in manifest.subjects:
        t = train_count if train_count > 0 else math.ceil(len(samples) / 2)
        out.append((sid, list(samples[:t])))
    return out


# ---------------------------------------------------------------------------
# Models


def pca_target(cfg: Config) -> dict:
    if cfg["pca.components"] > 0:
        return {"k": cfg["pca.components"]}
    return {"variance": cfg["pca.variance"]}


def fit_reducer(x: np.ndarray, cfg: Config) -> PcaModel:
    target = pca_target(cfg)
    if "k" in target:
        # a fixed count above the available rank is clamped rather than fatal
        try:
            return fit_pca(x, k=target["k"])
        except ValueError as exc:
            if isinstance(exc, InsufficientDataError):
                raise
            return fit_pca(x, variance=1.0)
    return fit_pca(x, variance=target["variance"])


@dataclass(frozen=True)
class ModalityModel:
    pca: PcaModel
    stats: WhiteningStats


@dataclass(frozen=True)
class ModelBundle:
    """Fitted PCA + whitening per modality, all reduced to one dimension ``k``."""

    models: dict
    tanh_c: float

    @property
    def k(self) -> int:
        return next(iter(self.models.values())).pca.k

    @property
    def modalities(self) -> list[str]:
        return sorted(self.models)

    def reduce(self, v: FeatureVector) -> FeatureVector:
        return FeatureVector(v.modality, self.models[v.modality].pca.transform(v.values))

    def normalized(self, v: FeatureVector) -> np.ndarray:
        """Reduced, whitened and tanh-squashed components of a raw feature vector."""
        m = self.models[v.modality]
        return tanh_squash(m.stats.apply(m.pca.transform(v.values)), self.tanh_c)

    def save(self, directory, cfg: Config) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for modality in self.modalities:
            m = self.models[modality]
            for name, blob in ((f"{modality}.bfpc", m.pca.to_bytes()), (f"{modality}.bfws", m.stats.to_bytes())):
                (directory / name).write_bytes(blob)
                files[name] = hashlib.sha256(blob).hexdigest()
        manifest = {
            "config_digest": cfg.digest(),
            "files": files,
            "k": self.k,
            "modalities": self.modalities,
            "tanh_c": self.tanh_c,
        }
        (directory / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        manifest_path = directory / MODEL_MANIFEST
        manifest = json.loads(manifest_path.read_text())
        for name, digest in manifest["files"].items():
            blob = (directory / name).read_bytes()
            if hashlib.sha256(blob).hexdigest() != digest:
                raise DecodeError("model file does not match its manifest digest", None, directory / name)
        models = {
            modality: ModalityModel(
                PcaModel.load(directory / f"{modality}.bfpc"), WhiteningStats.load(directory / f"{modality}.bfws")
            )
            for modality in manifest["modalities"]
        }
        return cls(models, manifest["tanh_c"])


def fit_bundle(train: dict[str, np.ndarray], cfg: Config) -> ModelBundle:
    """Fit PCA per modality, reduce all to the smallest selected ``k``, fit whitening."""
    if not train:
        raise InsufficientDataError("no training data")
    pcas = {modality: fit_reducer(x, cfg) for modality, x in train.items()}
    k = min(p.k for p in pcas.values())
    models = {}
    for modality, pca in pcas.items():
        pca = pca.truncate(k)
        stats = fit_whitening(pca.transform(train[modality]), cfg["fusion.sigma_floor"], modality=modality)
        models[modality] = ModalityModel(pca, stats)
    return ModelBundle(models, cfg["fusion.tanh_c"])
