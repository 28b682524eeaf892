"""Pipeline configuration.

Configuration is a flat mapping of dotted keys.  Values are resolved with
precedence ``flag > environment > file > default``; the file is a JSON object
of dotted keys, and environment variables use the ``BIOFUSE_`` prefix with
dots and other separators turned into underscores (``BIOFUSE_BANK_SCALES``).
Unknown keys are rejected before anything runs.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .errors import ConfigError

ENV_PREFIX = "BIOFUSE_"


@dataclass(frozen=True)
class Option:
    default: Any
    kind: type
    help: str
    choices: tuple = ()
    check: Callable[[Any], bool] | None = None


def _positive(v) -> bool:
    return v > 0


def _nonneg(v) -> bool:
    return v >= 0


OPTIONS: dict[str, Option] = {
    "dataset.face_root": Option("", str, "face dataset directory (empty: no face data)"),
    "dataset.face_layout": Option("orl", str, "face directory layout", ("orl", "flat")),
    "dataset.fingerprint_root": Option("", str, "fingerprint dataset directory (empty: no fingerprint data)"),
    "dataset.fingerprint_layout": Option("flat", str, "fingerprint directory layout", ("orl", "flat")),
    "image.width": Option(92, int, "working width in pixels", check=_positive),
    "image.height": Option(112, int, "working height in pixels", check=_positive),
    "features.extractor": Option("gabor", str, "feature extractor", ("gabor", "pixels", "w2dpca")),
    "bank.scales": Option(5, int, "Gabor bank scales", check=_positive),
    "bank.orientations": Option(8, int, "Gabor bank orientations", check=_positive),
    "bank.lambda0": Option(4.0, float, "wavelength of the finest scale, pixels", check=_positive),
    "bank.lambda_ratio": Option(math.sqrt(2.0), float, "wavelength ratio between scales", check=_positive),
    "bank.sigma_over_lambda": Option(0.56, float, "Gaussian sigma as a fraction of wavelength", check=_positive),
    "bank.gamma": Option(0.5, float, "spatial aspect ratio", check=_positive),
    "bank.kernel_radius_cap": Option(15, int, "upper bound on the shared kernel radius", check=_positive),
    "gabor.downsample": Option(64, int, "sample reduction factor (perfect square; stride = sqrt)", check=_positive),
    "w2dpca.k": Option(10, int, "Weighted-2DPCA eigenvectors kept (w2dpca extractor)", check=_positive),
    "w2dpca.weights": Option("", str, "comma-separated weights by sample position within a subject (empty: all 1)"),
    "pca.components": Option(0, int, "fixed PCA component count (0: use pca.variance)", check=_nonneg),
    "pca.variance": Option(0.95, float, "retained variance fraction", check=lambda v: 0 < v <= 1),
    "fusion.tanh_c": Option(0.01, float, "tanh estimator scale constant", check=_positive),
    "fusion.sigma_floor": Option(1e-8, float, "floor on whitening standard deviations", check=_positive),
    "split.train_count": Option(0, int, "training samples per subject (0: ceil(n/2))", check=_nonneg),
    "pairing.mode": Option("modulo", str, "chimeric face/fingerprint subject pairing", ("modulo", "shuffle")),
    "pairing.seed": Option(0, int, "seed for shuffled pairing"),
    "match.metric": Option("euclidean", str, "template distance", ("euclidean", "mahalanobis")),
    "match.k": Option(1, int, "neighbours in the identification vote", check=_positive),
    "eval.permute_labels": Option(False, bool, "shuffle enrolled labels (chance-level sanity check)"),
    "eval.seed": Option(0, int, "seed for label permutation"),
    "output.dir": Option("out", str, "directory for evaluation reports"),
    "output.model_dir": Option("models", str, "directory for trained model files"),
    "output.store": Option("templates.bfts", str, "template store file"),
}

# Keys that only say where results go; they cannot change any computed value.
_DIGEST_EXCLUDED_PREFIX = "output."


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def _coerce(key: str, value: Any) -> Any:
    opt = OPTIONS[key]
    try:
        if opt.kind is bool:
            if isinstance(value, bool):
                out = value
            elif isinstance(value, str) and value.strip().lower() in ("1", "true", "yes", "on"):
                out = True
            elif isinstance(value, str) and value.strip().lower() in ("0", "false", "no", "off", ""):
                out = False
            else:
                raise ValueError(value)
        elif opt.kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            out = int(value)
        elif opt.kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            out = float(value)
            if not math.isfinite(out):
                raise ValueError(value)
        else:
            if not isinstance(value, str):
                raise ValueError(value)
            out = value
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {opt.kind.__name__}, got {value!r}") from None
    if opt.choices and out not in opt.choices:
        raise ConfigError(f"{key}: {out!r} is not one of {', '.join(map(str, opt.choices))}")
    if opt.check is not None and not opt.check(out):
        raise ConfigError(f"{key}: value {out!r} out of range")
    return out


class Config(Mapping[str, Any]):
    """Immutable resolved configuration."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        merged = {k: opt.default for k, opt in OPTIONS.items()}
        for key, value in (values or {}).items():
            if key not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
        self._values = merged

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self):
        return iter(sorted(self._values))

    def __len__(self) -> int:
        return len(self._values)

    def replace(self, **changes: Any) -> "Config":
        """Copy with overrides; keyword names use ``__`` for dots (``bank__scales``)."""
        updates = {k.replace("__", "."): v for k, v in changes.items()}
        return Config({**self._values, **updates})

    def with_values(self, values: Mapping[str, Any]) -> "Config":
        return Config({**self._values, **values})

    def canonical(self) -> str:
        body = {k: v for k, v in sorted(self._values.items()) if not k.startswith(_DIGEST_EXCLUDED_PREFIX)}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def to_json(self) -> str:
        return json.dumps(dict(sorted(self._values.items())), indent=2, sort_keys=True) + "\n"

    def __repr__(self) -> str:
        return f"Config(digest={self.digest()[:12]})"


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object of dotted keys")
    unknown = sorted(k for k in doc if k not in OPTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {', '.join(unknown)}")
    return doc


def env_overrides(environ: Mapping[str, str]) -> dict[str, str]:
    known = {env_name(k): k for k in OPTIONS}
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        if name not in known:
            raise ConfigError(f"unknown config environment variable {name}")
        out[known[name]] = value
    return out


def load_config(
    path=None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    values: dict[str, Any] = {}
    if path:
        values.update(read_config_file(path))
    values.update(env_overrides(os.environ if environ is None else environ))
    values.update(overrides or {})
    return Config(values)
