"""Template matching and the recognition / verification evaluation harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config
from .errors import DataError, DecodeError, DimensionError, UnknownSubjectError
from .fuse import fit_whitening, tanh_squash
from .gabor import FeatureVector
from .imageio import DatasetManifest
from .pipeline import FeatureExtractor, fit_reducer, load_images, split_manifest

log = logging.getLogger(__name__)

METRICS = ("euclidean", "mahalanobis")

STORE_MAGIC = b"BFTS"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIQQ")


@dataclass(frozen=True)
class Template:
    subject: str
    vector: FeatureVector


class TemplateStore:
    """Enrolled templates of one modality and dimension.

    With the ``mahalanobis`` metric, distances are scaled per component by
    ``scale`` (the whitening standard deviations); otherwise plain Euclidean.
    """

    def __init__(self, metric: str = "euclidean", scale: np.ndarray | None = None):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        if metric == "mahalanobis" and scale is None:
            raise ValueError("the mahalanobis metric needs per-component scales")
        self.metric = metric
        self.scale = None if scale is None else np.asarray(scale, dtype=np.float64)
        self.templates: list[Template] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def modality(self) -> str | None:
        return self.templates[0].vector.modality if self.templates else None

    @property
    def dim(self) -> int | None:
        if self.templates:
            return self.templates[0].vector.dim
        return None if self.scale is None else self.scale.shape[0]

    @property
    def subjects(self) -> list[str]:
        return [t.subject for t in self.templates]

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.vstack([t.vector.values for t in self.templates])
        return self._matrix

    def check(self, v: FeatureVector) -> None:
        if self.dim is not None and v.dim != self.dim:
            raise DimensionError(f"vector dimension {v.dim} does not match store dimension {self.dim}")
        if self.modality is not None and v.modality != self.modality:
            raise DimensionError(f"vector modality {v.modality!r} does not match store modality {self.modality!r}")

    def enroll(self, subject: str, v: FeatureVector) -> "TemplateStore":
        self.check(v)
        self.templates.append(Template(str(subject), v))
        self._matrix = None
        return self

    def distances(self, probes: np.ndarray) -> np.ndarray:
        """Distances from each probe row (or one probe vector) to every template."""
        probes = np.asarray(probes, dtype=np.float64)
        diff = probes[..., None, :] - self.matrix
        if self.metric == "mahalanobis":
            diff = diff / self.scale
        return np.sqrt(np.einsum("...j,...j->...", diff, diff))

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = json.dumps(
            {"metric": self.metric, "modality": self.modality, "subjects": self.subjects},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        dim = self.dim or 0
        header = _STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, len(meta), dim)
        scale = self.scale if self.scale is not None else np.empty(0)
        body = [np.array([scale.size], dtype="<u8").tobytes(), scale.astype("<f8").tobytes()]
        if self.templates:
            body.append(self.matrix.astype("<f8").tobytes())
        return header + meta + b"".join(body)

    @classmethod
    def from_bytes(cls, data: bytes, path=None) -> "TemplateStore":
        if len(data) < _STORE_HEADER.size:
            raise DecodeError("truncated template store header", len(data), path)
        magic, version, meta_len, dim = _STORE_HEADER.unpack_from(data)
        if magic != STORE_MAGIC:
            raise DecodeError(f"bad magic {magic!r}, expected {STORE_MAGIC!r}", 0, path)
        if version != STORE_VERSION:
            raise DecodeError(f"unsupported template store version {version}", 4, path)
        pos = _STORE_HEADER.size
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n_scale,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        scale = np.frombuffer(data, dtype="<f8", count=n_scale, offset=pos).astype(np.float64) if n_scale else None
        pos += 8 * n_scale
        subjects = meta["subjects"]
        need = pos + 8 * dim * len(subjects)
        if len(data) < need:
            raise DecodeError(f"truncated template store: need {need} bytes", len(data), path)
        store = cls(meta["metric"], scale)
        if subjects:
            mat = np.frombuffer(data, dtype="<f8", count=dim * len(subjects), offset=pos).reshape(len(subjects), dim)
            for sid, row in zip(subjects, mat):
                store.enroll(sid, FeatureVector(meta["modality"], row))
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TemplateStore":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), path)


def enroll(store: TemplateStore, subject: str, v: FeatureVector) -> TemplateStore:
    return store.enroll(subject, v)


def identify(store: TemplateStore, probe: FeatureVector, k: int = 1) -> list[tuple[str, float]]:
    """All templates ranked by ascending distance; ties keep enrollment order.

    For ``k > 1`` the entry for the voted subject (see :func:`vote`) is moved to
    the front, so element 0 is always the decision.
    """
    if not len(store):
        raise DataError("cannot identify against an empty template store")
    if k < 1:
        raise ValueError("k must be >= 1")
    store.check(probe)
    dist = store.distances(probe.values)
    order = np.argsort(dist, kind="stable")
    ranked = [(store.templates[i].subject, float(dist[i])) for i in order]
    if k > 1:
        winner = vote(ranked, k)
        first = next(i for i, (sid, _) in enumerate(ranked) if sid == winner)
        ranked.insert(0, ranked.pop(first))
    return ranked


def vote(ranked: Sequence[tuple[str, float]], k: int) -> str:
    """Majority subject among the ``k`` nearest; ties go to the nearer subject."""
    top = ranked[:k]
    counts = Counter(sid for sid, _ in top)
    best = max(counts.values())
    for sid, _ in top:
        if counts[sid] == best:
            return sid
    raise AssertionError("unreachable")


def verify(store: TemplateStore, claimed: str, probe: FeatureVector, threshold: float) -> tuple[bool, float]:
    """Accept iff the nearest of the claimed subject's templates is within ``threshold``."""
    idx = [i for i, t in enumerate(store.templates) if t.subject == claimed]
    if not idx:
        raise UnknownSubjectError(f"no templates enrolled for subject {claimed!r}")
    store.check(probe)
    score = float(store.distances(probe.values)[idx].min())
    return score <= threshold, score


# ---------------------------------------------------------------------------
# ROC / EER


def roc_curve(genuine: Sequence[float], impostor: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(threshold, FAR, FRR)`` at every distinct score, thresholds ascending.

    A comparison is accepted when its distance is ``<= threshold``.
    """
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    thresholds = np.unique(np.concatenate([genuine, impostor]))
    if thresholds.size == 0:
        return []
    accepted_impostors = np.searchsorted(impostor, thresholds, side="right")
    accepted_genuine = np.searchsorted(genuine, thresholds, side="right")
    far = accepted_impostors / impostor.size if impostor.size else np.zeros(thresholds.size)
    # count rejections directly; 1 - accepted / n is not exact in floating point
    frr = (genuine.size - accepted_genuine) / genuine.size if genuine.size else np.zeros(thresholds.size)
    return [(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr)]


def equal_error_rate(roc: Sequence[tuple[float, float, float]]) -> float | None:
    """Linear interpolation of the FAR = FRR crossing.

    The sweep is preceded by the implicit point FAR = 0, FRR = 1 (nothing
    accepted), so a crossing always exists for a non-empty curve.
    """
    if not roc:
        return None
    far_prev, frr_prev = 0.0, 1.0
    for _, far, frr in roc:
        if far >= frr:
            d_prev = far_prev - frr_prev
            d_cur = far - frr
            alpha = -d_prev / (d_cur - d_prev)
            return far_prev + alpha * (far - far_prev)
        far_prev, frr_prev = far, frr
    raise AssertionError("FRR is 0 at the largest threshold, so the loop always returns")


def verification_scores(store: TemplateStore, probes: np.ndarray, labels: Sequence[str]) -> tuple[list[float], list[float]]:
    """Genuine and impostor scores: per probe, min distance to each enrolled subject."""
    dist = store.distances(probes)
    subjects = store.subjects
    order = list(dict.fromkeys(subjects))
    columns = {sid: [i for i, s in enumerate(subjects) if s == sid] for sid in order}
    genuine, impostor = [], []
    for row, label in zip(dist, labels):
        for sid in order:
            score = float(row[columns[sid]].min())
            (genuine if sid == label else impostor).append(score)
    return genuine, impostor


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    rank1_rate: float | None
    rates: dict
    roc: list
    eer: float | None
    config_digest: str
    excluded: list = field(default_factory=list)
    warnings: int = 0
    dims: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "dims": dict(sorted(self.dims.items())),
            "eer": self.eer,
            "excluded": list(self.excluded),
            "probes": dict(sorted(self.probes.items())),
            "rank1_rate": self.rank1_rate,
            "rates": {m: self.rates.get(m) for m in ("face", "fingerprint", "fused")},
            "roc": [{"far": far, "frr": frr, "threshold": t} for t, far, frr in self.roc],
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            rank1_rate=doc["rank1_rate"],
            rates=dict(doc["rates"]),
            roc=[(p["threshold"], p["far"], p["frr"]) for p in doc["roc"]],
            eer=doc["eer"],
            config_digest=doc["config_digest"],
            excluded=list(doc.get("excluded", [])),
            warnings=int(doc.get("warnings", 0)),
            dims=dict(doc.get("dims", {})),
            probes=dict(doc.get("probes", {})),
        )


def _rank1(store: TemplateStore, probes: np.ndarray, labels: Sequence[str], k: int) -> float:
    dist = store.distances(probes)
    order = np.argsort(dist, axis=1, kind="stable")
    subjects = store.subjects
    hits = 0
    for row, idx, label in zip(dist, order, labels):
        ranked = [(subjects[i], row[i]) for i in idx[:k]]
        hits += vote(ranked, k) == label
    return hits / len(labels)


def _make_store(templates: np.ndarray, labels: Sequence[str], modality: str, metric: str, scale=None) -> TemplateStore:
    store = TemplateStore(metric, scale if metric == "mahalanobis" else None)
    for sid, row in zip(labels, templates):
        store.enroll(sid, FeatureVector(modality, row))
    return store


@dataclass
class _ModalityRun:
    split: object
    train_labels: list
    test_labels: list
    train_proj: np.ndarray
    test_proj: np.ndarray
    k: int


def _run_modality(manifest: DatasetManifest, cfg: Config, threads: int) -> _ModalityRun:
    split = split_manifest(manifest, cfg["split.train_count"])
    if not split.train:
        raise DataError(f"no {manifest.modality} subject has enough samples for the split")
    tr_paths, tr_labels, tr_pos = split.flat("train")
    te_paths, te_labels, _ = split.flat("test")
    tr_imgs = load_images(tr_paths, cfg, threads)
    te_imgs = load_images(te_paths, cfg, threads)
    extractor = FeatureExtractor(cfg).fit(tr_imgs, tr_pos)
    x_tr = extractor.matrix(tr_imgs, manifest.modality, threads)
    x_te = extractor.matrix(te_imgs, manifest.modality, threads)
    pca = fit_reducer(x_tr, cfg)
    return _ModalityRun(split, tr_labels, te_labels, pca.transform(x_tr), pca.transform(x_te), pca.k)


def _permuted(labels: list, cfg: Config, stream: int) -> list:
    if not cfg["eval.permute_labels"]:
        return labels
    rng = np.random.default_rng([cfg["eval.seed"], stream])
    return [labels[i] for i in rng.permutation(len(labels))]


def _pair_subjects(face_subjects: list[str], fp_subjects: list[str], cfg: Config) -> dict[str, str]:
    pool = list(fp_subjects)
    if cfg["pairing.mode"] == "shuffle":
        rng = np.random.default_rng(cfg["pairing.seed"])
        pool = [pool[i] for i in rng.permutation(len(pool))]
    return {sid: pool[i % len(pool)] for i, sid in enumerate(face_subjects)}


def _fused_part(face: _ModalityRun, fp: _ModalityRun, part: str, pairing: dict, k: int, stats, tanh_c: float):
    """Fused vectors and virtual-subject labels for one part of the split."""
    norm = {}
    for name, run in (("face", face), ("fingerprint", fp)):
        proj = (run.train_proj if part == "train" else run.test_proj)[:, :k]
        labels = run.train_labels if part == "train" else run.test_labels
        by_subject: dict[str, list[np.ndarray]] = {}
        for sid, row in zip(labels, tanh_squash(stats[name].apply(proj), tanh_c)):
            by_subject.setdefault(sid, []).append(row)
        norm[name] = by_subject
    vectors, labels = [], []
    for sid, face_rows in norm["face"].items():
        fp_rows = norm["fingerprint"][pairing[sid]]
        for j, f in enumerate(face_rows):
            vectors.append(0.5 * (f + fp_rows[j % len(fp_rows)]))
            labels.append(sid)
    return np.vstack(vectors), labels


def evaluate(
    manifest_face: DatasetManifest | None,
    manifest_fp: DatasetManifest | None,
    config: Config,
    threads: int = 1,
) -> EvalReport:
    """Run the full pipeline on train/test splits and score it.

    Reports rank-1 rates for every available modality and, when both are
    present, for chimeric fused subjects (face subject ``i`` paired with
    fingerprint subject ``i mod F``).  The ROC and EER are computed for the
    fused mode when available, otherwise for the single modality.  PCA and
    whitening statistics are fitted on training samples only.
    """
    cfg = config
    if manifest_face is None and manifest_fp is None:
        raise DataError("evaluation needs at least one dataset")
    metric, k_vote = cfg["match.metric"], cfg["match.k"]
    runs: dict[str, _ModalityRun] = {}
    excluded: list[str] = []
    for modality, manifest in (("face", manifest_face), ("fingerprint", manifest_fp)):
        if manifest is None:
            continue
        run = _run_modality(manifest, cfg, threads)
        runs[modality] = run
        excluded += [f"{modality}:{sid}" for sid in run.split.excluded]
    if excluded:
        log.warning("excluded %d subject(s) with too few samples: %s", len(excluded), ", ".join(excluded))

    rates = {"face": None, "fingerprint": None, "fused": None}
    dims, probes = {}, {}
    primary = None
    for stream, (modality, run) in enumerate(runs.items()):
        scale = None
        if metric == "mahalanobis":
            scale = fit_whitening(run.train_proj, cfg["fusion.sigma_floor"], modality=modality).sigma
        store = _make_store(run.train_proj, _permuted(run.train_labels, cfg, stream), modality, metric, scale)
        rates[modality] = _rank1(store, run.test_proj, run.test_labels, k_vote)
        dims[modality] = run.k
        probes[modality] = len(run.test_labels)
        primary = (store, run.test_proj, run.test_labels)

    if len(runs) == 2:
        face, fp = runs["face"], runs["fingerprint"]
        k = min(face.k, fp.k)
        stats = {
            name: fit_whitening(run.train_proj[:, :k], cfg["fusion.sigma_floor"], modality=name)
            for name, run in runs.items()
        }
        pairing = _pair_subjects(face.split.subjects, fp.split.subjects, cfg)
        tanh_c = cfg["fusion.tanh_c"]
        tr_vecs, tr_labels = _fused_part(face, fp, "train", pairing, k, stats, tanh_c)
        te_vecs, te_labels = _fused_part(face, fp, "test", pairing, k, stats, tanh_c)
        store = _make_store(tr_vecs, _permuted(tr_labels, cfg, 2), "fused", "euclidean")
        rates["fused"] = _rank1(store, te_vecs, te_labels, k_vote)
        dims["fused"] = k
        probes["fused"] = len(te_labels)
        primary = (store, te_vecs, te_labels)

    store, test_vecs, test_labels = primary
    genuine, impostor = verification_scores(store, test_vecs, test_labels)
    roc = roc_curve(genuine, impostor)
    rank1 = rates["fused"] if rates["fused"] is not None else next(r for r in rates.values() if r is not None)
    return EvalReport(
        rank1_rate=rank1,
        rates=rates,
        roc=roc,
        eer=equal_error_rate(roc),
        config_digest=cfg.digest(),
        excluded=excluded,
        warnings=len(excluded),
        dims=dims,
        probes=probes,
    )


# ---------------------------------------------------------------------------
# Report export

_SUMMARY_KEYS = ("config_digest", "rank1_rate", "rate.face", "rate.fingerprint", "rate.fused", "eer",
                 "dim.face", "dim.fingerprint", "dim.fused", "probes.face", "probes.fingerprint",
                 "probes.fused", "excluded", "warnings")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if report.roc:
        writer.writerow(["threshold", "far", "frr"])
        for t, far, frr in report.roc:
            writer.writerow([repr(float(t)), repr(float(far)), repr(float(frr))])
        writer.writerow([])
    writer.writerow(["key", "value"])
    summary = {
        "config_digest": report.config_digest,
        "rank1_rate": report.rank1_rate,
        "eer": report.eer,
        "excluded": ";".join(report.excluded),
        "warnings": report.warnings,
    }
    for m in ("face", "fingerprint", "fused"):
        summary[f"rate.{m}"] = report.rates.get(m)
        summary[f"dim.{m}"] = report.dims.get(m)
        summary[f"probes.{m}"] = report.probes.get(m)
    for key in _SUMMARY_KEYS:
        writer.writerow([key, _fmt(summary[key])])
    return buf.getvalue()


def parse_report_csv(text: str) -> EvalReport:
    rows = list(csv.reader(io.StringIO(text)))
    roc, summary = [], {}
    section = None
    for row in rows:
        if not row:
            section = None
            continue
        if row == ["threshold", "far", "frr"]:
            section = "roc"
            continue
        if row == ["key", "value"]:
            section = "summary"
            continue
        if section == "roc":
            roc.append(tuple(float(v) for v in row))
        elif section == "summary":
            summary[row[0]] = row[1]

    def num(key, kind=float):
        value = summary.get(key, "")
        return None if value == "" else kind(value)

    return EvalReport(
        rank1_rate=num("rank1_rate"),
        rates={m: num(f"rate.{m}") for m in ("face", "fingerprint", "fused")},
        roc=roc,
        eer=num("eer"),
        config_digest=summary["config_digest"],
        excluded=[s for s in summary.get("excluded", "").split(";") if s],
        warnings=num("warnings", int) or 0,
        dims={m: num(f"dim.{m}", int) for m in ("face", "fingerprint", "fused") if num(f"dim.{m}", int) is not None},
        probes={
            m: num(f"probes.{m}", int) for m in ("face", "fingerprint", "fused") if num(f"probes.{m}", int) is not None
        },
    )


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def export_report(report: EvalReport, path, fmt: str | None = None) -> Path:
    """Write ``report`` as CSV or JSON (format inferred from the suffix if not given)."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path


def read_report(path) -> EvalReport:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return EvalReport.from_dict(json.loads(text))
    return parse_report_csv(text)
