"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 I/O error.
Failures print one JSON line to stderr, e.g.
``{"error": "DecodeError", "exit_code": 3, "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import OPTIONS, Config, env_name, load_config
from .enhance import equalize
from .errors import BiofuseError, ConfigError, DataError, InsufficientDataError
from .gabor import FeatureVector, bank_responses, stride_for
from .imageio import GrayImage, ingest, load_pgm, write_pgm
from .match import TemplateStore, evaluate, export_report, identify, verify
from .pipeline import FeatureExtractor, ModelBundle, fit_bundle, load_images, make_bank, preprocess, training_split

log = logging.getLogger("biofuse")

IO_EXIT = 4


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="JSON file of dotted config keys")
    group = parser.add_argument_group(
        "configuration keys",
        "Every key may also be set in the config file or via the environment "
        "(BIOFUSE_<KEY>, dots as underscores). Precedence: flag > env > file > default.",
    )
    for key, opt in OPTIONS.items():
        extra = f" (choices: {', '.join(opt.choices)})" if opt.choices else ""
        group.add_argument(
            f"--{key}",
            dest=key,
            metavar=opt.kind.__name__.upper(),
            default=argparse.SUPPRESS,
            help=f"{opt.help}{extra} [default: {opt.default!r}; env {env_name(key)}]",
        )


def _config(args: argparse.Namespace) -> Config:
    overrides = {k: v for k, v in vars(args).items() if k in OPTIONS}
    return load_config(args.config, overrides)


def _threads(args) -> int:
    return max(1, getattr(args, "threads", 1) or 1)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_equalize(args) -> int:
    img = load_pgm(args.input)
    write_pgm(args.output, equalize(img))
    return 0


def cmd_gabor_dump(args) -> int:
    cfg = _config(args)
    img = preprocess(load_pgm(args.input), cfg) if not args.raw else load_pgm(args.input)
    bank = make_bank(cfg)
    step = 1
    if args.downsample:
        step = stride_for(cfg["gabor.downsample"])
    mags = bank_responses(img, bank, step=step)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (s, o), mag in zip(bank.labels, mags):
        lo, hi = float(mag.min()), float(mag.max())
        scaled = np.zeros(mag.shape) if hi <= lo else (mag - lo) / (hi - lo) * 255.0
        write_pgm(out / f"s{s}_o{o}.pgm", GrayImage(np.floor(scaled + 0.5).astype(np.int32), 256))
    print(f"wrote {len(bank)} responses to {out}")
    return 0


def cmd_ingest(args) -> int:
    manifest = ingest(args.root, args.layout, args.modality)
    text = manifest.to_json()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _manifests(cfg: Config):
    face = fp = None
    if cfg["dataset.face_root"]:
        face = ingest(cfg["dataset.face_root"], cfg["dataset.face_layout"], "face")
    if cfg["dataset.fingerprint_root"]:
        fp = ingest(cfg["dataset.fingerprint_root"], cfg["dataset.fingerprint_layout"], "fingerprint")
    if face is None and fp is None:
        raise ConfigError("set dataset.face_root and/or dataset.fingerprint_root")
    return face, fp


def cmd_train(args) -> int:
    cfg = _config(args)
    if cfg["features.extractor"] == "w2dpca":
        raise ConfigError("train/enroll support the gabor and pixels extractors only")
    threads = _threads(args)
    train = {}
    for manifest in _manifests(cfg):
        if manifest is None:
            continue
        parts = training_split(manifest, cfg["split.train_count"])
        paths = [p for _, samples in parts for p in samples]
        if len(paths) < 2:
            raise InsufficientDataError(f"{manifest.modality}: need at least 2 training images, got {len(paths)}")
        extractor = FeatureExtractor(cfg)
        train[manifest.modality] = extractor.matrix(load_images(paths, cfg, threads), manifest.modality, threads)
    bundle = fit_bundle(train, cfg)
    manifest = bundle.save(cfg["output.model_dir"], cfg)
    print(json.dumps({"k": manifest["k"], "model_dir": cfg["output.model_dir"], "modalities": manifest["modalities"]}))
    return 0


def _probe(args, cfg: Config, bundle: ModelBundle) -> FeatureVector:
    """Probe/template vector from --face / --fingerprint images."""
    given = {m: p for m, p in (("face", args.face), ("fingerprint", args.fingerprint)) if p}
    if not given:
        raise ConfigError("give --face and/or --fingerprint")
    missing = [m for m in given if m not in bundle.models]
    if missing:
        raise DataError(f"no trained model for {', '.join(missing)}")
    extractor = FeatureExtractor(cfg)
    raw = {m: extractor(preprocess(load_pgm(p), cfg), m) for m, p in given.items()}
    if len(raw) == 2:
        return FeatureVector("fused", 0.5 * (bundle.normalized(raw["face"]) + bundle.normalized(raw["fingerprint"])))
    (modality, v), = raw.items()
    return bundle.reduce(v)


def _open_store(cfg: Config, bundle: ModelBundle, v: FeatureVector, create: bool) -> TemplateStore:
    path = Path(cfg["output.store"])
    if path.exists():
        return TemplateStore.load(path)
    if not create:
        raise DataError(f"template store {path} does not exist")
    if cfg["match.metric"] == "mahalanobis" and v.modality != "fused":
        return TemplateStore("mahalanobis", bundle.models[v.modality].stats.sigma)
    return TemplateStore("euclidean")


def cmd_enroll(args) -> int:
    cfg = _config(args)
    bundle = ModelBundle.load(cfg["output.model_dir"])
    v = _probe(args, cfg, bundle)
    store = _open_store(cfg, bundle, v, create=True)
    store.enroll(args.subject, v)
    store.save(cfg["output.store"])
    print(f"enrolled {args.subject} ({v.modality}, dim {v.dim}); store holds {len(store)} templates")
    return 0


def cmd_identify(args) -> int:
    cfg = _config(args)
    bundle = ModelBundle.load(cfg["output.model_dir"])
    v = _probe(args, cfg, bundle)
    store = _open_store(cfg, bundle, v, create=False)
    ranked = identify(store, v, cfg["match.k"])
    for sid, dist in ranked[: args.top]:
        print(f"{sid}\t{dist!r}")
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    bundle = ModelBundle.load(cfg["output.model_dir"])
    v = _probe(args, cfg, bundle)
    store = _open_store(cfg, bundle, v, create=False)
    accepted, score = verify(store, args.subject, v, args.threshold)
    print(f"{'accept' if accepted else 'reject'}\t{score!r}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    face, fp = _manifests(cfg)
    report = evaluate(face, fp, cfg, threads=_threads(args))
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    export_report(report, out / "report.csv", "csv")
    export_report(report, out / "report.json", "json")
    summary = {"rank1_rate": report.rank1_rate, "rates": report.rates, "eer": report.eer, "excluded": report.excluded}
    print(json.dumps(summary, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biofuse", description="Face/fingerprint Gabor features and feature-level fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equalize", help="histogram-equalise a PGM image")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_equalize)

    p = sub.add_parser("gabor-dump", help="write each filter's magnitude response as PGM")
    p.add_argument("input")
    p.add_argument("output_dir")
    p.add_argument("--downsample", action="store_true", help="apply the gabor.downsample stride")
    p.add_argument("--raw", action="store_true", help="skip resampling and equalisation")
    _add_config_options(p)
    p.set_defaults(func=cmd_gabor_dump)

    p = sub.add_parser("ingest", help="list a dataset directory as a JSON manifest")
    p.add_argument("root")
    p.add_argument("--layout", choices=("orl", "flat"), default="orl")
    p.add_argument("--modality", choices=("face", "fingerprint"), default="face")
    p.add_argument("-o", "--output", help="write the manifest here instead of stdout")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit PCA and whitening models on the training split")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    _add_config_options(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("enroll", cmd_enroll, "add a template to the store"),
        ("identify", cmd_identify, "rank enrolled subjects against a probe"),
        ("verify", cmd_verify, "accept or reject a claimed identity"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--face", help="face image (PGM)")
        p.add_argument("--fingerprint", help="fingerprint image (PGM)")
        if name in ("enroll", "verify"):
            p.add_argument("--subject", required=True)
        if name == "verify":
            p.add_argument("--threshold", type=float, required=True)
        if name == "identify":
            p.add_argument("--top", type=int, default=5, help="number of ranked templates to print")
        _add_config_options(p)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="rank-1 rates, ROC and EER on the configured datasets")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    _add_config_options(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    line = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BiofuseError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, IO_EXIT)


if __name__ == "__main__":
    sys.exit(main())
