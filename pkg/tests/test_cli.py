import json
import subprocess
import sys

import numpy as np
import pytest

from biofuse.cli import build_parser, main
from biofuse.config import OPTIONS, env_name
from biofuse.imageio import GrayImage, load_pgm, write_pgm

from conftest import SMALL, write_flat_dataset, write_orl_dataset


def flags(values: dict) -> list[str]:
    out = []
    for key, value in values.items():
        out += [f"--{key}", str(value)]
    return out


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os

    for name in list(os.environ):
        if name.startswith("BIOFUSE_"):
            monkeypatch.delenv(name)


def last_error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ---------------------------------------------------------------------------
# equalize / gabor-dump / ingest


def test_equalize(tmp_path, rng):
    src, dst = tmp_path / "in.pgm", tmp_path / "out.pgm"
    write_pgm(src, GrayImage(np.array([[0, 64], [128, 255]])))
    assert main(["equalize", str(src), str(dst)]) == 0
    assert load_pgm(dst).pixels.ravel().tolist() == [0, 85, 170, 255]
    write_pgm(src, GrayImage(rng.integers(10, 60, size=(9, 7))))
    main(["equalize", str(src), str(dst)])
    assert load_pgm(dst).pixels.shape == (9, 7)


def test_equalize_constant_is_byte_copy(tmp_path):
    src, dst = tmp_path / "in.pgm", tmp_path / "out.pgm"
    write_pgm(src, GrayImage(np.full((5, 4), 33)))
    assert main(["equalize", str(src), str(dst)]) == 0
    assert dst.read_bytes() == src.read_bytes()


def test_equalize_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.pgm"
    assert main(["equalize", str(missing), str(tmp_path / "o.pgm")]) == 4
    err = last_error(capsys)
    assert err["exit_code"] == 4 and str(missing) in err["message"]


def test_equalize_bad_file_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6 1 1 255\n\x00\x00\x00")
    assert main(["equalize", str(bad), str(tmp_path / "o.pgm")]) == 3
    assert "byte offset 0" in last_error(capsys)["message"]


def test_gabor_dump(tmp_path, rng):
    src = tmp_path / "face.pgm"
    write_pgm(src, GrayImage(rng.integers(0, 256, size=(112, 92))))
    out = tmp_path / "new" / "dir"
    assert main(["gabor-dump", str(src), str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(f"s{s}_o{o}.pgm" for s in range(5) for o in range(8))
    img = load_pgm(out / "s0_o0.pgm")
    assert img.pixels.shape == (112, 92) and img.pixels.min() == 0 and img.pixels.max() == 255
    small = tmp_path / "small"
    assert main(["gabor-dump", str(src), str(small), "--downsample"]) == 0
    assert load_pgm(small / "s4_o7.pgm").pixels.shape == (14, 12)


def test_ingest(tmp_path, capsys):
    root = write_orl_dataset(tmp_path / "faces", 2, 2, 8, 8)
    assert main(["ingest", str(root)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [s["id"] for s in doc["subjects"]] == ["s1", "s2"]
    assert main(["ingest", str(tmp_path / "empty_missing")]) == 3
    assert "not a directory" in last_error(capsys)["message"]


# ---------------------------------------------------------------------------
# train / enroll / identify / verify


@pytest.fixture
def datasets(tmp_path):
    faces = write_orl_dataset(tmp_path / "faces", 4, 4, 32, 32, seed=5)
    prints = write_flat_dataset(tmp_path / "prints", 3, 4, 32, 32, seed=6)
    return faces, prints


def base_flags(tmp_path, faces, prints) -> list[str]:
    return flags(SMALL) + [
        "--dataset.face_root", str(faces),
        "--dataset.fingerprint_root", str(prints),
        "--output.model_dir", str(tmp_path / "models"),
        "--output.store", str(tmp_path / "store.bfts"),
        "--output.dir", str(tmp_path / "out"),
    ]


def test_train_writes_bundle_and_is_reproducible(tmp_path, datasets):
    args = base_flags(tmp_path, *datasets)
    assert main(["train", *args]) == 0
    models = tmp_path / "models"
    names = sorted(p.name for p in models.iterdir())
    assert names == ["face.bfpc", "face.bfws", "fingerprint.bfpc", "fingerprint.bfws", "manifest.json"]
    first = {n: (models / n).read_bytes() for n in names}
    assert main(["train", "--threads", "2", *args]) == 0
    assert {n: (models / n).read_bytes() for n in names} == first


def test_train_count_too_large(tmp_path, datasets, capsys):
    args = base_flags(tmp_path, *datasets)
    assert main(["train", *args, "--split.train_count", "9"]) == 3
    msg = last_error(capsys)["message"]
    assert "s1" in msg and "s4" in msg


def test_enroll_identify_verify(tmp_path, datasets, capsys):
    faces, prints = datasets
    args = base_flags(tmp_path, faces, prints)
    assert main(["train", *args]) == 0
    probe = ["--face", str(faces / "s2" / "1.pgm"), "--fingerprint", str(prints / "f1_1.pgm")]
    other = ["--face", str(faces / "s3" / "1.pgm"), "--fingerprint", str(prints / "f2_1.pgm")]
    assert main(["identify", *args, *probe]) == 3  # no store yet
    assert main(["enroll", *args, *probe, "--subject", "alice"]) == 0
    assert main(["enroll", *args, *other, "--subject", "bob"]) == 0
    capsys.readouterr()
    assert main(["identify", *args, *probe]) == 0
    first = capsys.readouterr().out.splitlines()[0].split("\t")
    assert first[0] == "alice" and float(first[1]) == 0.0
    assert main(["verify", *args, *probe, "--subject", "alice", "--threshold", "0"]) == 0
    assert capsys.readouterr().out.startswith("accept\t")
    assert main(["verify", *args, *probe, "--subject", "bob", "--threshold", "0"]) == 0
    assert capsys.readouterr().out.startswith("reject\t")
    assert main(["verify", *args, *probe, "--subject", "carol", "--threshold", "1"]) == 3


def test_identify_empty_store_fails(tmp_path, datasets):
    from biofuse.match import TemplateStore

    faces, prints = datasets
    args = base_flags(tmp_path, faces, prints)
    assert main(["train", *args]) == 0
    TemplateStore().save(tmp_path / "store.bfts")
    assert main(["identify", *args, "--face", str(faces / "s1" / "1.pgm"),
                 "--fingerprint", str(prints / "f1_1.pgm")]) != 0


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_outputs_and_determinism(tmp_path, datasets, capsys):
    args = base_flags(tmp_path, *datasets)
    assert main(["evaluate", *args]) == 0
    out = tmp_path / "out"
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["rates"]) == {"face", "fingerprint", "fused"}
    assert all(doc["rates"][m] is not None for m in doc["rates"])
    csv_text = (out / "report.csv").read_text()
    assert f"config_digest,{doc['config_digest']}" in csv_text.splitlines()
    first = (csv_text, (out / "report.json").read_text())
    assert main(["evaluate", *args, "--threads", "4"]) == 0
    assert ((out / "report.csv").read_text(), (out / "report.json").read_text()) == first


def test_seed_changes_digest_under_shuffle(tmp_path, datasets):
    args = base_flags(tmp_path, *datasets) + ["--pairing.mode", "shuffle"]
    digests = []
    for seed in ("1", "2"):
        assert main(["evaluate", *args, "--pairing.seed", seed]) == 0
        digests.append(json.loads((tmp_path / "out" / "report.json").read_text())["config_digest"])
    assert digests[0] != digests[1]


def test_unknown_config_key_aborts(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bank.scale": 3}))
    assert main(["evaluate", "--config", str(cfg)]) == 2
    assert last_error(capsys)["error"] == "ConfigError"


def test_env_override(tmp_path, datasets, monkeypatch):
    faces, prints = datasets
    monkeypatch.setenv(env_name("dataset.face_root"), str(faces))
    args = flags(SMALL) + ["--output.dir", str(tmp_path / "out")]
    assert main(["evaluate", *args]) == 0
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["rates"]["face"] is not None and doc["rates"]["fused"] is None


def test_help_lists_every_key():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name in ("gabor-dump", "train", "enroll", "identify", "verify", "evaluate"):
        text = sub.choices[name].format_help()
        for key, opt in OPTIONS.items():
            assert f"--{key}" in text, (name, key)
            assert env_name(key) in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "biofuse", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "biofuse" in res.stdout
