import json

import pytest

from biofuse.config import OPTIONS, Config, env_name, load_config
from biofuse.errors import ConfigError


def test_defaults():
    cfg = Config()
    assert cfg["bank.scales"] == 5 and cfg["bank.orientations"] == 8
    assert cfg["gabor.downsample"] == 64
    assert cfg["pca.variance"] == 0.95
    assert cfg["fusion.tanh_c"] == 0.01 and cfg["fusion.sigma_floor"] == 1e-8
    assert (cfg["image.width"], cfg["image.height"]) == (92, 112)
    assert set(cfg) == set(OPTIONS)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        Config({"bank.scale": 3})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bank.scales": 3, "bnak.gamma": 1}))
    with pytest.raises(ConfigError, match="bnak.gamma"):
        load_config(path, environ={})
    with pytest.raises(ConfigError, match="BIOFUSE_BANK_SCALE"):
        load_config(None, environ={"BIOFUSE_BANK_SCALE": "3"})


@pytest.mark.parametrize(
    "key, value",
    [("bank.scales", 0), ("bank.scales", "x"), ("match.metric", "cosine"), ("pca.variance", 1.5),
     ("fusion.tanh_c", float("nan")), ("bank.scales", 2.5), ("eval.permute_labels", "maybe")],
)
def test_bad_values_rejected(key, value):
    with pytest.raises(ConfigError):
        Config({key: value})


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"bank.scales": 3, "bank.orientations": 6, "match.k": 2}))
    env = {env_name("bank.orientations"): "4", env_name("match.k"): "5", "UNRELATED": "x"}
    cfg = load_config(path, {"match.k": "7"}, env)
    assert cfg["bank.scales"] == 3  # file over default
    assert cfg["bank.orientations"] == 4  # env over file
    assert cfg["match.k"] == 7  # flag over env
    assert env_name("bank.lambda_ratio") == "BIOFUSE_BANK_LAMBDA_RATIO"


def test_coercion():
    cfg = Config({"eval.permute_labels": "true", "bank.lambda0": "3", "split.train_count": "4"})
    assert cfg["eval.permute_labels"] is True
    assert cfg["bank.lambda0"] == 3.0 and isinstance(cfg["bank.lambda0"], float)
    assert cfg["split.train_count"] == 4


def test_digest_is_content_hash():
    a = Config({"bank.scales": 3, "match.k": 2})
    b = Config({"match.k": 2, "bank.scales": 3})
    assert a.digest() == b.digest() and len(a.digest()) == 64
    assert a.digest() != Config({"bank.scales": 4, "match.k": 2}).digest()
    assert a.digest() != a.replace(pairing__seed=1).digest()
    # output locations do not affect results, so they do not affect the digest
    assert a.digest() == a.replace(output__dir="elsewhere").digest()


def test_replace_and_json():
    cfg = Config().replace(bank__scales=2)
    assert cfg["bank.scales"] == 2
    doc = json.loads(cfg.to_json())
    assert list(doc) == sorted(doc) and doc["bank.scales"] == 2
    assert Config(doc).digest() == cfg.digest()
