import json
import math
import os
import subprocess

import numpy as np
import pytest

import xtransfer
from xtransfer import zoo


EPS = 12 / 255


def make_linf(seed=0, res=16):
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-EPS, EPS, size=(3, res, res))
    return xtransfer.Perturbation.linf(np.clip(delta, -xtransfer.linf_bound_f32(EPS), xtransfer.linf_bound_f32(EPS)), EPS)


@pytest.fixture
def zoo_dir(tmp_path):
    p = make_linf()
    digest = p.save(str(tmp_path / "uap_a.json"), {"note": "smoke"})
    index = xtransfer.ZooIndex()
    index.add(p.key, "uap_a", "uap_a.json", digest)
    index.save(str(tmp_path / "index.json"))
    return tmp_path


def test_zoo_round_trip(zoo_dir):
    index = str(zoo_dir / "index.json")
    assert zoo.list_threat_model(index) == ["linf_non_targeted"]
    assert zoo.list_attacker("linf_non_targeted", index) == ["uap_a"]
    attack = zoo.load_attacker("linf_non_targeted", "uap_a", index)
    assert np.array_equal(attack.perturbation.delta, make_linf().delta)
    assert attack.perturbation.resolution == (16, 16)


def test_env_index_and_unknown_attacker(zoo_dir, monkeypatch):
    monkeypatch.setenv("XT_ZOO_INDEX", str(zoo_dir / "index.json"))
    assert zoo.list_attacker("linf_non_targeted") == ["uap_a"]
    with pytest.raises(xtransfer.UnknownAttacker):
        zoo.load_attacker("linf_non_targeted", "missing")


def test_apply_is_bounded_and_clamped(zoo_dir):
    attack = zoo.load_attacker("linf_non_targeted", "uap_a", str(zoo_dir / "index.json"))
    x = np.random.default_rng(1).uniform(0, 1, size=(2, 3, 16, 16))
    y = attack(x)
    assert y.shape == x.shape
    assert y.min() >= 0.0 and y.max() <= 1.0
    assert np.abs(y - x).max() <= EPS + 1e-12
    single = attack(x[0])
    assert single.shape == (3, 16, 16)
    assert np.array_equal(single, y[0])


def test_corrupted_payload_rejected(zoo_dir):
    payload = zoo_dir / "uap_a.delta.bin"
    data = bytearray(payload.read_bytes())
    data[-1] ^= 0x01
    payload.write_bytes(bytes(data))
    with pytest.raises(xtransfer.DigestMismatch):
        xtransfer.Perturbation.load(str(zoo_dir / "uap_a.json"))


def test_linf_bound_rejected():
    with pytest.raises(xtransfer.XTransferError):
        xtransfer.Perturbation.linf(np.full((3, 4, 4), 13 / 255), EPS)


def test_asr_and_ucb():
    assert xtransfer.non_targeted_asr(80.0, 20.0) == pytest.approx(75.0)
    assert xtransfer.non_targeted_asr(0.0, 0.0) is None
    scores = xtransfer.ucb_scores([0.5, 0.2, 0.0], [2, 1, 0], 3)
    assert scores[0] == pytest.approx(0.5 + math.sqrt(2 * math.log(3) / 2))
    assert scores[1] == pytest.approx(0.2 + math.sqrt(2 * math.log(3) / 1))
    assert math.isinf(scores[2])


@pytest.mark.skipif(not os.environ.get("XT_CLI"), reason="needs the xtransfer CLI (XT_CLI)")
def test_generate_against_toy_encoders(tmp_path):
    cfg = {
        "schema_version": 1,
        "toy": {"epochs": 1, "dataset": {"num_classes": 4, "images_per_class": 4, "contrast": 0.4}},
        "seeds": [0, 1],
        "datasets": {"surrogate": {"images_per_class": 2}, "eval": {"images_per_class": 2},
                     "captioned": {"images_per_class": 1}},
    }
    (tmp_path / "toy.json").write_text(json.dumps(cfg))
    subprocess.run([os.environ["XT_CLI"], "--config", str(tmp_path / "toy.json"), "--out", str(tmp_path / "toy"),
                    "--log-level", "warn", "toy-train"], check=True)
    space = json.loads((tmp_path / "toy" / "search_space.json").read_text())
    config = {"search_space": space, "strategy": "ucb", "k": 1, "resolution": [32, 32], "total_steps": 4,
              "batch_size": 4, "seed": 3}
    images = np.random.default_rng(0).uniform(0, 1, size=(8, 3, 32, 32))
    p, trace = xtransfer.generate(config, images, str(tmp_path / "toy"))
    assert p.key == "linf_non_targeted"
    assert np.abs(p.delta).max() <= xtransfer.linf_bound_f32(EPS)
    lines = trace.strip().splitlines()
    assert len(lines) == 5
    assert "final_state" in json.loads(lines[-1])
    p2, trace2 = xtransfer.generate(config, images, str(tmp_path / "toy"))
    assert np.array_equal(p.delta, p2.delta)
