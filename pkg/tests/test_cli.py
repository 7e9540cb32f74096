import json
import zlib
from pathlib import Path

import numpy as np
import pytest

from layoutguide.cli import main
from layoutguide.imageio import read_image

ROOT = Path(__file__).resolve().parent.parent
TINY = str(ROOT / "fixtures" / "tiny.ckpt")
LAYOUT = str(ROOT / "layouts" / "red_left_blue_right.json")
QUICK = str(ROOT / "configs" / "quick.json")


def crc(path):
    return zlib.crc32(Path(path).read_bytes())


def run(*argv):
    return main([str(a) for a in argv])


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "generate" in capsys.readouterr().out


def test_unknown_flag_nonzero():
    assert run("generate", "--bogus") != 0


def test_generate_writes_outputs(tmp_path):
    out = tmp_path / "g"
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", QUICK,
               "--heatmaps", "--out-dir", out) == 0
    img = read_image(out / "image.ppm")
    assert img.shape == (8, 8, 3)
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [0]
    assert man["config"]["guidance"]["refine_steps"] == 2
    assert "heatmaps/step00_entry0.pgm" in man["outputs"]
    trace = (out / "trace.jsonl").read_text().splitlines()
    assert len(trace) == 2 * 5
    assert {"intra", "inter", "self", "eta"} <= set(json.loads(trace[0]))


def test_generate_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("LAYOUTGUIDE_OUT", str(tmp_path / "env"))
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", QUICK) == 0
    assert (tmp_path / "env" / "image.ppm").is_file()


def test_unguided_equals_everything_off(tmp_path):
    off = tmp_path / "off.json"
    cfg = json.loads(Path(QUICK).read_text())
    cfg["guidance"].update(use_intra=False, use_inter=False, use_self=False, redistribute=False)
    off.write_text(json.dumps(cfg))
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", off, "--out-dir", tmp_path / "a") == 0
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", QUICK, "--unguided",
               "--out-dir", tmp_path / "b") == 0
    assert crc(tmp_path / "a" / "image.ppm") == crc(tmp_path / "b" / "image.ppm")


def test_manifest_replay_byte_identical(tmp_path):
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", QUICK, "--seed", "4",
               "--heatmaps", "--out-dir", tmp_path / "a") == 0
    assert run("generate", "--replay", tmp_path / "a" / "manifest.json", "--out-dir", tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["outputs"] == b["outputs"]
    for name in a["outputs"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_missing_files(tmp_path, capsys):
    assert run("generate", "--checkpoint", tmp_path / "nope.ckpt", "--layout", LAYOUT) == 2
    assert "nope.ckpt" in capsys.readouterr().err
    assert run("generate", "--checkpoint", TINY, "--layout", tmp_path / "nope.json") == 2
    assert run("generate", "--checkpoint", TINY) == 2


def test_eval_zero_seeds_is_usage_error(tmp_path, capsys):
    assert run("eval", "--checkpoint", TINY, "--seeds", "0", "--out-dir", tmp_path) != 0
    assert "seeds" in capsys.readouterr().err


def test_eval_report(tmp_path, capsys):
    assert run("eval", "--checkpoint", TINY, "--config", QUICK, "--seeds", "2", "--out-dir", tmp_path) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["seed_count"] == 2
    rep = json.loads((tmp_path / "report.json").read_text())
    vals = [m for row in rep["masses"] for m in row]
    assert all(0 <= v <= 1 for v in vals)
    assert abs(np.mean(vals) - rep["summary"]["mean_attention_in_box"]) <= 1e-12
    assert (tmp_path / "report.csv").read_text().startswith("seed,entry,")


def test_eval_with_layout_files(tmp_path):
    assert run("eval", "--checkpoint", TINY, "--config", QUICK, "--seeds", "2", "--unguided",
               "--layouts", ROOT / "layouts", "--out-dir", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["masses"]) == 2


def test_ablate_grid(tmp_path, capsys):
    assert run("ablate", "--checkpoint", TINY, "--config", QUICK, "--seeds", "1", "--grid", "components",
               "KM", "--out-dir", tmp_path) == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())
    assert [r["variant"] for r in rows] == ["intra", "intra+inter", "intra+inter+self", "K=1,M=1", "K=0.8,M=0.5"]
    assert (tmp_path / "ablation.csv").is_file()


def test_bad_config_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"guidance": {"eta": 1.0}}))
    assert run("generate", "--checkpoint", TINY, "--layout", LAYOUT, "--config", bad,
               "--out-dir", tmp_path) == 2


@pytest.mark.slow
def test_train_one_step(tmp_path):
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--steps", "1", "--checkpoint", ckpt, "--out-dir", tmp_path) == 0
    assert ckpt.is_file()
    assert len(json.loads(ckpt.with_suffix(".loss.json").read_text())["loss"]) == 1
