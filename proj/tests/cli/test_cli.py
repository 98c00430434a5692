import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("DEEPLGR_CLI", str(Path(__file__).resolve().parents[2] / "build" / "deeplgr"))

TOY = [
    "--set", "M=1", "--set", "F=8", "--set", "se_reduction=2",
    "--set", "lc=2", "--set", "lp=1", "--set", "lq=0",
    "--set", "pyramid_levels=1,2,4", "--set", "td_ranks=2,2,2", "--set", "mf_rank=2",
    "--set", "batch_size=8",
]


def run(*args, check=None):
    p = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env={**os.environ, "DLGR_LOG": "quiet"})
    if check is not None:
        assert p.returncode == check, p.stderr
    return p


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.bin"
    run("generate", "--out", path, "--height", 8, "--width", 8, "--days", 6, "--slots-per-day", 8, "--zones", 4,
        check=0)
    return path


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for p in (a, b):
        run("generate", "--out", p, "--height", 8, "--width", 8, "--days", 3, "--slots-per-day", 8, "--seed", 5,
            check=0)
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(Path(str(a) + ".json").read_text())["seed"] == 5


def test_generate_refuses_to_overwrite_without_force(tmp_path):
    out = tmp_path / "d.bin"
    run("generate", "--out", out, "--height", 8, "--width", 8, "--days", 1, "--slots-per-day", 8, check=0)
    run("generate", "--out", out, "--height", 8, "--width", 8, "--days", 1, "--slots-per-day", 8, check=2)
    run("generate", "--out", out, "--height", 8, "--width", 8, "--days", 1, "--slots-per-day", 8, "--force",
        check=0)


def test_exit_codes(tmp_path, toy_data):
    run("train", "--data", tmp_path / "missing.bin", "--out", tmp_path / "o", check=3)
    run("train", "--data", toy_data, "--out", tmp_path / "o", "--set", "bogus=1", check=2)
    run("train", "--data", toy_data, "--out", tmp_path / "o", "--set", "M=0", check=2)
    run("train", "--data", toy_data, check=2)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a dataset")
    run("train", "--data", bad, "--out", tmp_path / "o", check=3)
    run("ablate", "--data", toy_data, "--variants", "local,nonsense", check=2)
    run("no-such-command", check=2)


def test_train_eval_and_resume(tmp_path, toy_data):
    out = tmp_path / "run"
    run("train", "--data", toy_data, "--out", out, *TOY, "--set", "max_epochs=3", check=0)
    for name in ("best.ckpt", "last.ckpt", "train_log.ndjson", "config.resolved", "eval_test.json"):
        assert (out / name).exists(), name
    log = [json.loads(l) for l in (out / "train_log.ndjson").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [0, 1, 2]
    assert set(log[0]) == {"epoch", "train_mae", "val_mae", "val_smape", "wall_ms"}

    report = tmp_path / "eval.json"
    run("eval", "--checkpoint", out / "best.ckpt", "--data", toy_data, "--split", "test", "--out", report, check=0)
    assert json.loads(report.read_text())["mae"] == pytest.approx(json.loads((out / "eval_test.json").read_text())["mae"],
                                                                  rel=1e-12)
    run("eval", "--checkpoint", out / "best.ckpt", "--data", toy_data, "--split", "holdout", check=2)
    run("train", "--data", toy_data, "--out", tmp_path / "other", "--checkpoint", out / "last.ckpt", *TOY,
        "--set", "F=16", check=2)

    # two more epochs from last.ckpt reproduce an uninterrupted five-epoch run
    run("train", "--data", toy_data, "--out", out, "--checkpoint", out / "last.ckpt", *TOY, "--set", "max_epochs=5",
        check=0)
    full = tmp_path / "full"
    run("train", "--data", toy_data, "--out", full, *TOY, "--set", "max_epochs=5", check=0)
    strip = lambda p: [{k: v for k, v in json.loads(l).items() if k != "wall_ms"}
                       for l in p.read_text().splitlines()]
    assert strip(out / "train_log.ndjson") == strip(full / "train_log.ndjson")
    assert (out / "last.ckpt").read_bytes() == (full / "last.ckpt").read_bytes()


def test_ablate_emits_seven_rows(tmp_path, toy_data):
    out = tmp_path / "ablate"
    p = run("ablate", "--data", toy_data, "--out", out, *TOY, "--set", "max_epochs=1", check=0)
    report = json.loads((out / "ablation.json").read_text())
    rows = report["variants"]
    assert len(rows) == 7
    for row in rows:
        assert {"variant", "params", "mae", "smape"} <= set(row)
    assert "Last" in report["baselines"]
    assert len([l for l in p.stdout.splitlines() if l.strip()]) >= 7


def test_infer_fine_writes_fine_grid(tmp_path, toy_data):
    out = tmp_path / "fine"
    run("train", "--data", toy_data, "--out", out, *TOY, "--set", "task=infer_fine", "--set", "upscale=2",
        "--set", "pyramid_levels=1,2,4", "--set", "max_epochs=1", check=0)
    coarse = tmp_path / "coarse.bin"
    run("generate", "--out", coarse, "--height", 4, "--width", 4, "--days", 1, "--slots-per-day", 8, check=0)
    fine = tmp_path / "pred.csv"
    run("infer-fine", "--checkpoint", out / "best.ckpt", "--coarse-input", coarse, "--out", fine, "--format", "csv",
        check=0)
    lines = fine.read_text().splitlines()
    assert len(lines) >= 8 * 8 * 8
