import json

import numpy as np
import pandas as pd
import pytest

import mmic30_ablate
from mmic import run_command
from mmic01_settings_sanity_check import threads_check, variants_check
from mmic02_make_toy_dataset import MakeToyCommand
from models.backbone import build_model
from utils.checkpoint import load_checkpoint, make_checkpoint, save_checkpoint
from utils.config import parse_config, parse_config_text
from utils.image_io import save_ppm
from utils.mmt import save_mmt

SMALL_LAYOUT = {"stage_channels": [8, 16, 32, 64], "stage_depths": [1, 1, 1, 1], "r": 1.0, "ssm_state": 2,
                "dtype": "float64"}

testdata_exit_codes = [
    ([], 2),
    (["-h"], 0),
    (["fit"], 2),
    (["params", "--variant", "huge"], 2),
    (["eval"], 2),
]


@pytest.mark.parametrize("argv, expected", testdata_exit_codes)
def test_exit_codes(argv, expected):
    assert run_command(argv) == expected


def write_config(tmp_path, name="run.json", **fields) -> str:
    raw = {"output_dir": "out", **SMALL_LAYOUT, **fields}
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=2))
    return str(path)


def test_config_error_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "lerning_rate": 0.001\n}')
    assert run_command(["params", "-c", str(path)]) == 2


def test_runtime_error_exits_1(tmp_path):
    assert run_command(["eval", "-k", str(tmp_path / "absent.mmic")]) == 1


def test_params(tmp_path, capsys):
    kv_path = tmp_path / "tiny.kv"
    assert run_command(["params", "-v", "tiny", "-o", str(kv_path)]) == 0
    out = capsys.readouterr().out
    assert "total" in out and "GMACs" in out
    kv = dict(line.split("=") for line in kv_path.read_text().strip().splitlines())
    assert kv["params.total"] == kv["params.enumerated"]


def test_params_from_config(tmp_path):
    config = write_config(tmp_path, variant="small")
    assert run_command(["params", "-c", config]) == 0
    assert (tmp_path / "out" / "params_small.kv").is_file()


def test_bench_scan(capsys):
    assert run_command(["bench-scan", "-L", "8,16", "-b", "4", "-r", "1", "-N", "2", "-D", "3"]) == 0
    out = capsys.readouterr().out
    assert "blocked/4" in out and "sequential" in out


def test_ablate_without_training(tmp_path, capsys):
    config = write_config(tmp_path, variant="tiny", stage_channels=[32, 64, 128, 256])
    assert run_command(["ablate", "-c", config, "--r", "0.125,0.25,0.5,1.0", "--no-train"]) == 0
    table = pd.read_csv(tmp_path / "out" / "ablation_ratio.csv")
    assert table["r"].tolist() == [0.125, 0.25, 0.5, 1.0]
    assert table["params"].nunique() > 1
    assert run_command(["ablate", "-c", config, "-g", "components", "--no-train"]) == 0
    components = pd.read_csv(tmp_path / "out" / "ablation_components.csv")
    assert len(components) == 4
    assert components["params"].iloc[-1] > components["params"].iloc[0]
    assert (tmp_path / "out" / "resolved_config.json").is_file()


def test_parallel_scan_groups_have_fewer_parameters(tmp_path):
    config = write_config(tmp_path, variant="tiny", stage_channels=[32, 64, 128, 256])
    assert run_command(["ablate", "-c", config, "-g", "parallel", "--no-train"]) == 0
    table = pd.read_csv(tmp_path / "out" / "ablation_parallel.csv").set_index("parallel_vssm")
    assert table.loc[True, "params"] < table.loc[False, "params"]


def test_interrupted_ablation_keeps_finished_rows(tmp_path, monkeypatch):
    finished = []

    def row_then_interrupt(overrides, config_json, train=True):
        if finished:
            raise KeyboardInterrupt
        finished.append(overrides)
        return {**overrides, "params": 1}

    config = write_config(tmp_path, variant="tiny", stage_channels=[32, 64, 128, 256])
    monkeypatch.setattr(mmic30_ablate, "iter_jobs", lambda job, rows, n_cpus, **kwargs: (
        row_then_interrupt(row, **kwargs) for row in rows))
    assert run_command(["ablate", "-c", config, "-g", "components", "--no-train"]) == 1
    partial = pd.read_csv(tmp_path / "out" / "ablation_components.csv")
    assert len(partial) == 1 and partial["params"].tolist() == [1]
    assert (tmp_path / "out" / "resolved_config.json").is_file()


def test_ablate_rejects_impossible_ratio(tmp_path):
    config = write_config(tmp_path)
    assert run_command(["ablate", "-c", config, "--r", "0.25", "--no-train"]) == 2


def test_eval_on_the_test_split_of_four_records(tmp_path, capsys):
    save_mmt(tmp_path / "images.mmt", np.random.default_rng(0).uniform(0, 1, (4, 32, 32, 3)).astype(np.float32))
    save_mmt(tmp_path / "images_labels.mmt", np.zeros(4, dtype=np.float32))
    cfg = parse_config_text(json.dumps({"data": "images.mmt", **SMALL_LAYOUT}), base_dir=tmp_path)
    model = build_model(cfg.model, cfg.seed)
    model.head.weight.data = np.zeros_like(model.head.weight.data)
    model.head.bias.data = np.array([5.0, 0.0])
    checkpoint = tmp_path / "perfect.mmic"
    save_checkpoint(make_checkpoint(cfg, model), checkpoint)
    assert run_command(["eval", "--checkpoint", str(checkpoint), "--split", "test"]) == 0
    assert "100.00" in capsys.readouterr().out


def test_make_toy(tmp_path):
    assert MakeToyCommand().run(["-o", str(tmp_path), "-N", "6"]) == 0
    cfg = parse_config(tmp_path / "toy.json")
    assert cfg.data == (tmp_path / "images.mmt").resolve()
    assert cfg.labels.is_file()
    assert MakeToyCommand().run(["-o", str(tmp_path / "ppm"), "-N", "4", "--ppm", "--channels", "1"]) == 0
    assert len(list((tmp_path / "ppm" / "images").glob("*.ppm"))) == 4
    assert parse_config(tmp_path / "ppm" / "toy.json").model.in_channels == 1
    assert MakeToyCommand().run(["-o", str(tmp_path), "-N", "0"]) == 2


def test_train_eval_predict(tmp_path, capsys):
    assert MakeToyCommand().run(["-o", str(tmp_path), "-N", "10", "--seed", "3"]) == 0
    config = write_config(tmp_path, data="images.mmt", epochs=2, warmup_epochs=1, batch_size=4,
                          learning_rate=1e-3)
    assert run_command(["train", "-c", config]) == 0
    out_dir = tmp_path / "out"
    for name in ("resolved_config.json", "best.mmic", "history.csv", "history.txt", "test_metrics.txt"):
        assert (out_dir / name).is_file(), name
    history = pd.read_csv(out_dir / "history.csv")
    assert history["epoch"].tolist() == [1, 2]
    assert "epoch" in load_checkpoint(out_dir / "best.mmic").best_metric

    assert run_command(["eval", "-k", str(out_dir / "best.mmic"), "-s", "val"]) == 0
    image = tmp_path / "cell.ppm"
    save_ppm(image, np.random.default_rng(1).uniform(0, 1, (32, 32, 3)))
    capsys.readouterr()
    assert run_command(["predict", "-k", str(out_dir / "best.mmic"), "-i", str(image)]) == 0
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("class ")]
    probabilities = [float(line.split(":")[1]) for line in lines[:2]]
    assert np.isclose(sum(probabilities), 1.0, atol=1e-5)

    wrong = tmp_path / "wrong.ppm"
    save_ppm(wrong, np.zeros((16, 16, 3)))
    assert run_command(["predict", "-k", str(out_dir / "best.mmic"), "-i", str(wrong)]) == 1


def test_settings_sanity_checks():
    assert variants_check()
    assert threads_check()
