import json

import pytest

from utils.config import parse_config, parse_config_text, write_resolved_config
from utils.errors import ConfigError


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config_text('{"variant": "tiny"}', base_dir=tmp_path)
    assert cfg.model.r == 0.25 and cfg.model.lam == 2 and cfg.model.ssm_state == 8
    assert cfg.schedule.base_lr == 1e-4
    assert cfg.model.stage_channels == [32, 64, 128, 256]
    assert cfg.data is None and cfg.labels is None


def test_unknown_key_names_line(tmp_path):
    text = '{\n  "variant": "tiny",\n  "lerning_rate": 0.001\n}'
    with pytest.raises(ConfigError, match="line 3") as error:
        parse_config_text(text, base_dir=tmp_path)
    assert error.value.field == "lerning_rate"


testdata_bad_fields = [
    ('{"stage_channels": [30, 60, 120, 240]}', "stage_channels"),
    ('{"classes": "two"}', "classes"),
    ('{"r": true}', "r"),
    ('{"use_laef": 1}', "use_laef"),
    ('{"stage_depths": [2, 2.5, 2, 2]}', "stage_depths"),
    ('{"variant": "huge"}', "variant"),
    ('{"split_ratio": [6, 2]}', "split_ratio"),
    ('{"split_ratio": [6, 0, 2]}', "split_ratio"),
    ('{"labels": "labels.mmt"}', "labels"),
    ('{"epochs": 5, "warmup_epochs": 5}', "warmup_epochs"),
    ('{"r": 0.01}', "r"),
    ("[1, 2]", "<file>"),
    ('{"variant": "tiny",}', "<file>"),
]


@pytest.mark.parametrize("text, field", testdata_bad_fields)
def test_config_errors_name_the_field(tmp_path, text, field):
    with pytest.raises(ConfigError) as error:
        parse_config_text(text, base_dir=tmp_path)
    assert error.value.field == field


def test_missing_paths(tmp_path):
    with pytest.raises(ConfigError) as error:
        parse_config_text('{"data": "images.mmt"}', base_dir=tmp_path)
    assert error.value.field == "data"
    (tmp_path / "images.mmt").write_bytes(b"")
    with pytest.raises(ConfigError) as error:
        parse_config_text('{"data": "images.mmt"}', base_dir=tmp_path)
    assert error.value.field == "labels"
    cfg = parse_config_text('{"data": "images.mmt"}', base_dir=tmp_path, check_paths=False)
    assert cfg.labels == tmp_path.resolve() / "images_labels.mmt"


def test_default_labels_for_directory(tmp_path):
    (tmp_path / "cells").mkdir()
    (tmp_path / "cells" / "labels.csv").write_text("a.ppm,0\n")
    cfg = parse_config_text('{"data": "cells"}', base_dir=tmp_path)
    assert cfg.labels == (tmp_path / "cells" / "labels.csv").resolve()


def test_require_data(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_text("{}", base_dir=tmp_path).require_data()


def test_resolved_config_round_trip(tmp_path):
    (tmp_path / "images.mmt").write_bytes(b"")
    (tmp_path / "images_labels.mmt").write_bytes(b"")
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"variant": "small", "data": "images.mmt", "r": 0.5, "lambda": 3,
                                "epochs": 20, "output_dir": "out"}))
    cfg = parse_config(path, echo=True)
    assert cfg.output_dir == (tmp_path / "out").resolve()
    echoed = cfg.output_dir / "resolved_config.json"
    resolved = json.loads(echoed.read_text())
    assert resolved["lambda"] == 3 and resolved["r"] == 0.5 and resolved["warmup_epochs"] == 10
    again = parse_config(echoed)
    assert again.model == cfg.model and again.schedule == cfg.schedule
    assert again.to_dict() == cfg.to_dict()
    assert write_resolved_config(again) == echoed


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.json")
