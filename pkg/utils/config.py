"""
Strict JSON run configuration.

    {"variant": "tiny", "data": "toy/images.mmt", "classes": 2}

Every key not given falls back to the defaults in mmic00_settings. Unknown keys,
wrong types and constraint violations raise ConfigError naming the field.
"""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from mmic00_settings import DATA, MODEL_DEFAULTS, TRAINING, VARIANTS, WORK_DIR
from models.backbone import ModelConfig
from utils.conventions import original_2_aux_file_path
from utils.errors import ConfigError
from utils.trainer import TrainSchedule

INT, NUMBER, STRING, BOOL, INT_LIST = "int", "number", "string", "bool", "int_list"

SCHEMA = {
    "variant": STRING, "data": STRING, "labels": STRING, "classes": INT,
    "in_channels": INT, "input_size": INT, "stage_channels": INT_LIST, "stage_depths": INT_LIST,
    "lambda": INT, "r": NUMBER, "ssm_state": INT, "eca_kernel": INT, "dtype": STRING,
    "learning_rate": NUMBER, "weight_decay": NUMBER, "batch_size": INT, "epochs": INT,
    "warmup_epochs": INT, "min_lr": NUMBER, "patience": INT, "split_ratio": INT_LIST, "seed": INT,
    "use_laef": BOOL, "use_fmiam": BOOL, "parallel_vssm": BOOL, "output_dir": STRING,
}


@dataclass
class RunConfig:
    model: ModelConfig
    schedule: TrainSchedule
    data: Path | None = None
    labels: Path | None = None
    output_dir: Path = WORK_DIR / "run"
    split_ratio: tuple[int, int, int] = DATA["split_ratio"]
    seed: int = DATA["seed"]
    source: Path | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        """The resolved config, itself a valid config file."""
        m, s = self.model, self.schedule
        resolved = {
            "variant": m.variant, "data": str(self.data) if self.data else None,
            "labels": str(self.labels) if self.labels else None, "classes": m.num_classes,
            "in_channels": m.in_channels, "input_size": m.input_size,
            "stage_channels": list(m.stage_channels), "stage_depths": list(m.stage_depths),
            "lambda": int(m.lam), "r": m.r, "ssm_state": m.ssm_state, "eca_kernel": m.eca_kernel, "dtype": m.dtype,
            "learning_rate": s.base_lr, "weight_decay": s.weight_decay, "batch_size": s.batch_size,
            "epochs": s.total_epochs, "warmup_epochs": s.warmup_epochs, "min_lr": s.min_lr, "patience": s.patience,
            "split_ratio": list(self.split_ratio), "seed": self.seed,
            "use_laef": m.use_laef, "use_fmiam": m.use_fmiam, "parallel_vssm": m.parallel_vssm,
            "output_dir": str(self.output_dir),
        }
        return {key: value for key, value in resolved.items() if value is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def require_data(self):
        if self.data is None:
            raise ConfigError("data", "this command needs a dataset")


def _line_of(text: str, key: str) -> int:
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for lineno, line in enumerate(text.split("\n"), start=1):
        if pattern.search(line):
            return lineno
    return 0


def _check_type(key: str, value):
    kind = SCHEMA[key]
    is_int = isinstance(value, int) and not isinstance(value, bool)
    if kind == INT and not is_int:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if kind == NUMBER and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if kind == STRING and not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    if kind == BOOL and not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    if kind == INT_LIST and not (isinstance(value, list)
                                 and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ConfigError(key, f"expected a list of integers, got {value!r}")


def _default_labels(data: Path) -> Path:
    if data.is_dir():
        return data / "labels.csv"
    return original_2_aux_file_path(data, f"_labels{data.suffix}")


def config_from_dict(raw: dict, text: str = "", base_dir: Path | None = None, check_paths: bool = True,
                     default_output: Path = WORK_DIR / "run") -> RunConfig:
    for key in raw:
        if key not in SCHEMA:
            line = _line_of(text, key)
            where = f" (line {line})" if line else ""
            raise ConfigError(key, f"unknown key{where}")
    for key, value in raw.items():
        _check_type(key, value)

    variant = raw.get("variant", MODEL_DEFAULTS["variant"])
    if variant not in VARIANTS:
        raise ConfigError("variant", f"unknown variant '{variant}' (expected one of {', '.join(VARIANTS)})")
    model = ModelConfig(
        variant=variant,
        num_classes=raw.get("classes", 2),
        in_channels=raw.get("in_channels", MODEL_DEFAULTS["in_channels"]),
        input_size=raw.get("input_size", MODEL_DEFAULTS["input_size"]),
        stage_channels=raw.get("stage_channels", list(VARIANTS[variant]["stage_channels"])),
        stage_depths=raw.get("stage_depths", list(VARIANTS[variant]["stage_depths"])),
        lam=raw.get("lambda", MODEL_DEFAULTS["lambda"]),
        r=float(raw.get("r", MODEL_DEFAULTS["r"])),
        ssm_state=raw.get("ssm_state", MODEL_DEFAULTS["ssm_state"]),
        eca_kernel=raw.get("eca_kernel", MODEL_DEFAULTS["eca_kernel"]),
        dtype=raw.get("dtype", MODEL_DEFAULTS["dtype"]),
        use_laef=raw.get("use_laef", True),
        use_fmiam=raw.get("use_fmiam", True),
        parallel_vssm=raw.get("parallel_vssm", True),
    )

    seed = raw.get("seed", DATA["seed"])
    base_lr = float(raw.get("learning_rate", TRAINING["learning_rate"]))
    schedule = TrainSchedule(
        total_epochs=raw.get("epochs", TRAINING["epochs"]),
        warmup_epochs=raw.get("warmup_epochs", TRAINING["warmup_epochs"]),
        base_lr=base_lr,
        min_lr=float(raw.get("min_lr", base_lr * TRAINING["min_lr_fraction"])),
        weight_decay=float(raw.get("weight_decay", TRAINING["weight_decay"])),
        patience=raw.get("patience", TRAINING["patience"]),
        batch_size=raw.get("batch_size", TRAINING["batch_size"]),
        seed=seed,
    )

    split_ratio = tuple(raw.get("split_ratio", DATA["split_ratio"]))
    if len(split_ratio) != 3 or any(part <= 0 for part in split_ratio):
        raise ConfigError("split_ratio", f"expected three positive integers, got {list(split_ratio)}")

    base_dir = base_dir or Path.cwd()
    data = labels = None
    if "data" in raw:
        data = (base_dir / raw["data"]).resolve()
        labels = (base_dir / raw["labels"]).resolve() if "labels" in raw else _default_labels(data)
        if check_paths:
            if not data.exists():
                raise ConfigError("data", f"{data} does not exist")
            if not labels.exists():
                raise ConfigError("labels", f"{labels} does not exist")
    elif "labels" in raw:
        raise ConfigError("labels", "given without 'data'")

    output_dir = Path(raw["output_dir"]) if "output_dir" in raw else default_output
    if not output_dir.is_absolute():
        output_dir = (base_dir / output_dir).resolve()
    return RunConfig(model, schedule, data, labels, output_dir, split_ratio, seed)


def parse_config_text(text: str, base_dir: Path | None = None, check_paths: bool = True,
                      default_output: Path = WORK_DIR / "run") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as error:
        raise ConfigError("<file>", f"not valid JSON: {error.msg} (line {error.lineno})")
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "the top level must be a JSON object")
    return config_from_dict(raw, text, base_dir, check_paths, default_output)


def parse_config(path: Path | str, echo: bool = False, check_paths: bool = True) -> RunConfig:
    """Relative paths inside the file are resolved against the file's directory;
    the output directory defaults to WORK_DIR/<config file stem>.
    With echo, the resolved config is written to <output_dir>/resolved_config.json.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"{path} does not exist")
    cfg = parse_config_text(path.read_text(encoding="utf-8"), path.resolve().parent, check_paths,
                            default_output=WORK_DIR / path.stem)
    cfg.source = path
    if echo:
        write_resolved_config(cfg)
    return cfg


def write_resolved_config(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    target = cfg.output_dir / "resolved_config.json"
    target.write_text(cfg.to_json(), encoding="utf-8")
    return target
