from pathlib import Path, PurePath

from utils.errors import FormatError

BEST_CHECKPOINT = "best"
INTERRUPTED_CHECKPOINT = "interrupted"
CHECKPOINT_TYPE = "mmic"


def construct_run_filepath(output_dir: Path | str, name_stem: str, filetype: str, should_exist: bool = False) -> Path:
    """Creates the conventional name for a file produced by a run.
    :param output_dir: Path | str
        The run output directory (RunConfig.output_dir)
    :param name_stem: str
        The name stem. (E.g. 'best', 'history', or 'ablation'.)
    :param filetype: str
        The file type (not checked; e.g. 'mmic', 'csv', or 'txt')
    :param should_exist:
        Specify whether the file should already exist, or if we want to create a new one.
        In the latter case the output directory will be created if it does not exist.
    :return: Path
    """
    output_dir = Path(output_dir)
    file_path = Path(PurePath(output_dir, f"{name_stem}.{filetype}"))
    if should_exist:
        if not output_dir.is_dir():
            raise FormatError(f"Directory {output_dir} not found.")
        if not file_path.exists():
            raise FormatError(f"Directory {output_dir} found, however the file {file_path.name} not found therein.")
    else:
        output_dir.mkdir(parents=True, exist_ok=True)
    return file_path


def checkpoint_path(output_dir: Path | str, name_stem: str = BEST_CHECKPOINT, should_exist: bool = False) -> Path:
    return construct_run_filepath(output_dir, name_stem, CHECKPOINT_TYPE, should_exist)


def original_2_aux_file_path(original_file: Path | str, aux_extension: str) -> Path:
    original_file = Path(original_file)
    return original_file.parent / (original_file.stem + aux_extension)
