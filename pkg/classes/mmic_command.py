import logging
from abc import ABC, abstractmethod
from argparse import ArgumentParser, Namespace, RawDescriptionHelpFormatter as RDF
from typing import Callable, Iterator

from distributed import LocalCluster

from mmic00_settings import DEBUG, N_THREADS
from utils.config import RunConfig
from utils.dataset import DatasetIndex, load_dataset, split_dataset
from utils.errors import ConfigError, DatasetError, MMICError
from utils.utils import scream

logger = logging.getLogger(__name__)

MAX_CPUS = 32


def configure_logging():
    logging.basicConfig(level=logging.DEBUG if DEBUG else logging.INFO,
                        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s")


def iter_jobs(job: Callable, items: list, n_cpus: int = 1, **other_args) -> Iterator:
    """Yields job(item, **other_args) for every item, in input order, as soon as it is available.
    With more than one cpu the items go to local worker processes.
    """
    if n_cpus <= 1 or len(items) <= 1:
        for item in items:
            yield job(item, **other_args)
        return
    cluster = LocalCluster(n_workers=min(n_cpus, len(items)), processes=True, threads_per_worker=1)
    dask_client = cluster.get_client()
    try:
        for future in dask_client.map(job, items, pure=False, **other_args):
            yield future.result()
    finally:
        dask_client.close()
        cluster.close()


class MMICCommand(ABC):
    """One subcommand: builds its parser, runs, and turns failures into exit statuses
    (0 success, 1 runtime failure, 2 usage or configuration error).
    """

    name: str = "mmic_command"
    description: str = "Description not provided."

    def __init__(self):
        self.parser: ArgumentParser | None = None
        self.args: Namespace | None = None

    @abstractmethod
    def add_arguments(self, parser: ArgumentParser):
        pass

    @abstractmethod
    def execute(self) -> int:
        pass

    def create_parser(self, prog: str | None = None) -> ArgumentParser:
        self.parser = ArgumentParser(prog=prog or self.name, description=self.description, formatter_class=RDF)
        self.add_arguments(self.parser)
        return self.parser

    def add_cpu_argument(self, parser: ArgumentParser):
        parser.add_argument("-n", "--n-cpus", dest="n_cpus", type=int, default=N_THREADS,
                            help=f"Will run one worker process per cpu. Default: {N_THREADS} (MMIC_THREADS).")

    def argv_parse(self, argv: list[str]) -> Namespace:
        self.args = self.parser.parse_args(argv)
        n_cpus = getattr(self.args, "n_cpus", 1)
        if not 1 <= n_cpus <= MAX_CPUS:
            self.parser.error(f"{n_cpus} is not a reasonable number of cpus (1..{MAX_CPUS})")
        return self.args

    def run(self, argv: list[str], prog: str | None = None) -> int:
        self.create_parser(prog)
        try:
            self.argv_parse(argv)
        except SystemExit as exit_request:
            return exit_request.code if isinstance(exit_request.code, int) else 2
        try:
            return self.execute()
        except SystemExit as exit_request:
            return exit_request.code if isinstance(exit_request.code, int) else 1
        except ConfigError as error:
            scream(str(error))
            return 2
        except MMICError as error:
            scream(f"{self.name}: {error}")
            return 1
        except Exception as error:
            logger.exception(f"{self.name} failed")
            scream(f"{self.name}: unexpected failure: {error}")
            return 1


def prepare_data(cfg: RunConfig) -> DatasetIndex:
    """Loads and splits the dataset named by a RunConfig, checking it against the model geometry."""
    cfg.require_data()
    index = load_dataset(cfg.data, cfg.labels, cfg.model.num_classes, cfg.model.in_channels)
    expected = (cfg.model.input_size, cfg.model.input_size, cfg.model.in_channels)
    if index.image_shape != expected:
        raise DatasetError(f"images are {index.image_shape}, the model expects {expected}")
    return split_dataset(index, cfg.split_ratio, cfg.seed)
