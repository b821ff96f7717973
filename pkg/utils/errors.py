"""Exception hierarchy. The command layer maps ConfigError to exit status 2, everything else to 1."""


class MMICError(Exception):
    pass


class ShapeMismatchError(MMICError):
    def __init__(self, op: str, msg: str):
        super().__init__(f"{op}: {msg}")
        self.op = op


class NonFiniteError(MMICError):
    def __init__(self, where: str, msg: str = "non-finite values encountered"):
        super().__init__(f"{where}: {msg}")
        self.where = where


class GraphError(MMICError):
    pass


class ConfigError(MMICError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"config field '{field}': {msg}")
        self.field = field


class FormatError(MMICError):
    pass


class DatasetError(MMICError):
    pass
