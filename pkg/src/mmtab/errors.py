class MmtabError(Exception):
    """Base class for all errors raised by mmtab."""


class CsvParseError(MmtabError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class SchemaError(MmtabError):
    pass


class SchemaMismatchError(SchemaError):
    pass


class ConfigError(MmtabError):
    pass


class TrainingDiverged(MmtabError):
    def __init__(self, message, epoch=None, lr=None):
        self.epoch = epoch
        self.lr = lr
        super().__init__(f"{message} (epoch={epoch}, last lr={lr})")


class MmtabWarning(UserWarning):
    pass
