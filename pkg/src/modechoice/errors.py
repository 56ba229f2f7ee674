"""Exception hierarchy shared by the pipeline stages.

The CLI maps each class to a process exit code.
"""


class ModeChoiceError(Exception):
    exit_code = 1


class ConfigError(ModeChoiceError):
    exit_code = 2


class DataError(ModeChoiceError):
    """Malformed or inconsistent input data.

    When raised while parsing a file, ``path``, ``line`` and ``column``
    locate the offending cell.
    """

    exit_code = 3

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.detail = message


class SchemaError(DataError):
    pass


class NumericError(ModeChoiceError):
    exit_code = 4
