"""Exception hierarchy. CLI exit codes key off these classes."""


class DgError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2


class DataFormatError(DgError):
    """Malformed or inconsistent input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ReferentialError(DataFormatError):
    """A pair references an id with no ingested embedding."""


class FeatureError(DgError):
    pass


class DegenerateEmbeddingError(DgError):
    exit_code = 3


class GeometryError(DgError):
    exit_code = 3


class TrainingError(DgError):
    exit_code = 3


class ModelFormatError(DataFormatError):
    pass


class ExtractionError(DgError):
    def __init__(self, message, stderr=""):
        self.stderr = stderr
        super().__init__(message if not stderr else f"{message}\n--- stderr ---\n{stderr}")


class ExtractionTimeout(ExtractionError):
    pass
