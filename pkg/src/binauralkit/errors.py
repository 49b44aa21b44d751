import click


class WorkbenchError(click.ClickException):
    """A validation or numerical failure. Exits with code 1."""

    exit_code = 1


class SignalError(WorkbenchError):
    pass


class GeometryError(WorkbenchError):
    pass


class DegenerateSourceError(WorkbenchError):
    pass


class SolverError(WorkbenchError):
    pass


class LossError(WorkbenchError):
    pass


class MetricError(WorkbenchError):
    pass


class TrainingError(WorkbenchError):
    pass


class StorageError(click.ClickException):
    """A file could not be read, written or parsed. Exits with code 2."""

    exit_code = 2
