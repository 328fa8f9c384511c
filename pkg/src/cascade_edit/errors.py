"""Exception types. Each carries the process exit code the CLI maps it to."""


class CascadeEditError(Exception):
    exit_code = 1


class InvalidArgument(CascadeEditError, ValueError):
    exit_code = 2


class DependencyError(CascadeEditError):
    """A stage was asked to run before a checkpoint it depends on exists."""

    exit_code = 3


class TrainingDivergence(CascadeEditError, RuntimeError):
    exit_code = 4


class DataIOError(CascadeEditError, OSError):
    exit_code = 5
