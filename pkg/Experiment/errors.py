"""
Exceptions raised across the pipeline.

Usage errors (bad configuration, bad or missing input files, artifacts built
from another configuration) map to exit code 2 in the command line,
everything else to exit code 1.
"""


class MetaKRecError(Exception):
    """Base class of every error raised by this project."""


class UsageError(MetaKRecError):
    """The run cannot start because of what the user supplied."""


class ConfigError(UsageError):
    pass


class DataFormatError(UsageError):
    """A malformed line in an input file."""

    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class EmptyDatasetError(UsageError):
    pass


class MissingArtifactError(UsageError):
    """A file the command depends on does not exist."""

    def __init__(self, paths):
        self.paths = [str(p) for p in paths]
        super().__init__("missing: " + ", ".join(self.paths))


class ArtifactMismatchError(UsageError):
    """An artifact on disk was produced by a different configuration."""

    def __init__(self, path, expected, found):
        self.path = str(path)
        self.expected = expected
        self.found = found
        super().__init__(
            f"{path} was built with config hash {found[:12]}, "
            f"current config hashes to {expected[:12]}"
        )


class TrainingDivergedError(MetaKRecError):
    """Loss or scores became non-finite during training."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)
