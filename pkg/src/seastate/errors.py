"""Exception taxonomy shared by every module.

Each category carries the process exit code the CLI reports for it.
"""


class SeaStateError(Exception):
    exit_code = 5


class UsageError(SeaStateError):
    exit_code = 1


class ConfigError(SeaStateError):
    exit_code = 2


class DataError(SeaStateError):
    exit_code = 3


class GeometryError(DataError):
    """A frame, crop or image has dimensions incompatible with the request."""


class InsufficientFramesError(DataError):
    def __init__(self, message, shortfall=None):
        super().__init__(message)
        # {label: {split: missing_count}}
        self.shortfall = shortfall or {}


class LabelError(DataError):
    pass


class MappingRequiredError(DataError):
    pass


class EmptyReportError(DataError):
    pass


class AssetError(SeaStateError):
    exit_code = 4


class RuntimeFailure(SeaStateError):
    exit_code = 5


class DivergenceError(RuntimeFailure):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ProfileError(RuntimeFailure):
    pass


class ReportError(RuntimeFailure):
    pass
