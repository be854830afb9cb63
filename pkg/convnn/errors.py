class DimensionError(Exception):
    """For tensor operands whose shapes are not compatible."""


class IndexRangeError(IndexError):
    """For gather indices that fall outside the source rows."""


class AutodiffError(Exception):
    """For misuse of the tape, such as calling backward on a non-scalar."""


class ValidationError(Exception):
    """For operator inputs that are not finite."""


class ConvNNConfigError(Exception):
    """For ConvNN operator settings that are not logically consistent."""


class CandidateError(ConvNNConfigError):
    """For neighbour candidate definitions that cannot be satisfied."""


class ConfigurationError(Exception):
    """For malformed run configuration files."""


class DatasetError(Exception):
    """For datasets that cannot be resolved or do not hold enough records."""


class DatasetFormatError(DatasetError):
    """For dataset or tensor files whose byte layout is malformed."""


class CheckpointError(Exception):
    """For problems related to saving and loading checkpoint directories."""


class VerificationError(Exception):
    """For property suites that cannot be found or run."""
