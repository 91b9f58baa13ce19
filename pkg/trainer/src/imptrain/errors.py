"""Error taxonomy for the trainer glue."""


class TrainerError(Exception):
    """Base class for all trainer failures."""


class ManifestError(TrainerError):
    """The manifest file is unreadable, malformed, or violates an invariant."""


class DatasetError(TrainerError):
    """The dataset file is missing, malformed, or empty."""


class ModelError(TrainerError):
    """The requested base model cannot be built."""


class DivergenceError(TrainerError):
    """Training produced a non-finite loss."""
