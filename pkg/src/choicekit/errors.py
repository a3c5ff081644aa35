"""Exception taxonomy shared by all choicekit modules."""


class ChoicekitError(Exception):
    """Base class for all errors raised by choicekit."""


class StructuralError(ChoicekitError):
    """Shapes or dimensions do not conform (programming error in the caller)."""


class DomainError(ChoicekitError):
    """Inputs are structurally fine but outside the mathematical domain."""


class UsageError(ChoicekitError):
    """An API was driven in an unsupported order (e.g. backward before forward)."""


class IngestionError(ChoicekitError):
    """A raw data file could not be parsed; message names row and column."""


class ConfigError(ChoicekitError):
    """A configuration value or combination is invalid."""


class TrainingError(ChoicekitError):
    """Training aborted; message carries epoch/batch/loss diagnostics."""
