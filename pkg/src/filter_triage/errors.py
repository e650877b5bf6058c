"""Exception taxonomy shared by all modules."""


class FilterTriageError(Exception):
    """Base class for all library errors."""


class ConfigurationError(FilterTriageError):
    """A spec, architecture or mask is internally inconsistent."""


class UsageError(FilterTriageError):
    """An operation was called in a way its contract forbids."""


class InputError(FilterTriageError):
    """Caller-supplied data violates a precondition (bad label, empty set, ...)."""


class NumericError(FilterTriageError):
    """A forward/backward pass produced NaN or Inf."""


class FormatError(FilterTriageError):
    """A serialized artifact (checkpoint, dataset file, config) is malformed."""


class CapabilityError(FilterTriageError):
    """The requested mode exists but is outside this implementation's limits."""
