"""Exception types shared across the package."""


class ReadinessError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ReadinessError):
    """A data file could not be parsed into a table."""


class SchemaError(ReadinessError):
    """Metadata or an operation referenced a column/field that does not fit the table."""


class EmptyInput(ReadinessError):
    """An operation received no usable cells or rows."""


class RuleSyntaxError(ReadinessError):
    """A rule expression did not match the `<metric> <op> <number>` grammar."""


class MetricMismatch(ReadinessError):
    """A rule was evaluated against a metric value with a different name."""


class InsufficientMinority(ReadinessError):
    """Minority-class oversampling needs at least two minority rows."""


class EmptyPipeline(ReadinessError):
    """A module pipeline was run with no modules."""


class DuplicateName(ReadinessError):
    """A registry name was already taken."""


class UnknownModule(ReadinessError):
    """A module name was not found in the registry."""


class DegenerateCovariance(ReadinessError):
    """Covariance has rank zero (or too little data to estimate one)."""


class TooFewRows(ReadinessError):
    """A partition strategy would produce an empty or undefined client."""


class ConfigError(ReadinessError):
    """Experiment configuration is invalid; message carries the field path."""


class ProtocolError(ReadinessError):
    """A wire frame was malformed, oversized, or out of phase."""


class BindError(ReadinessError):
    """The server could not bind its listen address."""


class ConnectError(ReadinessError):
    """A client could not reach the server."""
