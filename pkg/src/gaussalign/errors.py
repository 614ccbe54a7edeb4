"""Exception hierarchy shared by all gaussalign modules."""


class GaussAlignError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GaussAlignError):
    """Malformed in-memory input: bad shape, non-finite entries, bad indices."""


class ConfigError(GaussAlignError):
    """Invalid configuration value or an option inconsistent with the data."""


class SizeLimitError(ConfigError):
    """Input exceeds a hard size guard (e.g. factorial enumeration limits)."""


class NumericalError(GaussAlignError):
    """Numerical failure: divergence, overflow, or a factorization that did
    not converge. Carries whatever diagnostics the failing routine had."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = dict(diagnostics)


class ParseError(GaussAlignError):
    """File could not be parsed. Always carries path and 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class ConsistencyError(GaussAlignError):
    """Two files that must agree (e.g. parallel mean/variance files) diverge."""


class ValidationError(GaussAlignError):
    """Parsed content violates a domain invariant (e.g. nonpositive variance)."""


class EvaluationError(GaussAlignError):
    """Evaluation cannot proceed (e.g. no lexicon entry resolves in-vocabulary)."""
