"""Exception types mapped onto CLI exit codes."""


class ValidationError(ValueError):
    """Input data, design, or configuration fails a documented contract."""


class MissingInputError(FileNotFoundError):
    """A referenced input file or directory does not exist."""


class ChainStateError(RuntimeError):
    """Sampler state became invalid (non-finite) or a chain is unreadable."""
