"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with arguments outside its contract."""


class FormatError(ValueError):
    """A file or byte stream does not conform to its on-disk format.

    ``field`` names the offending header field or structural element so
    callers (and fuzz tests) can assert on what was rejected.
    """

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field
