"""Exception types shared across the package."""


class DataFormatError(Exception):
    """A file or in-memory structure violates one of the binary/CSV/JSON contracts."""


class NumericError(Exception):
    """A computation produced non-finite values that would otherwise propagate silently."""


class FingerprintMismatch(DataFormatError):
    """An index was built against a different encoder than the one supplied."""
