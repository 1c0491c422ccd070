"""Exception types shared across the package.

Every error raised by this package derives from :class:`HgcError`, so the
service layer can map them onto structured HTTP responses uniformly.
"""


class HgcError(Exception):
    """Base class for all package errors."""


class ParseError(HgcError):
    """Malformed taxonomy or config file syntax."""


class ValidationError(HgcError):
    """Structurally invalid taxonomy (orphans, duplicates, level mismatch)."""


class ShapeError(HgcError):
    """Array dimensions do not conform to the operation's contract."""


class FormatError(HgcError):
    """Binary file has a bad magic, version, or kind."""


class EmptyClassError(HgcError):
    """One or more leaf classes have zero training images."""

    def __init__(self, class_names):
        self.class_names = list(class_names)
        super().__init__(f"classes without training images: {', '.join(self.class_names)}")


class EmptyInputError(HgcError):
    """An operation that needs at least one row received none."""


class NormalizationError(HgcError):
    """A zero-norm row cannot be L2-normalized."""


class ProbError(HgcError):
    """A probability vector is invalid (negative mass, wrong total, zero at target)."""


class StateError(HgcError):
    """Operation requires cached state that is not present."""


class RangeError(HgcError):
    """Scalar argument outside its documented range."""


class NaNError(HgcError):
    """Non-finite values appeared in parameters; training is aborted."""


class DataError(HgcError):
    """Dataset inconsistent with the taxonomy or otherwise unusable."""
