"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class NotFiniteError(FloatingPointError):
    """A NaN or Inf appeared where all values must be finite."""


class DataFormatError(ValueError):
    """A file (lexicon, corpus, checkpoint, embedding container) is malformed."""


class ConfigMismatchError(ValueError):
    """A loaded checkpoint's config conflicts with what the caller expects."""


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss; carries the name of the first bad tensor."""
