"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/model
incompatibilities exit 2, numerical failures exit 3.
"""


class WavFormatError(ValueError):
    """A WAV file is malformed or uses an unsupported encoding."""


class BitstreamError(ValueError):
    """A compressed stream is malformed, truncated, or incompatible."""


class IncompatibleModelError(ValueError):
    """A model checkpoint and another artifact disagree on configuration."""


class NumericalError(RuntimeError):
    """A non-finite value was produced where finite math was required."""
