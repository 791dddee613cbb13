"""Exception hierarchy shared across the package."""


class WglinError(Exception):
    """Base class for all package errors."""


# ---- tensor engine ----

class ShapeMismatch(WglinError):
    pass


class NonFinite(WglinError):
    """A NaN or Inf was produced or consumed by the engine."""


class NotScalar(WglinError):
    pass


class DetachedTensor(WglinError):
    pass


class DegenerateOutput(WglinError):
    pass


class EmptyConcat(WglinError):
    pass


# ---- wavelet ----

class OddExtent(WglinError):
    pass


# ---- layers / model ----

class IndivisiblePatch(WglinError):
    pass


class ConfigError(WglinError):
    pass


class VariantError(WglinError):
    pass


class RangeError(WglinError):
    pass


class NonFiniteLoss(WglinError):
    pass


# ---- metrics ----

class LabelOutOfRange(WglinError):
    pass


class EmptyConfusion(WglinError):
    pass


class NoValidClass(WglinError):
    pass


# ---- persistence / data ----

class ChecksumMismatch(WglinError):
    pass


class ConfigMismatch(WglinError):
    pass


class MalformedImage(WglinError):
    pass


class ConfigParseError(WglinError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
