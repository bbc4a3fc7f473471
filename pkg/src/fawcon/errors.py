"""Exception types shared across the engine."""


class FawconError(Exception):
    """Base class for all engine errors."""


class DimensionError(FawconError, ValueError):
    """A feature vector or parameter block has the wrong dimension."""


class DomainError(FawconError, ValueError):
    """A scalar argument lies outside its documented domain."""


class UnknownPointError(FawconError, KeyError):
    """A point id does not exist in the scene."""


class DuplicatePointError(FawconError, ValueError):
    """A point id was inserted into the global index twice."""


class FrameOrderError(FawconError, ValueError):
    """Frame indices must strictly increase across a stream."""


class ParamFormatError(FawconError, ValueError):
    """A FAWP1 parameter file is malformed."""


class FrameParseError(FawconError, ValueError):
    """A frame or manifest file is malformed.

    Carries the offending path and 1-based line number so callers can
    point at the exact input line.
    """

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")
