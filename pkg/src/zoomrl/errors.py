"""Exception types shared across the package.

Every error carries a stable machine-readable ``code`` so callers (and the
CLI exit-code mapping) can dispatch without string-matching messages.
"""


class ZoomRLError(Exception):
    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class InvalidInputBox(ZoomRLError):
    code = "INVALID_INPUT_BOX"


class FrameTooSmall(ZoomRLError):
    code = "FRAME_TOO_SMALL"


class DimensionMismatch(ZoomRLError):
    code = "DIMENSION_MISMATCH"


class MalformedPPM(ZoomRLError):
    code = "MALFORMED_PPM"


class PlacementFailure(ZoomRLError):
    code = "PLACEMENT_FAILURE"


class MalformedRecord(ZoomRLError):
    code = "MALFORMED_RECORD"

    def __init__(self, message: str = "", line: int = -1):
        super().__init__(message)
        self.line = line


class EmptyHistory(ZoomRLError):
    code = "EMPTY_HISTORY"


class ShapeMismatch(ZoomRLError):
    code = "SHAPE_MISMATCH"


class NonFiniteCost(ZoomRLError):
    code = "NON_FINITE_COST"


class KindTaskMismatch(ZoomRLError):
    code = "KIND_TASK_MISMATCH"


class NoJsonFound(ZoomRLError):
    code = "NO_JSON_FOUND"


class BadShape(ZoomRLError):
    code = "BAD_SHAPE"


class NoBoxedAnswer(ZoomRLError):
    code = "NO_BOXED_ANSWER"


class BadLetter(ZoomRLError):
    code = "BAD_LETTER"


class MisalignedLogs(ZoomRLError):
    code = "MISALIGNED_LOGS"


class NotFound(ZoomRLError):
    code = "NOT_FOUND"


class ConfigInvalid(ZoomRLError):
    code = "CONFIG_INVALID"


class NonFiniteGradient(ZoomRLError):
    code = "NON_FINITE_GRADIENT"
