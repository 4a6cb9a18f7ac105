"""Exception hierarchy shared by every module."""


class MMLError(Exception):
    pass


class ShapeError(MMLError, ValueError):
    pass


class InvalidInputError(MMLError, ValueError):
    pass


class InvalidConfigError(MMLError, ValueError):
    pass


class InvalidLabelError(MMLError, ValueError):
    pass


class NoActiveHeadsError(MMLError, RuntimeError):
    pass


class InvalidTransformError(MMLError, ValueError):
    pass


class InvalidEvalError(MMLError, ValueError):
    pass


class FormatVersionError(MMLError, ValueError):
    pass
