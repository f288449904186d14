"""Exception types shared across the package."""


class BoltwatchError(Exception):
    pass


class InvalidParameter(BoltwatchError, ValueError):
    pass


class OutOfBounds(BoltwatchError, IndexError):
    pass


class DegenerateInput(BoltwatchError, ValueError):
    pass


class EstimationFailure(BoltwatchError, RuntimeError):
    pass


class InvalidConfig(BoltwatchError, ValueError):
    pass


class UndefinedMetric(BoltwatchError, ValueError):
    """Accuracy requested against a ground truth of (numerically) zero."""


class FrameReadError(BoltwatchError, OSError):
    def __init__(self, index, path, reason=""):
        self.index = index
        self.path = path
        super().__init__(f"cannot read frame {index} ({path}) {reason}".strip())
