"""Exception hierarchy shared by every relatt module."""


class RelattError(Exception):
    """Base class for all toolkit errors."""


class ParseError(RelattError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class EmptyGraphError(RelattError):
    pass


class CoverageError(RelattError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(self.missing[:20])
        more = "" if len(self.missing) <= 20 else f" (+{len(self.missing) - 20} more)"
        super().__init__(f"missing feature rows for entities: {shown}{more}")


class DimensionError(RelattError):
    pass


class ConfigError(RelattError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class SamplingError(RelattError):
    pass


class SplitError(RelattError):
    pass


class ContractError(RelattError):
    """Shape or precondition violation in a numeric or model operation."""


class NumericError(RelattError):
    def __init__(self, op, message="non-finite value produced"):
        self.op = op
        super().__init__(f"{op}: {message}")


class TrainingError(RelattError):
    def __init__(self, epoch, message):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class VocabularyError(RelattError):
    pass


class ModeError(RelattError):
    pass


class SimilarityError(RelattError):
    pass
