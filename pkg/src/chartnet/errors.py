"""Exception types raised across the package."""


class ChartNetError(Exception):
    pass


class InfeasibleConstraints(ChartNetError):
    pass


class InvalidSpec(ChartNetError):
    pass


class TemplateInapplicable(ChartNetError):
    pass


class UnansweredComposite(TemplateInapplicable):
    """A composite filter selected no element."""


class IoFailure(ChartNetError):
    pass


class MissingImage(ChartNetError):
    pass


class CorruptManifest(ChartNetError):
    pass


class ShapeMismatch(ChartNetError, ValueError):
    pass


class EmptyQuestion(ChartNetError, ValueError):
    pass


class KindMismatch(ChartNetError, ValueError):
    pass


class DegenerateBox(ChartNetError, ValueError):
    pass


class VocabMismatch(ChartNetError):
    pass


class NonFiniteLoss(ChartNetError):
    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


class NonFiniteGradient(ChartNetError):
    pass
