"""Exception types shared across the toolkit."""


class DetoxError(Exception):
    """Base class for all toolkit errors."""


class MalformedRecord(DetoxError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingVariant(DetoxError):
    pass


class MissingAnnotation(DetoxError):
    pass


class InsufficientData(DetoxError):
    pass


class TranslationFailed(DetoxError):
    pass


class SequenceTooLong(DetoxError):
    pass


class NonFiniteLoss(DetoxError):
    pass


class ShapeMismatch(DetoxError):
    pass


class MissingComponent(DetoxError):
    pass


class EmptySequence(DetoxError):
    pass


class EmptySplit(DetoxError):
    pass


class CorruptModelFile(DetoxError):
    pass


class VocabMismatch(DetoxError):
    pass


class EmptyLexicon(DetoxError):
    pass


class EmptyInput(DetoxError):
    pass


class LengthMismatch(DetoxError):
    pass


class InsufficientOutputs(DetoxError):
    pass
