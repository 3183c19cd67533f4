"""Exception types raised across the package."""


class KGCRSError(Exception):
    """Base class for all package errors."""


class MalformedTriple(KGCRSError, ValueError):
    pass


class DuplicateTriple(KGCRSError, ValueError):
    pass


class EntityRemoved(KGCRSError, KeyError):
    pass


class DimensionMismatch(KGCRSError, ValueError):
    pass


class NoNegativeAvailable(KGCRSError, RuntimeError):
    pass


class DivergenceDetected(KGCRSError, FloatingPointError):
    pass


class EmptyCandidates(KGCRSError, ValueError):
    pass


class TargetNotCandidate(KGCRSError, ValueError):
    pass


class HistoryTooLong(KGCRSError, ValueError):
    pass


class AllActionsMasked(KGCRSError, ValueError):
    pass


class MissingLocation(KGCRSError, ValueError):
    pass


class TargetHasNoAttributes(KGCRSError, ValueError):
    pass


class ActionAlreadyAsked(KGCRSError, ValueError):
    pass


class RecommendationOutsideCandidates(KGCRSError, ValueError):
    pass


class EmptyLog(KGCRSError, ValueError):
    pass


class NoTestData(KGCRSError, ValueError):
    pass


class ParseError(KGCRSError, ValueError):
    pass


class EmptySplit(KGCRSError, ValueError):
    pass


class InvalidInput(KGCRSError, ValueError):
    pass


class CheckpointMismatch(KGCRSError, ValueError):
    """Artifact was produced under a different dataset or configuration."""
