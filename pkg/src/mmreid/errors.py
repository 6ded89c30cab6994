"""Exception types raised by the public operations of this package."""


class MMReidError(Exception):
    """Base class for every package-specific error."""


# numeric primitives
class ZeroVector(MMReidError):
    """Vector norm below the representable floor; normalization undefined."""


class EmptyInput(MMReidError):
    pass


class NonFiniteEvaluation(MMReidError):
    """A probed function value came back NaN or infinite."""


class NonFinite(MMReidError):
    pass


# shapes and embedding preconditions
class DimMismatch(MMReidError):
    pass


class ShapeMismatch(MMReidError):
    pass


class NotNormalized(MMReidError):
    """Embedding expected on the unit sphere arrived off it."""


class EmptySpec(MMReidError):
    pass


# text branch
class OddCount(MMReidError):
    pass


class DegenerateColumn(MMReidError):
    """A cluster column sums to zero; target sharpening undefined."""


class TooFewSamples(MMReidError):
    pass


# training
class EmptyDataset(MMReidError):
    pass


class ModeDataMismatch(MMReidError):
    """The requested training mode needs a modality the dataset lacks."""


# retrieval evaluation
class EmptyGalleryAfterFilter(MMReidError):
    pass


class NoRelevant(MMReidError):
    pass


# dataset and checkpoint I/O
class ParseError(MMReidError):
    pass


class DuplicateId(MMReidError):
    pass


class DimInconsistent(MMReidError):
    pass


class BadSpec(MMReidError):
    pass


class IoError(MMReidError):
    pass


class VersionMismatch(MMReidError):
    pass


class ChecksumMismatch(MMReidError):
    pass
