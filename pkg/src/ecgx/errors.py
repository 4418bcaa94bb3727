"""Exception hierarchy shared across the package.

Every error the pipeline can raise on bad input derives from DataError;
numerical blow-ups during training derive from NumericError. The CLI maps
DataError to exit code 3 and NumericError to exit code 4.
"""


class EcgxError(Exception):
    pass


class DataError(EcgxError):
    pass


class NumericError(EcgxError):
    pass


# --- signal / feature-table ingestion -------------------------------------

class UnsupportedFormat(DataError):
    """Header declares a storage format other than 16."""


class CorruptRecord(DataError):
    """Sample payload inconsistent with the header, or non-finite values."""


class UnknownLead(DataError):
    """Header label does not map to one of the 12 standard leads."""


class DuplicateId(DataError):
    """Same record id appears twice in a table or manifest."""


class ParseError(DataError):
    """Non-numeric, non-empty cell in a feature CSV."""


# --- preprocessing ----------------------------------------------------------

class InvalidFilter(DataError):
    """Band edges incompatible with the sampling rate."""


class UnsupportedResample(DataError):
    """Requested rate is not an integer divisor of the record rate."""


class MissingLead(DataError):
    """Lead configuration asks for a lead the record does not carry."""


class UnfittedFeature(DataError):
    """Scaler was never fitted for the requested feature."""


# --- model ------------------------------------------------------------------

class ShapeError(DataError):
    """Input tensor incompatible with a layer; message names the layer."""


class ConfigError(DataError):
    """Model configuration invalid for the given input geometry."""


class EmptyBatch(DataError):
    """Loss requested over a batch whose mask excludes every cell."""


# --- training ---------------------------------------------------------------

class EmptyDataset(DataError):
    """No usable training rows after dropping all-missing targets."""


class UnknownFeature(DataError):
    """Requested target feature absent from the truth table."""


class NonFiniteLoss(NumericError):
    """Training loss became NaN or Inf."""


# --- grouping ---------------------------------------------------------------

class OddFeatureCount(DataError):
    """Random pairing requires an even number of features."""


class InvalidGroupSize(DataError):
    """Lead-instance group size must divide 12."""


# --- evaluation -------------------------------------------------------------

class UndefinedPcc(DataError):
    """Zero variance in one of the paired vectors."""


class InsufficientData(DataError):
    """Fewer than two complete pairs."""


class IncompleteScores(DataError):
    """Grouped averaging requires a score for every instance."""


class NoOverlap(DataError):
    """No record ids shared between the tables being compared."""
