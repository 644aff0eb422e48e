"""Exception types raised across the package."""


class CrowdloopError(Exception):
    """Base class for all errors raised by this package."""


# -- dataset store ----------------------------------------------------------

class BadMagic(CrowdloopError):
    """Feature file does not start with the expected magic/version header."""


class TruncatedFile(CrowdloopError):
    """Feature file ends before the header-declared payload."""


class NonFiniteValue(CrowdloopError):
    """A loaded or generated array contains NaN or infinity."""


class SchemaError(CrowdloopError):
    """A document violates its schema; the message carries the field path."""


class GroupOverlap(CrowdloopError):
    """Class groups overlap or do not partition the class set."""


class UnknownClassIndex(CrowdloopError):
    """An item refers to a class index outside the label set."""


class InvalidParam(CrowdloopError):
    """A generation parameter is out of its documented domain."""


class TooFewPrototypes(CrowdloopError):
    """A class has fewer than two prototypes and cannot be split."""


# -- truth inference --------------------------------------------------------

class ZeroPosterior(CrowdloopError):
    """All classes received zero posterior mass for some annotated item."""


class EmptyLog(CrowdloopError):
    """An operation requiring annotations was given an empty log."""


# -- learner ----------------------------------------------------------------

class EmptyTrainSet(CrowdloopError):
    """fit() was called with no training items."""


class EmptyValidationSet(CrowdloopError):
    """Calibration or selection was given an empty validation set."""


# -- worker simulation ------------------------------------------------------

class EmptyBank(CrowdloopError):
    """The skill bank holds no worker matrices for a required group."""


class UnknownClass(CrowdloopError):
    """A target class is not present in the skill bank's class universe."""


class InvalidGroups(CrowdloopError):
    """Groups passed to the bank generator do not partition the classes."""


# -- task assignment --------------------------------------------------------

class NoEligibleWorker(CrowdloopError):
    """Every worker is excluded for an item (already annotated it or capped)."""


# -- metrics ----------------------------------------------------------------

class MissingTruth(CrowdloopError):
    """A truth-dependent metric was requested without ground-truth labels."""


class EmptyFinishedSet(CrowdloopError):
    """finished-set precision is undefined when no item is finished."""


class IoError(CrowdloopError):
    """Wraps OS-level failures while emitting report files."""
