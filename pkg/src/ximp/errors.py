"""Exception types raised across the package."""


class XimpError(Exception):
    """Base class for all package errors."""


class SmilesError(XimpError, ValueError):
    """Base class for SMILES parse failures."""


class UnsupportedFeature(SmilesError):
    pass


class UnbalancedRingClosure(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class ValenceViolation(SmilesError):
    pass


class InvalidResolution(XimpError, ValueError):
    pass


class InvalidRadius(XimpError, ValueError):
    pass


class InvalidWidth(XimpError, ValueError):
    pass


class ShapeMismatch(XimpError, ValueError):
    pass


class NonFiniteValue(XimpError, FloatingPointError):
    pass


class MissingGradient(XimpError):
    pass


class MissingEdgeFeature(XimpError, ValueError):
    pass


class ConfigError(XimpError, ValueError):
    pass


class NonFiniteLoss(XimpError, FloatingPointError):
    pass


class MissingColumn(XimpError, ValueError):
    pass


class EmptyDataset(XimpError, ValueError):
    pass


class IoError(XimpError, OSError):
    pass


class TooFewRecords(XimpError, ValueError):
    pass


class DegenerateSplit(XimpError, ValueError):
    pass


class IncompleteTable(XimpError, ValueError):
    pass


class VersionMismatch(XimpError, ValueError):
    pass
