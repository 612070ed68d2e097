"""Exception hierarchy shared by all fairpart modules."""


class FairPartError(Exception):
    """Base class for every error raised by fairpart."""


class DataError(FairPartError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A CSV row or value could not be parsed."""


class EmptyGroup(DataError):
    """Some demographic group has zero total population."""


class UnknownSite(DataError, KeyError):
    """A site id is missing from a cost table."""


class DimensionMismatch(DataError):
    """Array or table shapes disagree."""


class ZeroDensity(DataError):
    """The total population density vanishes at the queried location."""


class ConfigError(FairPartError):
    """A run configuration is invalid."""


class NonFinite(FairPartError):
    """An iterate became NaN or infinite."""


class Infeasible(FairPartError):
    """A linear program reported infeasibility."""
