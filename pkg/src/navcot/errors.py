"""Exception hierarchy shared by every navcot module."""


class NavCotError(Exception):
    """Base class for all harness errors."""


# environment / data files
class ParseError(NavCotError):
    pass


class GraphInvariantError(NavCotError):
    pass


class UnknownViewpoint(NavCotError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegeneratePositions(NavCotError, ValueError):
    pass


class InvalidConfig(NavCotError, ValueError):
    pass


# observations
class EmptyCaption(NavCotError, ValueError):
    pass


class MissingCaption(NavCotError, KeyError):
    """A navigable edge has no caption. ``edge`` is (scan, from, to)."""

    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"no caption for edge {edge[1]} -> {edge[2]} in scan {edge[0]}")

    def __str__(self):
        return self.args[0]


# prompting
class MalformedOutput(NavCotError, ValueError):
    """Completion text that does not yield a usable action. Keeps the raw text."""

    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


# labels
class MalformedLandmarks(NavCotError, ValueError):
    pass


class EmptyLandmarks(NavCotError, ValueError):
    pass


class InvalidGtAction(NavCotError, ValueError):
    pass


class ProviderGap(NavCotError, LookupError):
    pass


class LabelGap(NavCotError, LookupError):
    pass


# export
class PoolTooSmall(NavCotError, ValueError):
    pass


class ExportValidationError(NavCotError):
    pass


# runtime
class BackendUnavailable(NavCotError):
    pass


class AuthError(NavCotError):
    pass


class EnvironmentGap(NavCotError):
    pass


# metrics
class MissingEpisode(NavCotError, LookupError):
    pass
