"""Exception types shared across the toolkit."""


class IlpkitError(Exception):
    """Base class for all toolkit errors."""


class SingularMetric(IlpkitError):
    """The metric tensor is not invertible to working precision."""


class DimensionMismatch(IlpkitError):
    """An array argument has an incompatible shape."""


class RankDeficiencyAmbiguous(IlpkitError):
    """No clear spectral gap separates the range of the cometric from its kernel."""


class ChartEscape(IlpkitError):
    """A geodesic or flow iterate left the chart (became non-finite)."""


class NonFiniteState(IlpkitError):
    """An integration or simulation produced NaN or infinite state."""


class ZeroVelocity(IlpkitError):
    """A tracking-state operation was given a zero velocity vector."""


class ConfigError(IlpkitError):
    """An experiment configuration file is invalid.

    Carries optional ``section``, ``key`` and ``line`` attributes for
    diagnostics.
    """

    def __init__(self, message, *, section=None, key=None, line=None):
        loc = []
        if section is not None:
            loc.append("[%s]" % section)
        if key is not None:
            loc.append("key %r" % key)
        if line is not None:
            loc.append("line %d" % line)
        if loc:
            message = "%s (%s)" % (message, ", ".join(loc))
        super().__init__(message)
        self.section = section
        self.key = key
        self.line = line
