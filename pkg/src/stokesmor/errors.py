"""Exception hierarchy shared by all stokesmor modules."""


class StokesMORError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(StokesMORError, ValueError):
    """Malformed or out-of-range input (radii, options, schema violations)."""


class OverlapError(InvalidInputError):
    """Requested geometry would produce overlapping particles."""


class SeparationError(InvalidInputError):
    """Particles are disjoint but not theta-separated for any theta > 1 (touching)."""


class GenerationFailedError(StokesMORError):
    """Random placement exhausted its retry budget."""

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved


class SingularEvaluationError(StokesMORError, ValueError):
    """Evaluation requested at a point-force singularity."""


class OnSurfaceError(StokesMORError, ValueError):
    """Gradient requested on a source sphere surface, where it jumps."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class QuadratureOrderError(StokesMORError, ValueError):
    """Quadrature rule below the documented accuracy floor."""


class IllConditionedError(StokesMORError):
    """Collocation basis too ill-conditioned for the requested degree."""


class DivergenceError(StokesMORError):
    """Iteration blew up; the partial report is attached for post-mortem."""

    def __init__(self, message, report=None, field=None):
        super().__init__(message)
        self.report = report
        self.field = field


class ConvergenceError(StokesMORError):
    """Eigenvalue iteration did not settle within its budget."""

    def __init__(self, message, last_values=None):
        super().__init__(message)
        self.last_values = last_values


class NormalizationError(StokesMORError, ValueError):
    """A normalizing quantity vanished (e.g. zero ambient strain)."""


class ConfigMismatchError(StokesMORError, ValueError):
    """Two fields or reports refer to different particle configurations."""


class ParseError(InvalidInputError):
    """Input text is not valid JSON; carries the 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class OutputError(StokesMORError, OSError):
    """Reading or writing a file failed; the message names the path."""
