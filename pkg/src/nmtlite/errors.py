"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """An operation received tensors whose shapes do not conform.

    Carries the op name and the offending shapes so callers can report
    exactly what went wrong.
    """

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = "%s: incompatible shapes %s" % (op, " vs ".join(str(s) for s in self.shapes))
        if detail:
            msg += " (%s)" % detail
        super().__init__(msg)


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, type mismatch, missing section)."""


class DataError(ValueError):
    """Corpus or vocabulary problem (missing file, bad encoding, count mismatch)."""


class NonDeterministicGraphError(RuntimeError):
    """Two forward passes of a supposedly deterministic build disagreed."""


class NonFiniteError(ArithmeticError):
    """A loss, gradient or update became NaN/Inf; message names the culprit."""
