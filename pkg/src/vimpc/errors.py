"""Exception types raised across the package."""


class VimpcError(Exception):
    """Base class for all package errors."""


class SingularPitch(VimpcError):
    """Pitch too close to +-pi/2 for the Euler-rate map to be inverted."""


class OutOfReach(VimpcError):
    """A foot target lies outside the leg's reachable shell."""

    def __init__(self, side, distance, lo, hi):
        self.side = side
        self.distance = distance
        super().__init__(
            f"{side} leg: hip-to-foot distance {distance:.6f} m outside ({lo:.6f}, {hi:.6f})"
        )


class NotPositiveDefinite(VimpcError):
    pass


class DimensionMismatch(VimpcError):
    pass


class RankDeficient(VimpcError):
    pass


class EmptyDataset(VimpcError):
    pass


class Diverged(VimpcError):
    pass


class FormatError(VimpcError):
    """Malformed weight/map file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PhaseOutOfRange(VimpcError):
    pass


class Infeasible(VimpcError):
    def __init__(self, message, row=None, violation=None):
        self.row = row
        self.violation = violation
        super().__init__(message)


class MaxIterations(VimpcError):
    def __init__(self, message, solution=None):
        self.solution = solution
        super().__init__(message)


class NumericalFailure(VimpcError):
    def __init__(self, message, solution=None):
        self.solution = solution
        super().__init__(message)


class EmptyLog(VimpcError):
    pass


class ParseError(VimpcError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(VimpcError):
    def __init__(self, key, constraint):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")
