"""Exception hierarchy shared by every confit module."""


class ConfitError(Exception):
    """Base class; the CLI turns any of these into a one-line stderr message."""

    code = "error"

    def __str__(self):
        return f"{self.code}: {super().__str__()}"


class ZeroNorm(ConfitError):
    code = "zero_norm"

    def __init__(self, message="vector norm below 1e-12", index=None):
        self.index = index
        if index is not None:
            message = f"{message} (row {index})"
        super().__init__(message)


class DimensionMismatch(ConfitError):
    code = "dimension_mismatch"


class ShapeMismatch(ConfitError):
    code = "shape_mismatch"


class ParseError(ConfitError):
    code = "parse_error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentDim(ParseError):
    code = "inconsistent_dim"


class UnknownLabel(ParseError):
    code = "unknown_label"


class InvalidSpec(ConfitError):
    code = "invalid_spec"


class InfeasibleBatch(ConfitError):
    code = "infeasible_batch"


class NoPositivePairs(ConfitError):
    code = "no_positive_pairs"


class NotNormalized(ConfitError):
    code = "not_normalized"


class NoPositive(ConfitError):
    code = "no_positive"

    def __init__(self, anchor):
        self.anchor = anchor
        super().__init__(f"anchor {anchor} has no same-label partner in batch")


class NoNegative(ConfitError):
    code = "no_negative"

    def __init__(self, anchor):
        self.anchor = anchor
        super().__init__(f"anchor {anchor} has no different-label partner in batch")


class NonFiniteLoss(ConfitError):
    code = "non_finite_loss"

    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")


class EmptyGrid(ConfitError):
    code = "empty_grid"


class MissingClass(ConfitError):
    code = "missing_class"


class DegenerateTotal(ConfitError):
    code = "degenerate_total"


class InsufficientClasses(ConfitError):
    code = "insufficient_classes"


class RankDeficient(ConfitError):
    """Carries the zero-padded coordinates so callers can fall back."""

    code = "rank_deficient"

    def __init__(self, message, coords=None):
        self.coords = coords
        super().__init__(message)


class ConfigError(ConfitError):
    code = "config_error"


class ArchitectureMismatch(ConfitError):
    code = "architecture_mismatch"
