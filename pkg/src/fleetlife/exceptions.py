"""Exception hierarchy shared by every fleetlife module."""


class FleetlifeError(Exception):
    """Base class for all errors raised by fleetlife."""


class DataError(FleetlifeError):
    """Input data violates a structural or domain constraint."""


class SchemaError(DataError):
    """A required CSV column is missing."""


class EmptyInputError(DataError):
    """An input file or dataset holds no records."""


class RowParseError(DataError):
    """One or more CSV rows could not be parsed.

    ``rows`` holds ``(row_number, message)`` pairs, with row numbers counted
    from 1 at the first data line.
    """

    def __init__(self, rows):
        self.rows = list(rows)
        preview = "; ".join(f"row {r}: {m}" for r, m in self.rows[:10])
        more = f" (+{len(self.rows) - 10} more)" if len(self.rows) > 10 else ""
        super().__init__(f"{len(self.rows)} unparseable row(s): {preview}{more}")


class EmptyResultError(DataError):
    """An operation removed every record."""


class EmptyRiskSetError(DataError):
    """No subject is at risk at the start of a prediction window."""


class ParameterError(FleetlifeError, ValueError):
    """A configuration or hyperparameter value is invalid."""


class DegenerateFeatureError(FleetlifeError):
    """A covariate has zero variance, so its coefficient is not identifiable."""

    def __init__(self, feature):
        self.feature = feature
        super().__init__(f"feature {feature!r} has zero variance")


class SeparationError(FleetlifeError):
    """Monotone likelihood: coefficients diverge towards infinity."""


class ConvergenceError(FleetlifeError):
    """An optimizer stopped before reaching its tolerance."""

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class DimensionError(FleetlifeError, ValueError):
    """A feature vector does not match the fitted model's dimension."""


class DomainError(FleetlifeError, ValueError):
    """A probability or time argument falls outside its valid domain."""


class ConditioningError(DomainError):
    """Conditioning on an event of probability zero (S(i) = 0)."""


class InsufficientDataError(FleetlifeError):
    """Too few usable observations for the requested fit."""


class UnfittableParametersError(ParameterError):
    """Hyperparameters cannot be satisfied by the training data."""


class UndefinedMetricError(DomainError):
    """A metric denominator is zero."""


class SearchError(FleetlifeError):
    """Every grid point of a hyperparameter search failed."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


class LeakError(FleetlifeError):
    """A training set holds information from after its window's cutoff."""
