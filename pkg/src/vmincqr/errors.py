"""Exception hierarchy.

Every error raised by the library derives from :class:`VminError`.  The two
broad families map onto CLI exit codes: :class:`DataError` (exit 3) for bad
inputs or schemas and :class:`NumericalError` (exit 4) for fits or
calibrations that cannot produce a usable answer.
"""


class VminError(Exception):
    exit_code = 1


class DataError(VminError, ValueError):
    exit_code = 3


class NumericalError(VminError, ArithmeticError):
    exit_code = 4


class ConfigError(VminError, ValueError):
    exit_code = 2


# -- data / schema -----------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, column, where=""):
        self.column = column
        msg = f"missing column {column!r}"
        super().__init__(f"{msg} in {where}" if where else msg)


class NonNumericCell(DataError):
    def __init__(self, row, col, value):
        self.row, self.col, self.value = row, col, value
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")


class DuplicateChipId(DataError):
    def __init__(self, chip_id, row):
        self.chip_id, self.row = chip_id, row
        super().__init__(f"duplicate chip_id {chip_id!r} at row {row}")


class InvalidColumn(DataError):
    pass


class UnknownLabelKey(DataError):
    def __init__(self, key, available=()):
        self.key = key
        super().__init__(f"no label for (read point, temperature) = {key}; available: {sorted(available)}")


class SchemaMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyCalibrationSet(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TooFewColumns(DataError):
    pass


# -- configuration -----------------------------------------------------------

class InvalidConfig(ConfigError):
    pass


class AlphaOutOfRange(ConfigError):
    def __init__(self, alpha, allowed="(0, 1)"):
        self.alpha = alpha
        super().__init__(f"alpha must lie in {allowed}, got {alpha!r}")


class InvalidObjective(ConfigError):
    pass


class NonPositiveLength(ConfigError):
    pass


# -- numerical ---------------------------------------------------------------

class NonConvergence(NumericalError):
    def __init__(self, msg, loss_delta=float("nan")):
        self.loss_delta = loss_delta
        super().__init__(f"{msg} (final loss delta {loss_delta:.3e})")


class NonFiniteLoss(NumericalError):
    pass


class SingularKernel(NumericalError):
    pass


class InfiniteCorrection(NumericalError):
    def __init__(self, quantile_index, m):
        self.quantile_index, self.m = quantile_index, m
        super().__init__(
            f"conformal quantile index {quantile_index} exceeds calibration size M={m}; "
            "the finite-sample correction is infinite (add calibration samples or raise alpha)"
        )


class ZeroVariance(NumericalError):
    """Raised by r2_rmse when the target is constant; RMSE is still attached."""

    def __init__(self, rmse):
        self.rmse = rmse
        super().__init__(f"R^2 undefined for constant target (RMSE={rmse:.6g})")
