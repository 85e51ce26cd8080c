"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code: configuration problems exit 2,
data problems exit 3 and numerical failures exit 4.
"""


class DLearnError(Exception):
    exit_code = 1


class InvalidConfig(DLearnError, ValueError):
    exit_code = 2


class InvalidMode(DLearnError, ValueError):
    """A binary-only operation received multi-arm data, or vice versa."""

    exit_code = 2


class InvalidInput(DLearnError, ValueError):
    exit_code = 3


class MissingArm(InvalidInput):
    exit_code = 3


class ParseError(InvalidInput):
    def __init__(self, row, col, message="could not parse value"):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col!r}: {message}")


class SingularDesign(DLearnError, ArithmeticError):
    exit_code = 4


class UndefinedValue(DLearnError, ArithmeticError):
    """The ratio value estimator has no matching rows (0/0)."""

    exit_code = 4
