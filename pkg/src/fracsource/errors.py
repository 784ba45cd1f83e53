"""Exception hierarchy. Each class carries the process exit code used by the CLI."""


class FracSourceError(Exception):
    exit_code = 1


class NonConvergent(FracSourceError, ArithmeticError):
    exit_code = 10


class ZeroFindingFailed(FracSourceError):
    exit_code = 11


class QuadratureFailure(FracSourceError):
    exit_code = 12


class TruncationWarning(UserWarning):
    """Spectral series tail is not negligible."""


class SingularSystem(FracSourceError):
    exit_code = 13


class IllConditioned(FracSourceError):
    exit_code = 14


class SelectionFailed(FracSourceError):
    exit_code = 15


class SingularIntensity(FracSourceError, ValueError):
    exit_code = 16


class OrderMismatch(FracSourceError, ValueError):
    exit_code = 17


class ConfigParseError(FracSourceError, ValueError):
    exit_code = 2


class ConfigValidationError(FracSourceError, ValueError):
    exit_code = 3

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (
        FracSourceError,
        NonConvergent,
        ZeroFindingFailed,
        QuadratureFailure,
        SingularSystem,
        IllConditioned,
        SelectionFailed,
        SingularIntensity,
        OrderMismatch,
        ConfigParseError,
        ConfigValidationError,
    )
}
