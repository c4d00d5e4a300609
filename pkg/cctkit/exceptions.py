class CaseParseError(ValueError):
    pass


class CaseValidationError(ValueError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"Invalid case:\n{report}")


class UnknownCaseError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "Unknown case"


class NetworkError(ValueError):
    pass


class IslandingError(NetworkError):
    def __init__(self, message: str, islands: list[list[int]] | None = None):
        self.islands = islands or []
        super().__init__(message)


class SingularNetworkError(NetworkError):
    def __init__(self, message: str, buses: list[int] | None = None):
        self.buses = buses or []
        super().__init__(message)


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, mismatch: float = float("nan")):
        self.mismatch = mismatch
        super().__init__(message)


class AlgebraicCollapseError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


class InitializationError(RuntimeError):
    pass


class EventAlignmentError(ValueError):
    pass


class StabilityError(ValueError):
    pass


class InvalidBracketError(ValueError):
    pass


class SensitivityError(RuntimeError):
    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        super().__init__(message)


class ExtrapolationError(ValueError):
    pass


class ProbeInstabilityError(RuntimeError):
    def __init__(self, message: str, t_cl: float | None = None):
        self.t_cl = t_cl
        super().__init__(message)
