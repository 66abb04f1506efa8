class NetexpError(Exception):
    pass


class ConfigError(NetexpError):
    pass


class DataError(NetexpError):
    pass


class NumericalError(NetexpError):
    pass


class SizeGuardError(NumericalError):
    def __init__(self, size: int, cap: int) -> None:
        super().__init__(f"Problem size {size} exceeds the configured cap of {cap}")
        self.size = size
        self.cap = cap


class UnsupportedPropensityError(ConfigError):
    pass


class SimulationError(NumericalError):
    def __init__(self, message: str, draw: int, seed: int) -> None:
        super().__init__(f"Draw {draw} (seed {seed}) failed: {message}")
        self.draw = draw
        self.seed = seed


class RankDeficientError(NumericalError):
    def __init__(self, message: str, column: str) -> None:
        super().__init__(message)
        self.column = column


class NetexpWarning(UserWarning):
    pass
