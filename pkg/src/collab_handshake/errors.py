"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class CollabError(Exception):
    pass


class ConfigError(CollabError, ValueError):
    """Invalid configuration (exit code 2)."""


class DimensionError(CollabError, ValueError):
    """Operand shapes do not conform."""


class StateError(CollabError, RuntimeError):
    pass


class FormatError(CollabError):
    """Malformed binary container or checkpoint (exit code 3)."""


class TruncatedError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ShapeError(FormatError):
    """Stored tensors disagree with the expected configuration."""


class GenerationError(CollabError):
    pass


class HandshakeTimeout(CollabError):
    def __init__(self, stage, agent):
        super().__init__(f"no response during {stage} stage from agent {agent}")
        self.stage = stage
        self.agent = agent


class UndefinedMetricError(CollabError, ValueError):
    pass


class DivergenceError(CollabError, ArithmeticError):
    """Training produced a non-finite loss (exit code 4)."""

    def __init__(self, iteration, loss):
        super().__init__(f"loss became {loss} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
