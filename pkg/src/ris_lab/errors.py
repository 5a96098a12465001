class RisLabException(Exception):
    """Base exception for all lab errors."""
    pass


class ChannelException(RisLabException):
    """Exception for invalid channel-model inputs."""
    pass


class EnvironmentException(RisLabException):
    """Exception for invalid environment actions or geometry."""
    pass


class DatasetException(RisLabException):
    """Exception for trajectory files that violate the CSV schema."""
    pass


class RiskException(RisLabException):
    """Exception for invalid risk-objective arguments."""
    pass


class PolicyException(RisLabException):
    """Exception for policy network shape or cache mismatches."""
    pass


class NumericalSupportException(PolicyException):
    """Exception for log-probabilities of actions outside the policy support."""
    pass


class DivergenceException(RisLabException):
    """Exception raised when training parameters blow up."""
    pass


class EnumerationBoundException(RisLabException):
    """Exception for toy games too large to enumerate."""
    pass


class ConfigException(RisLabException):
    """Exception for invalid config or scenario files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RepoException(RisLabException):
    """Base exception for all artifact repo errors."""
    pass
