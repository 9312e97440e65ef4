"""Exception types shared across the package."""


class DmaolabError(Exception):
    """Base class for every error raised by this package."""


class InvalidShape(DmaolabError):
    pass


class InvalidConfig(DmaolabError):
    pass


class InvalidState(DmaolabError):
    pass


class InvalidInput(DmaolabError):
    pass


class NotFound(DmaolabError):
    pass


class NumericalError(DmaolabError):
    pass


class InfeasibleAlignment(DmaolabError):
    pass


class OracleTooLarge(DmaolabError):
    pass


class CorruptCheckpoint(DmaolabError):
    pass
