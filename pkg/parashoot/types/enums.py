from enum import Enum
"""Enumerations shared across the solver and the command line are defined here."""


class PropertyEnum(Enum):
    """Use this Enum to convert the options to a dictionary."""
    @classmethod
    def choices(cls):
        return {item.value: item.name for item in cls}


class Command(str, PropertyEnum):
    SOLVE_BOLZA = "solve-bolza"
    SOLVE_ENTIRE = "solve-entire"
    SCAN = "scan"
    COLLAPSE = "collapse"
    KEPLER_ANGLE = "kepler-angle"
    VALIDATE = "validate"
    PLOT = "plot"


class ExitCode(int, PropertyEnum):
    SUCCESS = 0
    HARD_ERROR = 1
    CONFIG_ERROR = 2
    NON_CONVERGED = 3


class LoggingLevel(str, PropertyEnum):
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"

    @classmethod
    def map_level(cls, level):
        level = level.strip().upper()
        for member in cls:
            if member.value == level:
                return member
        return None


class CrossingKind(str, PropertyEnum):
    """Direction of a ring crossing, by the sign of the radial velocity."""
    INBOUND = "inbound"
    OUTBOUND = "outbound"

    @classmethod
    def from_radial_velocity(cls, rdot):
        return cls.OUTBOUND if rdot > 0 else cls.INBOUND


class CheckStatus(str, PropertyEnum):
    PASS = "PASS"
    FAIL = "FAIL"
