"""error types and their cli exit codes"""


class BmdFusionError(Exception):
    """base error; exit_code is what the cli returns for it"""

    exit_code = 1


class ParameterError(BmdFusionError, ValueError):
    """argument outside its allowed range"""

    exit_code = 1


class ConfigError(BmdFusionError, ValueError):
    """invalid or inconsistent configuration"""

    exit_code = 1


class SchemaError(BmdFusionError, ValueError):
    """metadata columns do not match the field spec"""

    exit_code = 2


class DataError(BmdFusionError):
    """dataset missing, unreadable or malformed"""

    exit_code = 2


class CheckpointError(DataError):
    """checkpoint missing or does not match the run config"""

    exit_code = 2


class DimensionError(BmdFusionError, ValueError):
    """tensor shapes do not agree"""

    exit_code = 3


class NumericalError(BmdFusionError, ArithmeticError):
    """non-finite value during training or evaluation"""

    exit_code = 3


def shape_mismatch(op: str, *shapes) -> DimensionError:
    """builds a DimensionError naming every shape involved"""
    joined = " vs ".join(str(tuple(s)) for s in shapes)
    return DimensionError(f"{op}: incompatible shapes {joined}")
