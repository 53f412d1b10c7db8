class PacketError(Exception):
    """Base class for errors raised by packetnet."""


class ConfigurationError(PacketError, ValueError):
    pass


class TrainingError(PacketError, ArithmeticError):
    """Numerical failure during an online update."""

    def __init__(self, message, instance=None, feature=None):
        self.instance = instance
        self.feature = feature
        where = []
        if feature is not None:
            where.append(f"feature {feature}")
        if instance is not None:
            where.append(f"instance {instance}")
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))


class CapacityError(PacketError):
    """The drop policy could not bring the pool under its limit."""


class ParseError(PacketError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
