"""Exception hierarchy shared by every layer of the simulator."""


class InSituError(Exception):
    """Base class for all simulator errors."""


class ParseError(InSituError):
    pass


class ValidationError(InSituError):
    pass


class UnknownNode(InSituError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DeadlockDetected(InSituError):
    """Raised when every live actor is blocked and no event is pending.

    ``blocked`` maps an actor description to what it waits on.
    """

    def __init__(self, blocked):
        self.blocked = dict(blocked)
        lines = ", ".join(f"{who} waiting on {what}" for who, what in self.blocked.items())
        super().__init__(f"deadlock: {len(self.blocked)} blocked actor(s): {lines}")


class DuplicateName(InSituError):
    pass


class QueueClosed(InSituError):
    pass


class ConfigError(InSituError):
    pass


class CountMismatch(InSituError):
    pass


class InvalidCoreCount(InSituError):
    pass


class DegenerateInput(InSituError):
    pass


class MalformedTrace(InSituError):
    pass


class InfeasibleScenario(InSituError):
    pass
