"""Exception hierarchy shared across the harness."""


class HarnessError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HarnessError, ValueError):
    pass


# core model
class StepError(HarnessError):
    pass


class NoStepEnabled(StepError):
    pass


class ReplicaFinal(StepError):
    pass


class NotInPool(StepError):
    pass


class EmptyInbox(StepError):
    pass


# history
class MalformedTrace(HarnessError):
    pass


class NotDelivered(HarnessError, KeyError):
    pass


# scheduler
class InvalidDepth(ConfigError):
    pass


class DuplicateMessage(HarnessError):
    pass


class UnknownPredecessor(HarnessError):
    pass


class OutOfOrderNotification(HarnessError):
    pass


# dsl / state machine
class ActionFailure(HarnessError):
    pass


class DuplicateTransitionTarget(HarnessError):
    pass


class FilterSyntaxError(HarnessError, ValueError):
    pass


# driver
class ErroredIteration(HarnessError):
    pass


class NoMatchInNormalRun(HarnessError):
    pass


# replay
class IncompleteHistory(HarnessError):
    pass


# rpc
class UnknownReplica(HarnessError):
    pass


class UnreachableReplica(HarnessError):
    pass


class BindError(HarnessError, OSError):
    pass
