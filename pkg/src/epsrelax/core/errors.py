from __future__ import annotations


class EpsRelaxError(RuntimeError):
    pass


class NumericalError(EpsRelaxError):
    pass


class GuardRegularityError(EpsRelaxError):
    pass


class TransversalityViolation(EpsRelaxError):
    pass


class DegenerateSliding(EpsRelaxError):
    pass


class ZenoSuspected(EpsRelaxError):
    pass


class LineSearchFailure(EpsRelaxError):
    pass


class InsufficientDecay(EpsRelaxError):
    pass


class AuditFailed(EpsRelaxError):
    pass


class TaskInfeasibleGrid(EpsRelaxError):
    pass


class ConfigError(EpsRelaxError, ValueError):
    pass
