"""Exception hierarchy shared by all qcal modules."""


class QcalError(Exception):
    """Base class for every error raised by qcal."""


# runcard / plan validation
class RuncardSyntaxError(QcalError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(QcalError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnknownProtocol(QcalError):
    def __init__(self, name, suggestions=()):
        self.name = name
        self.suggestions = list(suggestions)
        msg = f"unknown protocol {name!r}"
        if self.suggestions:
            msg += f" (did you mean: {', '.join(self.suggestions)}?)"
        super().__init__(msg)


class UnknownQubit(QcalError):
    pass


class ParameterError(QcalError):
    def __init__(self, action, problems):
        self.action = action
        self.problems = dict(problems)
        details = "; ".join(f"{k}: {v}" for k, v in self.problems.items())
        super().__init__(f"{action}: {details}")


# platform
class UnknownPlatform(QcalError):
    pass


class ParameterFileError(QcalError):
    pass


class InvalidSpec(QcalError):
    pass


class InvariantViolation(QcalError):
    pass


# fitting / analysis
class FitError(QcalError):
    """An analysis step could not extract parameters from the data."""


class DimensionMismatch(FitError, ValueError):
    pass


class NoFeature(FitError):
    pass


class NoOscillation(FitError):
    pass


class NoDecay(FitError):
    pass


class FitDiverged(FitError):
    pass


class DegenerateClouds(FitError):
    pass


class PreconditionError(FitError, ValueError):
    pass


# persistence / reporting
class FormatError(QcalError):
    pass


class LayoutError(QcalError):
    pass


class NetworkError(QcalError):
    pass


class ServerRejected(QcalError):
    def __init__(self, status, body):
        self.status = status
        self.body = body
        super().__init__(f"archive rejected upload: HTTP {status}: {body}")
