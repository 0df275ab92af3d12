"""Exception hierarchy. Every failure mode raised by the library has its own class."""


class FracFPError(Exception):
    """Base class for all library errors."""


# equilibria
class GammaOutOfRange(FracFPError):
    pass


class NormalizationFailure(FracFPError):
    pass


class PositivityViolation(FracFPError):
    pass


class OriginEvaluation(FracFPError):
    pass


# discretization
class InvalidGrid(FracFPError):
    pass


class DegenerateSample(FracFPError):
    pass


# eigensolver
class SingularBorderedSystem(FracFPError):
    pass


class NoConvergence(FracFPError):
    pass


class EtaZero(FracFPError):
    pass


class NewtonDiverged(FracFPError):
    pass


class LambdaOutOfDisk(FracFPError):
    pass


class FitDegenerate(FracFPError):
    pass


# limit problem
class SolveFailure(FracFPError):
    pass


class TruncationUnstable(FracFPError):
    pass


class ImaginaryResidual(FracFPError):
    pass


class QuadratureFailure(FracFPError):
    pass


class ZeroJm(FracFPError):
    pass


class RangeMismatch(FracFPError):
    pass


# propagator
class UnboundedRatio(FracFPError):
    pass


class StepCollapse(FracFPError):
    pass


class SolverFailure(FracFPError):
    pass


# monte carlo
class BlowUp(FracFPError):
    pass


class HorizonMismatch(FracFPError):
    pass


# configuration
class ConfigError(FracFPError):
    pass
