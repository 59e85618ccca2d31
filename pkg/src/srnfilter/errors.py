"""Exception hierarchy shared across the package."""


class SrnFilterError(Exception):
    """Base class for all package errors."""


class ExplosionGuard(SrnFilterError):
    """Simulation exceeded the configured jump cap (runaway trajectory)."""


class EmptyMatch(SrnFilterError):
    """An observed jump is inconsistent with every reaction of the model."""


class TableGap(SrnFilterError):
    """A propensity table is missing a required (state, time) cell."""


class SizeCap(SrnFilterError):
    """A truncated state space exceeds the configured size limit."""


class StepUnstable(SrnFilterError):
    """An ODE step produced significantly negative weights (dt too large)."""


class ZeroMass(SrnFilterError):
    """An unnormalized PMF became identically zero (truncation too tight)."""


class Degenerate(SrnFilterError):
    """All particles in an ensemble carry zero weight."""


class AllUnreliable(SrnFilterError):
    """A table time slice has no reliable cells to extrapolate from."""


class MissingTable(SrnFilterError):
    """A projected reaction needs an estimated table that was not supplied."""


class UnknownModel(SrnFilterError):
    """Requested builtin model name does not exist."""


class BadParam(SrnFilterError):
    """A builtin model parameter is outside its documented range."""
