class BankerWalkError(Exception):
    pass


class SingularSystem(BankerWalkError):
    """The environment chain is not irreducible, so the linear system is rank deficient."""


class NoDoeblinPower(BankerWalkError):
    """No power P^m with m <= N^2 has all entries strictly positive."""


class NotCentered(BankerWalkError):
    """Right-hand side of the Poisson equation has nonzero mean under mu."""


class OutOfDomain(BankerWalkError):
    """A point outside the closed unit hypercube was passed to a reflected quantity."""


class KernelError(BankerWalkError):
    """Kernel specification violates positivity or normalisation."""


class ConfigError(BankerWalkError):
    """Experiment configuration could not be parsed or validated."""
