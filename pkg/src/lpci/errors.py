"""Exception hierarchy shared by the estimation modules."""


class LpciError(Exception):
    """Base class for all numerical failures raised by lpci."""


class EmptyWindow(LpciError):
    """No observation receives positive kernel weight."""


class Singular(LpciError):
    """A local design matrix is singular or too badly conditioned."""


class PilotSingular(Singular):
    """The global polynomial pilot regression is rank deficient."""


class LeverageOne(LpciError):
    """Some leverage value is >= 1 under an HC2/HC3 correction."""


class DegenerateBias(LpciError):
    """The estimated bias constant is (numerically) zero."""


class ZeroSe(LpciError):
    """The standard error is zero, so a t-statistic is undefined."""


class IntegrationFailure(LpciError):
    """The integrand produced non-finite values."""


class HarnessFailure(LpciError):
    """Too many Monte Carlo replications failed."""


class NoInteriorMinimum(LpciError):
    """The coverage-error objective is monotone over the search bracket."""
