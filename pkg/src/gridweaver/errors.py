"""Exception hierarchy shared across gridweaver modules.

Three branches matter to callers (and to the CLI exit-code contract):
input problems, infeasible optimization models, and algorithms that ran
but did not converge.
"""


class GridweaverError(Exception):
    """Base class for all gridweaver exceptions."""


class InputError(GridweaverError):
    """Malformed files, schemas, configs, or operation arguments."""


class InfeasibleError(GridweaverError):
    """An optimization model was proven infeasible."""


class ConvergenceError(GridweaverError):
    """An iterative algorithm hit its cap before reaching its tolerance."""


class InternalModelError(GridweaverError):
    """A builder produced output violating its own invariants (a bug)."""
