"""Exception types shared across the package.

The CLI maps ``InputError`` to exit code 2 and ``VerificationError`` to
exit code 3.
"""


class InputError(ValueError):
    """Malformed, inconsistent or out-of-range user input."""


class TreeValidationError(InputError):
    """A tree violates one of the compressed cover tree conditions."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class VerificationError(AssertionError):
    """An oracle check inside verification mode failed."""


class TraversalError(RuntimeError):
    """A traversal hook raised; carries the (i, j, q) state."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state
