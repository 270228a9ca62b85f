"""Exception types shared across the package."""


class NeuralGroupActionError(Exception):
    """Base class for all errors raised by this package."""


class AxiomViolation(NeuralGroupActionError):
    """A Cayley table failed one of the group axioms.

    ``axiom`` is one of ``"closure"``, ``"identity"``, ``"inverse"``,
    ``"associativity"``; ``witness`` holds the offending element indices.
    """

    def __init__(self, axiom, witness, message=None):
        self.axiom = axiom
        self.witness = tuple(witness)
        super().__init__(message or f"{axiom} axiom violated at {self.witness}")


class UnknownGroup(NeuralGroupActionError):
    pass


class UnknownElement(NeuralGroupActionError):
    pass


class InvalidAction(NeuralGroupActionError):
    pass


class DimensionMismatch(NeuralGroupActionError, ValueError):
    pass


class DimensionTooLarge(NeuralGroupActionError, ValueError):
    pass


class NonFiniteLoss(NeuralGroupActionError):
    """Training diverged. ``history`` holds the per-epoch losses seen so far."""

    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(message)


class ClosureTooLarge(NeuralGroupActionError):
    pass


class NotIsomorphicToExpectedGroup(NeuralGroupActionError):
    pass
