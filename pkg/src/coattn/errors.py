"""Exception hierarchy shared across the package."""


class CoAttnError(Exception):
    """Base class for all library errors."""


class DimensionError(CoAttnError, ValueError):
    pass


class ConfigurationError(CoAttnError, ValueError):
    pass


class ContractError(CoAttnError, ValueError):
    """An operation's precondition was violated by its caller."""


class DegenerateInputError(CoAttnError, ValueError):
    """Zero-norm vectors and similar inputs with no meaningful answer."""


class FormatError(CoAttnError, ValueError):
    """A file does not follow its binary or text layout."""


class ValidationError(CoAttnError, ValueError):
    """A structurally valid file whose contents are inconsistent."""


class TrainingAborted(CoAttnError, RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}; training aborted")
        self.step = step
        self.loss = loss
