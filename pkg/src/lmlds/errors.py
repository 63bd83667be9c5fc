"""Exception types shared across the package."""


class IncompatibleLengthError(ValueError):
    """Tube length is not accepted by the requested transform."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed inside an inference or fitting routine.

    ``step`` is the 0-based time index, ``iteration`` the EM iteration and
    ``slice_index`` the transform-domain slice, when known.
    """

    def __init__(self, message, step=None, iteration=None, slice_index=None):
        self.message = message
        self.step = step
        self.iteration = iteration
        self.slice_index = slice_index
        parts = [message]
        if slice_index is not None:
            parts.append(f"slice={slice_index}")
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        if step is not None:
            parts.append(f"step={step}")
        super().__init__(" ".join(parts))

    def with_context(self, *, iteration=None, slice_index=None):
        return NumericalError(
            self.message,
            step=self.step,
            iteration=self.iteration if iteration is None else iteration,
            slice_index=self.slice_index if slice_index is None else slice_index,
        )


class ReconstructionError(ArithmeticError):
    """Inverse transform of a prediction left a non-negligible imaginary part."""


class DataFormatError(ValueError):
    """Malformed dataset manifest or data file."""


class ModelFormatError(ValueError):
    """Malformed or inconsistent model file."""
