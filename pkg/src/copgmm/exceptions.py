"""Package exceptions: input problems vs numerical failures.

The CLI maps ``InputError`` to exit code 2 and ``NumericalError`` to 3.
"""


class InputError(ValueError):
    """Malformed user input: files, configs, schemas."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-convergence, unattainable tolerance)."""
