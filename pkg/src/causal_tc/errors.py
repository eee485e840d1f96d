"""Exception hierarchy.

User-facing problems (bad files, bad configs, contract violations on inputs)
derive from :class:`InputError`; the CLI maps those to exit code 2.
"""


class CausalTCError(Exception):
    pass


class InputError(CausalTCError, ValueError):
    pass


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class RankDeficientError(CausalTCError, ValueError):
    """Design matrix without full column rank."""

    def __init__(self, message, columns=(), smallest_singular_value=0.0):
        super().__init__(message)
        self.columns = tuple(columns)
        self.smallest_singular_value = smallest_singular_value


class TrainingError(CausalTCError, RuntimeError):
    pass
