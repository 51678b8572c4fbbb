"""Exception types shared across the package."""


class UsageError(Exception):
    """Bad arguments or API misuse. The CLI maps this to exit code 1."""


class DataError(Exception):
    """Malformed or inconsistent input data. The CLI maps this to exit code 2."""


class GenerationError(DataError):
    """Scene synthesis could not satisfy its constraints (placement or entropy)."""
