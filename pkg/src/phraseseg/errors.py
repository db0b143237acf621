"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(Exception):
    """A file or record violated the interchange schema.

    Carries the full list of offenses so a single load reports every
    problem instead of stopping at the first one.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class UndefinedMetricError(Exception):
    """A metric or ratio was requested on a domain where it is undefined,
    e.g. micro F1 over zero positive datapoints."""
