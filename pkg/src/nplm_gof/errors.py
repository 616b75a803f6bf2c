"""Exception hierarchy shared by the library and the CLI."""


class NplmError(Exception):
    """Base class for all errors raised by nplm_gof."""


class InputError(NplmError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, missing points)."""


class NumericalError(NplmError, ArithmeticError):
    """A computation produced non-finite values or failed to make progress."""


class CalibrationError(NumericalError):
    """Too many pseudo-experiments failed for the null model to be trusted."""


class FingerprintMismatch(NplmError):
    """A null model was calibrated for a different test configuration."""

    def __init__(self, expected: dict, found: dict):
        self.expected = expected
        self.found = found
        keys = sorted(set(expected) | set(found))
        diff = [
            f"  {k}: null={found.get(k)!r} current={expected.get(k)!r}"
            for k in keys
            if expected.get(k) != found.get(k)
        ]
        super().__init__("config fingerprint mismatch:\n" + "\n".join(diff))


class DatasetParseError(NplmError, ValueError):
    """A sample file could not be parsed; the message names the location."""
