"""This module provides the ErrorCode constants and the BilevelError
   exception which is raised whenever the toolkit encounters an error.

"""

from typing import Optional


class ErrorCode:
    """Constants for the error codes carried by BilevelError."""

    NONE = 0x00  # No Error
    INVALID_PARAM = 0x01  # Parameter out of range or non-finite
    CONFIG = 0x02  # Experiment config is malformed
    DIVERGED = 0x03  # Iterate blew up
    NOT_SPD = 0x04  # Non-positive curvature seen by CG
    NON_FINITE = 0x05  # NaN or inf in a Krylov quantity
    DIMENSION = 0x06  # Problem too large for a dense oracle
    MISMATCH = 0x07  # Inputs computed for different points
    INTERNAL = 0x08  # Should not happen for valid instances
    NO_ORACLE = 0x09  # Family has no closed-form lower solution
    THRESHOLD = 0x0a  # A check exceeded its threshold

    code_str = {
        NONE: 'None',
        INVALID_PARAM: 'InvalidParam',
        CONFIG: 'Config',
        DIVERGED: 'Diverged',
        NOT_SPD: 'NotSPD',
        NON_FINITE: 'NonFinite',
        DIMENSION: 'Dimension',
        MISMATCH: 'Mismatch',
        INTERNAL: 'Internal',
        NO_ORACLE: 'NoOracle',
        THRESHOLD: 'Threshold',
    }

    def __init__(self, error_code: int) -> None:
        self.error_code = error_code

    def __repr__(self) -> str:
        """Return a python parsable representation of ourselves."""
        return f'ErrorCode(0x{self.error_code:02x})'

    def __str__(self) -> str:
        """Return a human readable representation of ourselves."""
        if self.error_code in ErrorCode.code_str:
            return ErrorCode.code_str[self.error_code]
        return f'0x{self.error_code:02x}'

    @staticmethod
    def parse(string: str) -> int:
        """Parses an error name (case insensitive) into its code."""
        string = string.strip().lower()
        for code, name in ErrorCode.code_str.items():
            if name.lower() == string:
                return code
        raise ValueError(f"Unrecognized error code: '{string}'")


class BilevelError(Exception):
    """Exception raised by every part of the toolkit.

       key names the offending config key for CONFIG errors, and trace holds
       the partial RunTrace when a run aborts part way through.
    """

    def __init__(self,
                 error_code: int,
                 message: str = '',
                 key: Optional[str] = None) -> None:
        super().__init__(message)
        self.error_code = error_code
        self.message = message
        self.key = key
        self.trace = None

    def get_error_code(self) -> int:
        """Retrieves the error code associated with the exception."""
        return self.error_code

    def __str__(self) -> str:
        text = str(ErrorCode(self.error_code))
        if self.key is not None:
            text += f" ({self.key})"
        if self.message:
            text += ': ' + self.message
        return text


def require(condition: bool, message: str, key: Optional[str] = None) -> None:
    """Raises an INVALID_PARAM error (or CONFIG if key is given) unless condition holds."""
    if not condition:
        code = ErrorCode.INVALID_PARAM if key is None else ErrorCode.CONFIG
        raise BilevelError(code, message, key=key)
