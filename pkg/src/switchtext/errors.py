"""Exception hierarchy shared across the package.

Every error carries a machine-readable ``category`` string so the CLI can
map failures to stable exit codes.
"""

from __future__ import annotations


class SwitchTextError(Exception):
    """Base class for all package errors."""

    category = "internal"


class DimensionError(SwitchTextError):
    """Operand shapes are incompatible for the requested operation."""

    category = "dimension"


class NumericError(SwitchTextError):
    """A computation produced or received non-finite values."""

    category = "numeric"


class ContractError(SwitchTextError):
    """A caller violated an operation's precondition."""

    category = "contract"


class ConfigError(SwitchTextError):
    """A configuration value is out of range or inconsistent."""

    category = "config"


class VocabularyError(SwitchTextError):
    """A token id falls outside the vocabulary."""

    category = "vocabulary"


class CompatibilityError(SwitchTextError):
    """A checkpoint and a dataset (or config) do not fit together."""

    category = "compatibility"


class DataError(SwitchTextError):
    """A dataset file is missing, malformed, or degenerate."""

    category = "data"


class LookupError_(SwitchTextError):
    """A requested example id does not exist."""

    category = "lookup"
