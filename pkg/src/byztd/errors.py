"""Exception types shared across the package."""
from __future__ import annotations


class ByztdError(Exception):
    """Base class for package-specific failures."""


class NotErgodic(ByztdError):
    """Transition support graph is not irreducible and aperiodic."""


class SingularSystem(ByztdError):
    """A linear system that should be uniquely solvable is rank deficient."""


class NotNegativeDefinite(ByztdError):
    """Symmetric part of the drift matrix is not negative definite."""


class InvalidSpec(ByztdError):
    """Environment specification violates a documented bound."""


class InvalidTrim(ByztdError):
    """Trim counts incompatible with the network (theorem-mode check)."""


class UnknownAgent(ByztdError):
    """Agent id not present (or not honest) in the topology."""


class UnknownPreset(ByztdError):
    """Preset topology name not recognised."""


class BudgetExceeded(ByztdError):
    """Subgraph enumeration would exceed the caller's budget."""


class TooFewNeighbors(ByztdError):
    """Trimming q low and q high values needs at least 2q neighbors."""


class BracketingFailed(ByztdError):
    """A kept value could not be bracketed by discarded honest values."""


class NoHonestAgents(ByztdError):
    """An attack needs at least one honest parameter to reference."""


class NonFiniteParameter(ByztdError):
    """Honest parameter became non-finite where theory forbids it."""


class TooShort(ByztdError):
    """Trace too short for the requested diagnostic."""


class ConfigError(ByztdError):
    """Experiment config file is missing, malformed, or inconsistent."""
