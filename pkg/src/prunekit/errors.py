"""Exception hierarchy shared by every prunekit module."""


class PruneKitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PruneKitError):
    """Tensor shapes or vector lengths are incompatible."""


class DomainError(PruneKitError):
    """A value is outside the operation's domain (empty store, N < 2, ...)."""


class FormatError(PruneKitError):
    """A weight archive is malformed; message carries the byte position."""


class ValidationError(PruneKitError):
    """A manifest or graph violates a structural invariant."""


class ConfigError(PruneKitError):
    """User-supplied configuration is invalid (unknown node, ratio >= 1, ...)."""


class StructuralError(PruneKitError):
    """Graph surgery or shape propagation failed; message names the node."""


class ScoringError(PruneKitError):
    """A layer cannot be scored (e.g. it has no consumers)."""
