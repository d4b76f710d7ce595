"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: data problems exit 2, scorer protocol
problems exit 3.
"""


class LaunderKitError(Exception):
    """Base class for all toolkit errors."""


class DataError(LaunderKitError):
    """Unusable input data: missing files, bad formats, malformed manifests."""


class ScorerProtocolError(LaunderKitError):
    """Base class for external-scorer wire protocol failures."""


class ScorerLaunchError(ScorerProtocolError):
    """The scorer subprocess could not be started."""


class ScorerHandshakeError(ScorerProtocolError):
    """The scorer did not present the expected greeting line."""


class ScorerResponseError(ScorerProtocolError):
    """The scorer sent a malformed or truncated response."""


class ScorerTimeoutError(ScorerProtocolError):
    """The scorer failed to respond within the configured timeout."""
