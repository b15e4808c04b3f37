"""Exception hierarchy shared across the toolkit."""


class DualcloakError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(DualcloakError, ValueError):
    """Invalid argument value or inconsistent shapes."""


class ImageFormatError(DualcloakError):
    """File bytes could not be decoded as a supported image."""


class ParseError(DualcloakError):
    """Face parser failed to produce a label map."""


class EmbedError(DualcloakError):
    """Embedder failed to produce a feature vector."""


class DegenerateEmbeddingError(EmbedError):
    """An all-zero embedding has no direction; cosine is undefined."""


class ManifoldError(DualcloakError):
    """Generator failed to encode or decode."""


class TransportError(DualcloakError):
    """Verification service unreachable after the configured retries."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class ProtocolError(DualcloakError):
    """Verification service answered with a malformed response."""


class ConfigError(DualcloakError):
    """Run configuration is invalid (maps to CLI exit code 2)."""
