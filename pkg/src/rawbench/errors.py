"""Exception types shared across the toolkit."""


class RawbenchError(Exception):
    """Base class for all toolkit errors."""


class AudioIOError(RawbenchError):
    """WAV file cannot be read or written (missing, malformed, unsupported)."""


class AttackError(RawbenchError):
    """An attack cannot be applied (bad parameter, missing resource, encoder failure)."""


class CapacityError(RawbenchError):
    """Carrier too short for the requested payload."""


class PluginError(RawbenchError):
    """A plugin subprocess died, timed out, or reported failure."""


class ProtocolError(PluginError):
    """A plugin replied with something that is not valid protocol traffic."""


class ManifestError(RawbenchError):
    """Dataset manifest is missing, malformed, or references absent files."""


class ConfigError(RawbenchError):
    """Run configuration is invalid."""
