"""Exception types shared across the package."""


class ProvWrapError(Exception):
    """Base class for all provwrap failures."""


class ControlParseError(ProvWrapError):
    """A control-channel line violates the protocol."""


class TraceParseError(ProvWrapError):
    """A trace transcript line could not be parsed in strict mode."""


class DocumentError(ProvWrapError):
    """A provenance document could not be built or is invalid."""


class ProvJsonError(ProvWrapError):
    """Serialized provenance JSON is malformed."""


class RendererError(ProvWrapError):
    """The external graph renderer is missing or failed."""


class BundleError(ProvWrapError):
    """Writing the reproducibility bundle failed."""
