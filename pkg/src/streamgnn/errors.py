class StreamGNNError(Exception):
    """Base class for all engine errors."""


class MalformedGraphError(StreamGNNError, ValueError):
    pass


class ConfigError(StreamGNNError, ValueError):
    pass


class EmptyGraphError(StreamGNNError, ValueError):
    pass


class ParameterError(StreamGNNError, ValueError):
    pass


class StoreError(StreamGNNError, IOError):
    pass
