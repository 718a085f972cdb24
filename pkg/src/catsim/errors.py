"""Error taxonomy shared across the simulator."""


class CatsimError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CatsimError):
    """A numeric argument is outside the domain of an operation."""


class CommandRejected(CatsimError):
    """A control command violates the vehicle's admissible range."""


class WorldFormatError(CatsimError):
    """World file cannot be parsed or validated.

    ``location`` is a human-readable position: either ``line N, column M``
    for syntax errors or a JSON path like ``vehicles[1].name`` for
    semantic ones.
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{message} (at {location})" if location else message)


class TopicError(CatsimError):
    """Topic name/type conflicts and malformed subscription patterns."""


class BagError(CatsimError):
    """Bag file cannot be read or written.

    ``offset`` is the byte offset of the last valid position when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(f"{message} (last valid offset: {offset})" if offset is not None else message)


class SpawnError(CatsimError):
    """Spawn/despawn request names a duplicate or unknown vehicle."""


class BindingError(CatsimError):
    """A controller binding is invalid or references a missing vehicle."""
