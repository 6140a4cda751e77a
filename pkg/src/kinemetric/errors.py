"""Exception types shared across the package."""


class KinemetricError(Exception):
    pass


class InvalidArgument(KinemetricError, ValueError):
    pass


class ShapeMismatch(KinemetricError, ValueError):
    pass


class DegenerateRepresentation(KinemetricError, ValueError):
    """A 6D or quaternion slice cannot be mapped onto SO(3)."""


class DegenerateView(KinemetricError, ValueError):
    """Every voxel of the grid lies behind a camera."""


class DegenerateVirtualDistance(KinemetricError, ValueError):
    pass


class MissingData(KinemetricError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing data"


class UnsolvableFrame(KinemetricError, ValueError):
    """No positively weighted marker is present in a frame."""


class ParseError(KinemetricError, ValueError):
    """Malformed input file; carries the file, line and field that failed."""

    def __init__(self, path, line=None, field=None, message=""):
        self.path = str(path)
        self.line = line
        self.field = field
        self.message = message
        where = self.path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}" if message else where)
