"""Exception hierarchy for robocell."""

from typing import Optional


class RobocellError(Exception):
    """Base class for all robocell errors."""


# ----- geometry -----

class MeshError(RobocellError):
    pass


class MeshNotClosedError(MeshError):
    pass


class MeshParseError(MeshError):
    """Mesh file could not be parsed; `location` is 'line N' or 'byte N'."""

    def __init__(self, path, location: str, message: str):
        self.path = str(path)
        self.location = location
        super().__init__(f"{self.path}: {location}: {message}")
        self._message = message

    def __reduce__(self):
        return (type(self), (self.path, self.location, self._message))


# ----- kinematics -----

class KinematicsError(RobocellError):
    pass


class ChainSchemaError(KinematicsError):
    """Chain file violates the schema; `field_path` is dotted (links.2.joint.axis)."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self._message = message

    def __reduce__(self):
        return (type(self), (self.field_path, self._message))


class DimensionMismatchError(KinematicsError):
    pass


class TrajectoryError(KinematicsError):
    pass


# ----- sweep -----

class SweepError(RobocellError):
    pass


class NotResampledError(SweepError):
    pass


class EmptyTrajectoryError(SweepError):
    pass


class SurfaceClippedError(SweepError):
    pass


# ----- decimate / carve / collide -----

class DecimationError(RobocellError):
    pass


class TopologyError(DecimationError):
    pass


class CarveError(RobocellError):
    pass


class CollisionError(RobocellError):
    pass


class InsufficientResamplingError(CollisionError):
    pass


# ----- pipeline / harness -----

class ConfigError(RobocellError):
    pass


class LinkError(RobocellError):
    """A per-link computation failed; carries the link name."""

    def __init__(self, link_name: str, cause: BaseException):
        self.link_name = link_name
        self.cause = cause
        super().__init__(f"link {link_name!r}: {cause}")

    def __reduce__(self):
        return (type(self), (self.link_name, self.cause))


class PipelineStepError(RobocellError):
    """A pipeline step failed; artifacts written so far are kept."""

    def __init__(self, step: str, cause: BaseException, output_dir: Optional[str] = None):
        self.step = step
        self.cause = cause
        self.output_dir = output_dir
        super().__init__(f"pipeline step {step!r} failed: {cause}")

    def __reduce__(self):
        return (type(self), (self.step, self.cause, self.output_dir))


class HarnessError(RobocellError):
    pass


class SceneCollisionError(HarnessError):
    pass


class ExplorationStalledError(HarnessError):
    pass
