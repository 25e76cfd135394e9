"""Exception types shared across the package."""


class EquigenError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(EquigenError, ValueError):
    """Input array violates a documented precondition (non-finite, bad shape, ...)."""


class NotCenteredError(InvalidInputError):
    """A position array expected to lie in the zero-CoM subspace does not."""


class SingularBlockError(EquigenError):
    """A per-node 3x3 block is numerically singular."""

    def __init__(self, node_index: int, det: float):
        self.node_index = int(node_index)
        self.det = float(det)
        super().__init__(f"singular 3x3 block at node {node_index} (det={det:.3e})")


class SingularTransformError(EquigenError):
    """The assembled affine transform cannot be inverted."""


class ConfigError(EquigenError, ValueError):
    """Inconsistent or unknown configuration value."""


class DegenerateStepError(EquigenError, ValueError):
    """Time value too close to an endpoint for a finite-difference step."""


class NonFiniteLossError(EquigenError, ArithmeticError):
    """A training intermediate became non-finite; carries the offending stage."""

    def __init__(self, stage: str):
        self.stage = stage
        super().__init__(f"non-finite value produced at stage '{stage}'")


class DivergenceError(EquigenError, ArithmeticError):
    """Training loss diverged; a checkpoint of the last finite state was written."""


class CheckpointCorruptionError(EquigenError):
    """Checkpoint file failed magic/version/checksum validation."""
