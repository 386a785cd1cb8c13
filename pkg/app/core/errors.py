"""Exception hierarchy shared by the library, the CLI and the HTTP service.

Every error knows how it is reported: a machine-readable ``kind``, the
process exit code used by ``python -m app`` and the HTTP status used by
the FastAPI handler.
"""


class DepthScaleError(Exception):
    kind = "error"
    exit_code = 1
    status_code = 500

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_payload(self) -> dict:
        payload = {"error": self.kind, "message": self.message}
        payload.update(self.details)
        return payload


class InputValidationError(DepthScaleError, ValueError):
    """A precondition on the inputs does not hold."""

    kind = "invalid_input"
    exit_code = 2
    status_code = 422


class NoGroundDetected(DepthScaleError):
    """Too few ground pixels to estimate the camera height."""

    kind = "no_ground"
    exit_code = 3
    status_code = 422

    def __init__(self, ground_ratio: float = 0.0, n_samples: int = 0, message: str = "no ground detected"):
        super().__init__(message, ground_ratio=float(ground_ratio), n_samples=int(n_samples))
        self.ground_ratio = float(ground_ratio)
        self.n_samples = int(n_samples)


class StorageError(DepthScaleError, OSError):
    """Unreadable, missing or ill-formed file."""

    kind = "io_error"
    exit_code = 4
    status_code = 400
