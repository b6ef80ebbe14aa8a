from typing import Optional, Any, Dict

class BaseCustomException(Exception):
    """Base exception class for all codec exceptions."""
    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

class ConfigurationError(BaseCustomException):
    """Raised when a configuration value violates its constraints."""
    pass

class ValidationError(BaseCustomException):
    """Raised when input validation fails."""
    pass

class ShapeError(ValidationError):
    """Raised when tensor shapes or arities do not line up."""
    pass

class EmptyInputError(ValidationError):
    """Raised when an operation receives zero-length audio or latents."""
    pass

class TooShortInputError(ValidationError):
    """Raised when audio is shorter than the minimum an operation needs."""
    pass

class SpectralError(BaseCustomException):
    """Base class for STFT/iSTFT failures."""
    pass

class WindowNormalizationError(SpectralError):
    """Raised when the overlap-add window envelope vanishes."""
    pass

class QuantizerError(BaseCustomException):
    """Base class for codebook errors."""
    pass

class InsufficientInitDataError(QuantizerError):
    """Raised when k-means initialization gets fewer frames than codes."""
    pass

class TrainingFaultError(BaseCustomException):
    """Raised when a loss term becomes NaN or infinite."""
    pass

class CheckpointError(BaseCustomException):
    """Base class for checkpoint container errors."""
    pass

class CheckpointVersionError(CheckpointError):
    """Raised when a checkpoint was written by an incompatible format version."""
    pass

class CheckpointCorruptError(CheckpointError):
    """Raised when a checkpoint file cannot be parsed."""
    pass

class BitstreamError(BaseCustomException):
    """Base class for token file errors."""
    pass

class BadMagicError(BitstreamError):
    """Raised when a token file does not start with the expected magic."""
    pass

class UnsupportedVersionError(BitstreamError):
    """Raised when a token file declares an unknown format version."""
    pass

class TruncatedPayloadError(BitstreamError):
    """Raised when a token file ends before its declared frame count."""
    pass

class IndexOutOfRangeError(BitstreamError):
    """Raised when a token index is not below the codebook size."""
    pass

class CompatibilityError(BaseCustomException):
    """Raised when a token stream and a model disagree on hop or codebook size."""
    pass

class AnalysisError(BaseCustomException):
    """Raised when an analysis pass has nothing to measure."""
    pass

def handle_codec_error(error: Exception) -> Dict[str, Any]:
    """Convert various exceptions to standardized error reports.

    Args:
        error: The exception to handle

    Returns:
        Dict containing error details and the process exit code for the CLI
    """
    if isinstance(error, ConfigurationError):
        return {
            "error_type": "CONFIGURATION_ERROR",
            "message": str(error),
            "details": error.details,
            "exit_code": 2
        }
    elif isinstance(error, BitstreamError):
        return {
            "error_type": "BITSTREAM_ERROR",
            "message": str(error),
            "details": {"kind": type(error).__name__, **error.details},
            "exit_code": 3
        }
    elif isinstance(error, CompatibilityError):
        return {
            "error_type": "INCOMPATIBLE_MODEL",
            "message": str(error),
            "details": error.details,
            "exit_code": 3
        }
    elif isinstance(error, CheckpointError):
        return {
            "error_type": "CHECKPOINT_ERROR",
            "message": str(error),
            "details": {"kind": type(error).__name__, **error.details},
            "exit_code": 4
        }
    elif isinstance(error, TrainingFaultError):
        return {
            "error_type": "TRAINING_FAULT",
            "message": str(error),
            "details": error.details,
            "exit_code": 5
        }
    elif isinstance(error, ValidationError):
        return {
            "error_type": "VALIDATION_FAILED",
            "message": str(error),
            "details": error.details,
            "exit_code": 6
        }
    elif isinstance(error, BaseCustomException):
        return {
            "error_type": "CODEC_ERROR",
            "message": str(error),
            "details": error.details,
            "exit_code": 1
        }
    elif isinstance(error, FileNotFoundError):
        return {
            "error_type": "FILE_NOT_FOUND",
            "message": str(error),
            "details": {"filename": error.filename},
            "exit_code": 7
        }
    else:
        return {
            "error_type": "INTERNAL_ERROR",
            "message": "An unexpected error occurred",
            "details": {"original_error": str(error)},
            "exit_code": 1
        }
