"""Pluggable model-backend protocol: VAD scoring, transcription, forced alignment."""

from .protocol import (  # noqa: F401
    PROTOCOL_VERSION,
    AlignmentResult,
    BackendCrashed,
    BackendError,
    BackendFailure,
    BackendRequest,
    BackendResponse,
    BackendTimeout,
    Handshake,
    Op,
    ProtocolViolation,
    TranscriptResult,
    WordTiming,
    decode_handshake,
    decode_request,
    decode_response,
    encode_handshake,
    encode_request,
    encode_response,
)
from .adapter import BackendHandle, SubprocessBackend, call  # noqa: F401
