"""Wire protocol codec: line-delimited JSON records over a child's stdin/stdout.

Field names and types are frozen in PROTOCOL.md at the repository root. Every
record carries the protocol version; anything that does not decode exactly is
a ProtocolViolation, never a silent best-effort parse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from ..segment import VadTrace

PROTOCOL_VERSION = 1


class BackendError(Exception):
    pass


class ProtocolViolation(BackendError):
    """A wire record that does not conform to the protocol."""


class BackendTimeout(BackendError):
    pass


class BackendCrashed(BackendError):
    pass


class Op(str, Enum):
    VAD = "VAD"
    TRANSCRIBE = "TRANSCRIBE"
    ALIGN = "ALIGN"


@dataclass(frozen=True)
class BackendRequest:
    op: Op
    audio_path: str
    request_id: str
    language_tag: str = "el"
    span: tuple[float, float] | None = None
    transcript: str | None = None

    def __post_init__(self):
        if self.op == Op.ALIGN and self.transcript is None:
            raise ValueError("ALIGN requests must carry a transcript")
        if self.span is not None:
            start, end = self.span
            if not (0.0 <= start < end):
                raise ValueError(f"invalid span {self.span}")


@dataclass(frozen=True)
class WordTiming:
    word: str
    start_s: float
    end_s: float
    confidence: float

    def __post_init__(self):
        if not (self.start_s < self.end_s):
            raise ValueError(f"word {self.word!r}: start {self.start_s} >= end {self.end_s}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"word {self.word!r}: confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class TranscriptResult:
    transcript: str
    detected_language: str


@dataclass(frozen=True)
class AlignmentResult:
    words: tuple[WordTiming, ...]

    def __post_init__(self):
        starts = [w.start_s for w in self.words]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise ValueError("word timings must be non-decreasing in start_s")
        object.__setattr__(self, "words", tuple(self.words))


@dataclass(frozen=True)
class BackendFailure:
    kind: str
    message: str


@dataclass(frozen=True)
class BackendResponse:
    request_id: str | None
    op: Op | None
    payload: "VadTrace | TranscriptResult | AlignmentResult | BackendFailure"

    @property
    def ok(self) -> bool:
        return not isinstance(self.payload, BackendFailure)


@dataclass(frozen=True)
class Handshake:
    capabilities: tuple[str, ...]
    version: str


def encode_handshake(hs: Handshake) -> str:
    return json.dumps(
        {
            "type": "handshake",
            "protocol": PROTOCOL_VERSION,
            "capabilities": list(hs.capabilities),
            "version": hs.version,
        },
        ensure_ascii=False,
    )


def decode_handshake(line: str) -> Handshake:
    obj = _decode_object(line)
    _expect(obj, "type", "handshake")
    _check_version(obj)
    caps = obj.get("capabilities")
    if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
        raise ProtocolViolation(f"handshake capabilities malformed: {caps!r}")
    for cap in caps:
        if cap not in Op.__members__:
            raise ProtocolViolation(f"handshake advertises unknown op {cap!r}")
    version = obj.get("version")
    if not isinstance(version, str):
        raise ProtocolViolation("handshake missing version string")
    return Handshake(tuple(caps), version)


def encode_request(req: BackendRequest) -> str:
    obj = {
        "type": "request",
        "protocol": PROTOCOL_VERSION,
        "id": req.request_id,
        "op": req.op.value,
        "audio_path": req.audio_path,
        "span": list(req.span) if req.span is not None else None,
        "language_tag": req.language_tag,
        "transcript": req.transcript,
    }
    return json.dumps(obj, ensure_ascii=False)


def decode_request(line: str) -> BackendRequest:
    obj = _decode_object(line)
    _expect(obj, "type", "request")
    _check_version(obj)
    request_id = obj.get("id")
    if not isinstance(request_id, str) or not request_id:
        raise ProtocolViolation(f"request id malformed: {request_id!r}")
    op_name = obj.get("op")
    if op_name not in Op.__members__:
        raise ProtocolViolation(f"unknown op {op_name!r}")
    audio_path = obj.get("audio_path")
    if not isinstance(audio_path, str) or not audio_path:
        raise ProtocolViolation("request missing audio_path")
    span_raw = obj.get("span")
    span = None
    if span_raw is not None:
        if (
            not isinstance(span_raw, list)
            or len(span_raw) != 2
            or not all(isinstance(x, (int, float)) for x in span_raw)
        ):
            raise ProtocolViolation(f"span malformed: {span_raw!r}")
        span = (float(span_raw[0]), float(span_raw[1]))
    transcript = obj.get("transcript")
    if transcript is not None and not isinstance(transcript, str):
        raise ProtocolViolation(f"transcript malformed: {transcript!r}")
    language = obj.get("language_tag")
    if not isinstance(language, str) or not language:
        raise ProtocolViolation(f"language_tag malformed: {language!r}")
    try:
        return BackendRequest(
            op=Op[op_name],
            audio_path=audio_path,
            request_id=request_id,
            language_tag=language,
            span=span,
            transcript=transcript,
        )
    except ValueError as exc:
        raise ProtocolViolation(str(exc)) from exc


def encode_response(resp: BackendResponse) -> str:
    obj: dict = {
        "type": "response",
        "protocol": PROTOCOL_VERSION,
        "id": resp.request_id,
        "op": resp.op.value if resp.op is not None else None,
    }
    payload = resp.payload
    if isinstance(payload, BackendFailure):
        obj["status"] = "error"
        obj["error"] = {"kind": payload.kind, "message": payload.message}
    else:
        obj["status"] = "ok"
        if isinstance(payload, VadTrace):
            obj["result"] = {
                "frame_hop_s": payload.frame_hop_s,
                "audio_duration_s": payload.audio_duration_s,
                "scores": list(payload.scores),
            }
        elif isinstance(payload, TranscriptResult):
            obj["result"] = {
                "transcript": payload.transcript,
                "detected_language": payload.detected_language,
            }
        elif isinstance(payload, AlignmentResult):
            obj["result"] = {
                "words": [
                    {
                        "word": w.word,
                        "start_s": w.start_s,
                        "end_s": w.end_s,
                        "confidence": w.confidence,
                    }
                    for w in payload.words
                ]
            }
        else:
            raise TypeError(f"cannot encode payload of type {type(payload).__name__}")
    return json.dumps(obj, ensure_ascii=False)


def decode_response(line: str) -> BackendResponse:
    obj = _decode_object(line)
    _expect(obj, "type", "response")
    _check_version(obj)
    request_id = obj.get("id")
    if request_id is not None and not isinstance(request_id, str):
        raise ProtocolViolation(f"response id malformed: {request_id!r}")
    op_name = obj.get("op")
    op = None
    if op_name is not None:
        if op_name not in Op.__members__:
            raise ProtocolViolation(f"unknown op {op_name!r}")
        op = Op[op_name]
    status = obj.get("status")
    if status == "error":
        err = obj.get("error")
        if not isinstance(err, dict) or not isinstance(err.get("kind"), str):
            raise ProtocolViolation(f"error payload malformed: {err!r}")
        return BackendResponse(request_id, op, BackendFailure(err["kind"], str(err.get("message", ""))))
    if status != "ok":
        raise ProtocolViolation(f"status must be 'ok' or 'error', got {status!r}")
    if op is None:
        raise ProtocolViolation("ok response missing op")
    result = obj.get("result")
    if not isinstance(result, dict):
        raise ProtocolViolation(f"result payload malformed: {result!r}")
    try:
        if op == Op.VAD:
            payload: VadTrace | TranscriptResult | AlignmentResult = VadTrace(
                tuple(float(s) for s in result["scores"]),
                float(result["frame_hop_s"]),
                float(result["audio_duration_s"]),
            )
        elif op == Op.TRANSCRIBE:
            payload = TranscriptResult(str(result["transcript"]), str(result["detected_language"]))
        else:
            payload = AlignmentResult(
                tuple(
                    WordTiming(
                        str(w["word"]), float(w["start_s"]), float(w["end_s"]), float(w["confidence"])
                    )
                    for w in result["words"]
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"{op.value} result malformed: {exc}") from exc
    return BackendResponse(request_id, op, payload)


def _decode_object(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"not a JSON record: {line[:200]!r}") from exc
    if not isinstance(obj, dict):
        raise ProtocolViolation(f"record must be an object, got {type(obj).__name__}")
    return obj


def _expect(obj: dict, key: str, value: str) -> None:
    if obj.get(key) != value:
        raise ProtocolViolation(f"expected {key}={value!r}, got {obj.get(key)!r}")


def _check_version(obj: dict) -> None:
    if obj.get("protocol") != PROTOCOL_VERSION:
        raise ProtocolViolation(f"protocol version {obj.get('protocol')!r}, expected {PROTOCOL_VERSION}")
