"""Protocol codec, adapter side. Field names and framing follow PROTOCOL.md
(version 1) at the repository root; this package deliberately does not import
the consumer's implementation; the wire format is the only shared contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

PROTOCOL_VERSION = 1

OPS = ("VAD", "TRANSCRIBE", "ALIGN")


class BadRequest(Exception):
    """Request line rejected before reaching a model; answered with kind='protocol'."""


@dataclass(frozen=True)
class Request:
    request_id: str
    op: str
    audio_path: str
    language_tag: str
    span: tuple[float, float] | None
    transcript: str | None


def decode_request(line: str) -> Request:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BadRequest(f"not a JSON record: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("type") != "request":
        raise BadRequest("record is not a request")
    if obj.get("protocol") != PROTOCOL_VERSION:
        raise BadRequest(f"unsupported protocol version {obj.get('protocol')!r}")
    request_id = obj.get("id")
    if not isinstance(request_id, str) or not request_id:
        raise BadRequest("missing request id")
    op = obj.get("op")
    if op not in OPS:
        raise BadRequest(f"unknown op {op!r}")
    audio_path = obj.get("audio_path")
    if not isinstance(audio_path, str) or not audio_path:
        raise BadRequest("missing audio_path")
    span_raw = obj.get("span")
    span = None
    if span_raw is not None:
        if (
            not isinstance(span_raw, list)
            or len(span_raw) != 2
            or not all(isinstance(v, (int, float)) for v in span_raw)
            or not span_raw[0] < span_raw[1]
            or span_raw[0] < 0
        ):
            raise BadRequest(f"malformed span {span_raw!r}")
        span = (float(span_raw[0]), float(span_raw[1]))
    transcript = obj.get("transcript")
    if transcript is not None and not isinstance(transcript, str):
        raise BadRequest("malformed transcript")
    if op == "ALIGN" and transcript is None:
        raise BadRequest("ALIGN requires a transcript")
    language = obj.get("language_tag")
    if not isinstance(language, str) or not language:
        raise BadRequest("missing language_tag")
    return Request(request_id, op, audio_path, language, span, transcript)


def handshake_line(capabilities: list[str], version: str) -> str:
    return json.dumps(
        {
            "type": "handshake",
            "protocol": PROTOCOL_VERSION,
            "capabilities": capabilities,
            "version": version,
        },
        ensure_ascii=False,
    )


def ok_line(request_id: str, op: str, result: dict) -> str:
    return json.dumps(
        {
            "type": "response",
            "protocol": PROTOCOL_VERSION,
            "id": request_id,
            "op": op,
            "status": "ok",
            "result": result,
        },
        ensure_ascii=False,
    )


def error_line(request_id: str | None, op: str | None, kind: str, message: str) -> str:
    return json.dumps(
        {
            "type": "response",
            "protocol": PROTOCOL_VERSION,
            "id": request_id,
            "op": op,
            "status": "error",
            "error": {"kind": kind, "message": message},
        },
        ensure_ascii=False,
    )


def vad_result(frame_hop_s: float, audio_duration_s: float, scores: list[float]) -> dict:
    return {
        "frame_hop_s": frame_hop_s,
        "audio_duration_s": audio_duration_s,
        "scores": scores,
    }


def transcript_result(transcript: str, detected_language: str) -> dict:
    return {"transcript": transcript, "detected_language": detected_language}


def alignment_result(words: list[tuple[str, float, float, float]]) -> dict:
    return {
        "words": [
            {"word": w, "start_s": s, "end_s": e, "confidence": c} for w, s, e, c in words
        ]
    }
