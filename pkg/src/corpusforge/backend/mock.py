"""Deterministic mock backend for desk-scale pipeline runs.

Every answer is a pure function of (seed, audio content digest, request
fields): VAD scores come from a seeded generator laying down speech blocks
separated by low-score gaps, transcripts are seeded draws from a small Greek
word list (with occasional caption-hallucination and code-switch exemplars so
the downstream filters have something to catch), and alignment spreads word
timings uniformly over the span.

Runs in-process as a BackendHandle, or as a child process speaking the wire
protocol (`python -m corpusforge.backend.mock --seed N`). The child entry
accepts fault-injection flags used by the adapter tests.
"""

from __future__ import annotations

import argparse
import hashlib
import random
import sys
import wave

from ..segment import VadTrace, frame_count
from .adapter import BackendHandle
from .protocol import (
    AlignmentResult,
    BackendFailure,
    BackendRequest,
    BackendResponse,
    Handshake,
    Op,
    ProtocolViolation,
    TranscriptResult,
    WordTiming,
    decode_request,
    encode_handshake,
    encode_response,
)

MOCK_FRAME_HOP_S = 0.01
MOCK_VERSION = "mock-1"

_GREEK_WORDS = (
    "καλημερα", "κοσμε", "σημερα", "μιλαμε", "για", "την", "ιστορια", "της",
    "μουσικης", "και", "του", "θεατρου", "στην", "ελλαδα", "ενα", "ωραιο",
    "επεισοδιο", "με", "πολλες", "συζητησεις", "απο", "τους", "καλεσμενους",
    "μας", "ακουστε", "προσεκτικα", "αυτο", "το", "θεμα", "ειναι", "πολυ",
    "ενδιαφερον", "οπως", "παντα", "ευχαριστουμε", "πολλους",
)

_HALLUCINATION_TEXT = "Υπότιτλοι AUTHORWAVE"
_CODESWITCH_TAIL = "ακολουθήστε με στο Instagram"

_HALLUCINATION_RATE = 0.06
_CODESWITCH_RATE = 0.05


def _audio_digest(audio_path: str) -> str:
    digest = hashlib.sha256()
    with open(audio_path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _audio_duration_s(audio_path: str) -> float:
    with wave.open(audio_path, "rb") as wf:
        rate = wf.getframerate()
        return wf.getnframes() / rate if rate else 0.0


class MockBackend(BackendHandle):
    capabilities = ("VAD", "TRANSCRIBE", "ALIGN")

    def __init__(self, seed: int):
        self.seed = seed

    def request(self, req: BackendRequest, timeout: float | None = None) -> BackendResponse:
        del timeout
        try:
            payload = self._answer(req)
        except FileNotFoundError as exc:
            payload = BackendFailure("io", str(exc))
        except Exception as exc:  # per-request failure, backend stays up
            payload = BackendFailure("internal", f"{type(exc).__name__}: {exc}")
        return BackendResponse(req.request_id, req.op, payload)

    def _answer(self, req: BackendRequest):
        digest = _audio_digest(req.audio_path)
        if req.op == Op.VAD:
            return self._vad(req, digest)
        if req.op == Op.TRANSCRIBE:
            return self._transcribe(req, digest)
        return self._align(req, digest)

    def _rng(self, digest: str, *key: object) -> random.Random:
        material = ":".join([str(self.seed), digest, *map(str, key)])
        return random.Random(material)

    def _vad(self, req: BackendRequest, digest: str) -> VadTrace:
        duration = _audio_duration_s(req.audio_path)
        if req.span is not None:
            start, end = req.span
            duration = min(end, duration) - start
        rng = self._rng(digest, "vad")
        n = frame_count(duration, MOCK_FRAME_HOP_S)
        scores: list[float] = []
        speaking = rng.random() < 0.8
        while len(scores) < n:
            block_s = rng.uniform(3.0, 16.0) if speaking else rng.uniform(0.3, 2.5)
            block_frames = max(1, int(round(block_s / MOCK_FRAME_HOP_S)))
            level = rng.uniform(0.78, 0.97) if speaking else rng.uniform(0.02, 0.18)
            for _ in range(min(block_frames, n - len(scores))):
                scores.append(min(1.0, max(0.0, level + rng.uniform(-0.02, 0.02))))
            speaking = not speaking
        return VadTrace(tuple(scores), MOCK_FRAME_HOP_S, duration)

    def _span_key(self, req: BackendRequest) -> str:
        if req.span is None:
            return "full"
        return f"{req.span[0]:.3f}-{req.span[1]:.3f}"

    def _transcribe(self, req: BackendRequest, digest: str) -> TranscriptResult:
        duration = _audio_duration_s(req.audio_path)
        if req.span is not None:
            duration = req.span[1] - req.span[0]
        rng = self._rng(digest, "asr", self._span_key(req))
        roll = rng.random()
        if roll < _HALLUCINATION_RATE:
            return TranscriptResult(_HALLUCINATION_TEXT, req.language_tag)
        n_words = max(1, int(round(duration / 0.6)))
        words = [rng.choice(_GREEK_WORDS) for _ in range(n_words)]
        text = " ".join(words)
        if roll < _HALLUCINATION_RATE + _CODESWITCH_RATE:
            text = f"{text} {_CODESWITCH_TAIL}"
        return TranscriptResult(text, req.language_tag)

    def _align(self, req: BackendRequest, digest: str) -> AlignmentResult:
        if req.span is not None:
            start, end = req.span
        else:
            start, end = 0.0, _audio_duration_s(req.audio_path)
        words = req.transcript.split()
        if not words:
            return AlignmentResult(())
        rng = self._rng(digest, "align", self._span_key(req))
        step = (end - start) / len(words)
        timings = [
            WordTiming(
                word=w,
                start_s=start + i * step,
                end_s=start + (i + 1) * step,
                confidence=round(0.6 + 0.4 * rng.random(), 4),
            )
            for i, w in enumerate(words)
        ]
        return AlignmentResult(tuple(timings))


def mock_backend(seed: int) -> MockBackend:
    """In-process deterministic backend handle."""
    return MockBackend(seed)


def serve(seed: int, stdin=None, stdout=None, garbage_at: int | None = None, crash_after: int | None = None) -> None:
    """Speak the wire protocol over stdio; fault flags exist for adapter tests."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    backend = MockBackend(seed)

    def emit(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    emit(encode_handshake(Handshake(MockBackend.capabilities, MOCK_VERSION)))
    handled = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        handled += 1
        if crash_after is not None and handled > crash_after:
            sys.exit(17)
        if garbage_at is not None and handled == garbage_at:
            emit("this is not a protocol record")
            continue
        try:
            req = decode_request(line)
        except ProtocolViolation as exc:
            emit(encode_response(BackendResponse(None, None, BackendFailure("protocol", str(exc)))))
            continue
        emit(encode_response(backend.request(req)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="deterministic mock VAD/ASR/alignment backend")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--inject-garbage-at", type=int, default=None, help="emit a malformed line instead of the Nth response (test support)")
    parser.add_argument("--crash-after", type=int, default=None, help="exit abruptly after N requests (test support)")
    args = parser.parse_args(argv)
    serve(args.seed, garbage_at=args.inject_garbage_at, crash_after=args.crash_after)
    return 0


if __name__ == "__main__":
    sys.exit(main())
