import sys
import threading

import pytest

from corpusforge.backend import (
    AlignmentResult,
    BackendCrashed,
    BackendFailure,
    BackendRequest,
    BackendResponse,
    BackendTimeout,
    Handshake,
    Op,
    ProtocolViolation,
    SubprocessBackend,
    TranscriptResult,
    WordTiming,
    call,
    decode_handshake,
    decode_request,
    decode_response,
    encode_handshake,
    encode_request,
    encode_response,
)
from corpusforge.backend.mock import mock_backend
from corpusforge.segment import VadTrace

from .conftest import make_tone_wav

MOCK_CMD = [sys.executable, "-m", "corpusforge.backend.mock", "--seed", "7"]


@pytest.fixture
def wav_2s(tmp_path):
    path = tmp_path / "two_seconds.wav"
    make_tone_wav(path, duration_s=2.0, rate=16000, channels=1)
    return str(path)


class TestProtocolRoundTrip:
    def test_handshake(self):
        hs = Handshake(("VAD", "ALIGN"), "test-1")
        assert decode_handshake(encode_handshake(hs)) == hs

    def test_request_roundtrip(self):
        req = BackendRequest(
            op=Op.ALIGN,
            audio_path="/a/b.wav",
            request_id="r-1",
            language_tag="el",
            span=(1.0, 4.5),
            transcript="ένα δύο",
        )
        assert decode_request(encode_request(req)) == req

    def test_vad_response_roundtrip(self):
        trace = VadTrace((0.1, 0.9, 0.5), 1.0, 3.0)
        resp = BackendResponse("r-2", Op.VAD, trace)
        assert decode_response(encode_response(resp)) == resp

    def test_transcribe_response_roundtrip(self):
        resp = BackendResponse("r-3", Op.TRANSCRIBE, TranscriptResult("γεια σας", "el"))
        assert decode_response(encode_response(resp)) == resp

    def test_align_response_roundtrip(self):
        words = AlignmentResult(
            (WordTiming("ένα", 0.0, 1.0, 0.9), WordTiming("δύο", 1.0, 2.0, 0.8))
        )
        resp = BackendResponse("r-4", Op.ALIGN, words)
        assert decode_response(encode_response(resp)) == resp

    def test_error_response_roundtrip(self):
        resp = BackendResponse("r-5", Op.VAD, BackendFailure("io", "no such file"))
        assert decode_response(encode_response(resp)) == resp

    def test_random_messages_roundtrip(self):
        import random

        from corpusforge.segment import VadTrace, frame_count

        rng = random.Random(7)
        words = ["γεια", "σας", "ok", "ένα", "δύο", "x"]
        for _ in range(200):
            span = None
            if rng.random() < 0.5:
                start = rng.uniform(0, 50)
                span = (start, start + rng.uniform(0.1, 30))
            op = rng.choice(list(Op))
            req = BackendRequest(
                op=op,
                audio_path=f"/tmp/{rng.randrange(1000)}.wav",
                request_id=f"id-{rng.randrange(10**6)}",
                language_tag=rng.choice(["el", "en-US"]),
                span=span,
                transcript=" ".join(rng.choices(words, k=rng.randint(1, 6)))
                if op == Op.ALIGN or rng.random() < 0.2
                else None,
            )
            assert decode_request(encode_request(req)) == req

            if op == Op.VAD:
                duration = rng.uniform(0.1, 5.0)
                n = frame_count(duration, 0.01)
                payload = VadTrace(tuple(rng.random() for _ in range(n)), 0.01, duration)
            elif op == Op.TRANSCRIBE:
                payload = TranscriptResult(" ".join(rng.choices(words, k=3)), "el")
            else:
                t = 0.0
                timings = []
                for w in rng.choices(words, k=rng.randint(1, 5)):
                    dur = rng.uniform(0.05, 2.0)
                    timings.append(WordTiming(w, t, t + dur, round(rng.random(), 6)))
                    t += dur
                payload = AlignmentResult(tuple(timings))
            resp = BackendResponse(req.request_id, op, payload)
            assert decode_response(encode_response(resp)) == resp


class TestProtocolRejection:
    @pytest.mark.parametrize(
        "line",
        [
            "not json at all",
            '{"type": "handshake"}',
            '{"type": "request", "protocol": 99, "id": "x", "op": "VAD", "audio_path": "a", "language_tag": "el"}',
            '{"type": "request", "protocol": 1, "id": "x", "op": "LISTEN", "audio_path": "a", "language_tag": "el"}',
            '{"type": "request", "protocol": 1, "id": "", "op": "VAD", "audio_path": "a", "language_tag": "el"}',
            '{"type": "request", "protocol": 1, "id": "x", "op": "VAD", "audio_path": "a", "span": [3], "language_tag": "el"}',
        ],
    )
    def test_malformed_request_lines(self, line):
        with pytest.raises(ProtocolViolation):
            decode_request(line)

    @pytest.mark.parametrize(
        "line",
        [
            "garbage",
            '{"type": "response", "protocol": 1, "id": "x", "op": "VAD", "status": "maybe"}',
            '{"type": "response", "protocol": 1, "id": "x", "status": "ok", "result": {}}',
            '{"type": "response", "protocol": 1, "id": "x", "op": "VAD", "status": "ok", "result": {"scores": [0.2]}}',
            '{"type": "response", "protocol": 1, "id": "x", "op": "ALIGN", "status": "ok", "result": {"words": [{"word": "a", "start_s": 2.0, "end_s": 1.0, "confidence": 0.5}]}}',
        ],
    )
    def test_malformed_response_lines(self, line):
        with pytest.raises(ProtocolViolation):
            decode_response(line)

    def test_align_without_transcript_rejected_before_wire(self):
        with pytest.raises(ValueError):
            BackendRequest(op=Op.ALIGN, audio_path="/a.wav", request_id="r")

    def test_invalid_span_rejected(self):
        with pytest.raises(ValueError):
            BackendRequest(op=Op.VAD, audio_path="/a.wav", request_id="r", span=(5.0, 2.0))


class TestMockBackend:
    def test_vad_contract_200_frames_for_2s(self, wav_2s):
        backend = mock_backend(seed=1)
        resp = call(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="v1"), backend)
        trace = resp.payload
        assert len(trace.scores) == 200
        assert trace.frame_hop_s == 0.01

    def test_same_seed_same_answers(self, wav_2s):
        a = mock_backend(3).request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="x"))
        b = mock_backend(3).request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="x"))
        assert a == b

    def test_different_seeds_differ(self, wav_2s):
        a = mock_backend(1).request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="x"))
        b = mock_backend(2).request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="x"))
        assert a.payload.scores != b.payload.scores

    def test_align_uniform_three_words(self, wav_2s):
        backend = mock_backend(5)
        resp = backend.request(
            BackendRequest(
                op=Op.ALIGN,
                audio_path=wav_2s,
                request_id="a1",
                span=(0.0, 3.0),
                transcript="ένα δύο τρία",
            )
        )
        words = resp.payload.words
        assert [(w.start_s, w.end_s) for w in words] == [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]

    def test_transcribe_deterministic_per_span(self, wav_2s):
        backend = mock_backend(4)
        r1 = backend.request(
            BackendRequest(op=Op.TRANSCRIBE, audio_path=wav_2s, request_id="t", span=(0.0, 1.0))
        )
        r2 = backend.request(
            BackendRequest(op=Op.TRANSCRIBE, audio_path=wav_2s, request_id="t", span=(0.0, 1.0))
        )
        r3 = backend.request(
            BackendRequest(op=Op.TRANSCRIBE, audio_path=wav_2s, request_id="t", span=(1.0, 2.0))
        )
        assert r1.payload == r2.payload
        assert r1.payload != r3.payload

    def test_missing_file_is_error_response_not_crash(self):
        backend = mock_backend(1)
        resp = backend.request(BackendRequest(op=Op.VAD, audio_path="/no/such.wav", request_id="e"))
        assert isinstance(resp.payload, BackendFailure)
        assert resp.payload.kind == "io"


class TestSubprocessBackend:
    def test_handshake_and_vad(self, wav_2s):
        with SubprocessBackend(MOCK_CMD) as backend:
            assert set(backend.capabilities) == {"VAD", "TRANSCRIBE", "ALIGN"}
            resp = call(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="v"), backend)
            assert len(resp.payload.scores) == 200

    def test_matches_in_process_mock(self, wav_2s):
        req = BackendRequest(op=Op.TRANSCRIBE, audio_path=wav_2s, request_id="t")
        with SubprocessBackend(MOCK_CMD) as backend:
            wire = backend.request(req)
        local = mock_backend(7).request(req)
        assert wire == local

    def test_concurrent_requests_correlate(self, wav_2s):
        results = {}
        errors = []
        with SubprocessBackend(MOCK_CMD) as backend:
            def worker(i):
                req = BackendRequest(
                    op=Op.TRANSCRIBE, audio_path=wav_2s, request_id=f"c{i}", span=(0.0, 1.0 + i * 0.1)
                )
                try:
                    resp = backend.request(req)
                    results[i] = (resp.request_id, resp.payload.transcript)
                except Exception as exc:  # pragma: no cover
                    errors.append(exc)

            threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        assert not errors
        assert len(results) == 16
        for i, (rid, _) in results.items():
            assert rid == f"c{i}"
        # distinct spans produce distinct transcripts: responses were not crossed
        assert len({text for _, text in results.values()}) > 1

    def test_malformed_response_is_protocol_violation(self, wav_2s):
        cmd = MOCK_CMD + ["--inject-garbage-at", "1"]
        with SubprocessBackend(cmd) as backend:
            with pytest.raises((ProtocolViolation, BackendTimeout)):
                backend.request(
                    BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="g"), timeout=10
                )

    def test_crash_fails_fast_and_restart_recovers(self, wav_2s):
        cmd = MOCK_CMD + ["--crash-after", "1"]
        backend = SubprocessBackend(cmd)
        try:
            ok = backend.request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="r1"))
            assert ok.request_id == "r1"
            with pytest.raises(BackendCrashed):
                backend.request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="r2"), timeout=10)
            backend.restart()
            again = backend.request(BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="r3"))
            assert again.request_id == "r3"
        finally:
            backend.close()

    def test_request_timeout(self, tmp_path, wav_2s):
        script = tmp_path / "sleepy.py"
        script.write_text(
            "import sys, time, json\n"
            "print(json.dumps({'type': 'handshake', 'protocol': 1, 'capabilities': ['VAD'], 'version': 's'}), flush=True)\n"
            "sys.stdin.readline()\n"
            "time.sleep(60)\n",
            encoding="utf-8",
        )
        with SubprocessBackend([sys.executable, str(script)]) as backend:
            with pytest.raises(BackendTimeout):
                backend.request(
                    BackendRequest(op=Op.VAD, audio_path=wav_2s, request_id="slow"), timeout=0.3
                )

    def test_unadvertised_op_rejected_locally(self, tmp_path, wav_2s):
        script = tmp_path / "vad_only.py"
        script.write_text(
            "import sys, json\n"
            "print(json.dumps({'type': 'handshake', 'protocol': 1, 'capabilities': ['VAD'], 'version': 'v'}), flush=True)\n"
            "for line in sys.stdin:\n"
            "    pass\n",
            encoding="utf-8",
        )
        with SubprocessBackend([sys.executable, str(script)]) as backend:
            with pytest.raises(ValueError, match="advertise"):
                call(
                    BackendRequest(op=Op.TRANSCRIBE, audio_path=wav_2s, request_id="nope"),
                    backend,
                )
