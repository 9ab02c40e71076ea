"""Golden protocol suite: 100 recorded request/response exchanges must decode
under the consumer's protocol decoder, and capability/prerequisite misuse must
come back as error responses, never crashes."""

import json
import subprocess
import sys

import pytest

corpusforge_protocol = pytest.importorskip("corpusforge.backend.protocol")

ADAPTER_CMD = [sys.executable, "-m", "corpusforge_adapters"]


def build_requests(speech_wav: str, silence_wav: str) -> list[str]:
    """100 deterministic request lines covering every op plus failure shapes."""
    lines = []

    def add(request_id, op, audio_path, span=None, transcript=None):
        lines.append(
            json.dumps(
                {
                    "type": "request",
                    "protocol": 1,
                    "id": request_id,
                    "op": op,
                    "audio_path": audio_path,
                    "span": span,
                    "language_tag": "el",
                    "transcript": transcript,
                }
            )
        )

    transcripts = [
        "ένα",
        "ένα δύο",
        "καλημέρα σε όλους",
        "η μουσική ξεκινά τώρα",
        "σήμερα μιλάμε για την ιστορία",
    ]
    i = 0
    while len(lines) < 94:
        kind = i % 5
        wav = speech_wav if i % 3 else silence_wav
        if kind == 0:
            add(f"req-{i:03d}", "VAD", wav)
        elif kind == 1:
            add(f"req-{i:03d}", "VAD", speech_wav, span=[0.5 + (i % 4), 5.5 + (i % 4)])
        elif kind == 2:
            add(f"req-{i:03d}", "TRANSCRIBE", speech_wav, span=[float(i % 5), float(i % 5) + 4.0])
        elif kind == 3:
            add(f"req-{i:03d}", "TRANSCRIBE", wav)
        else:
            add(f"req-{i:03d}", "ALIGN", speech_wav, span=[1.0, 9.0], transcript=transcripts[i % 5])
        i += 1
    # failure shapes: missing file, span outside audio, bad op, ALIGN without
    # transcript, malformed JSON, wrong protocol version
    add("req-094", "VAD", "/definitely/not/here.wav")
    add("req-095", "VAD", speech_wav, span=[500.0, 600.0])
    lines.append(
        '{"type": "request", "protocol": 1, "id": "req-096", "op": "LISTEN", '
        f'"audio_path": "{speech_wav}", "language_tag": "el"}}'
    )
    lines.append(
        '{"type": "request", "protocol": 1, "id": "req-097", "op": "ALIGN", '
        f'"audio_path": "{speech_wav}", "language_tag": "el"}}'
    )
    lines.append("{this is not json")
    lines.append(
        '{"type": "request", "protocol": 99, "id": "req-099", "op": "VAD", '
        f'"audio_path": "{speech_wav}", "language_tag": "el"}}'
    )
    assert len(lines) == 100
    return lines


def test_hundred_exchanges_decode_under_primary_decoder(speech_wav, silence_wav, tmp_path):
    requests = build_requests(speech_wav, silence_wav)
    proc = subprocess.run(
        ADAPTER_CMD,
        input="\n".join(requests) + "\n",
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    assert len(lines) == 101  # handshake + one response per request

    handshake = corpusforge_protocol.decode_handshake(lines[0])
    assert set(handshake.capabilities) == {"VAD", "TRANSCRIBE", "ALIGN"}

    exchange_log = tmp_path / "exchanges.jsonl"
    ok = errors = 0
    with open(exchange_log, "w", encoding="utf-8") as log:
        for request_line, response_line in zip(requests, lines[1:]):
            response = corpusforge_protocol.decode_response(response_line)  # must not raise
            log.write(json.dumps({"request": request_line, "response": response_line}) + "\n")
            if response.ok:
                ok += 1
            else:
                errors += 1
    assert ok + errors == 100
    assert ok == 94  # every well-formed request succeeded
    assert errors == 6  # every failure shape answered with an error response

    # spot-check payload semantics through the primary's types
    vad = corpusforge_protocol.decode_response(lines[1])
    assert vad.request_id == "req-000"
    assert vad.payload.audio_duration_s == pytest.approx(1.0)  # the silence fixture
    assert len(vad.payload.scores) == 100

    print(f"\nrecorded {ok + errors} exchanges to {exchange_log}")


def test_speechlike_fixture_yields_transcript_and_monotone_alignment(speech_wav):
    requests = [
        json.dumps(
            {
                "type": "request",
                "protocol": 1,
                "id": "asr",
                "op": "TRANSCRIBE",
                "audio_path": speech_wav,
                "span": None,
                "language_tag": "el",
                "transcript": None,
            }
        )
    ]
    proc = subprocess.run(
        ADAPTER_CMD, input="\n".join(requests) + "\n", capture_output=True, text=True, timeout=120
    )
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    asr = corpusforge_protocol.decode_response(lines[1])
    transcript = asr.payload.transcript
    assert transcript.strip(), "expected a non-empty transcript on the 10 s fixture"

    align_req = json.dumps(
        {
            "type": "request",
            "protocol": 1,
            "id": "align",
            "op": "ALIGN",
            "audio_path": speech_wav,
            "span": None,
            "language_tag": "el",
            "transcript": transcript,
        }
    )
    proc = subprocess.run(
        ADAPTER_CMD, input=align_req + "\n", capture_output=True, text=True, timeout=120
    )
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    alignment = corpusforge_protocol.decode_response(lines[1])
    words = alignment.payload.words
    assert len(words) == len(transcript.split())
    starts = [w.start_s for w in words]
    assert starts == sorted(starts)
    assert all(w.start_s < w.end_s for w in words)
