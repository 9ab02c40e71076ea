"""Long-running protocol process: load models, handshake, answer requests."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

from . import __version__, models, wire


@dataclass(frozen=True)
class AdapterConfig:
    vad_model: str | None = "energy"
    asr_model: str | None = "burst"
    aligner_model: str | None = "even"
    device: str = "cpu"
    batch_size: int = 1
    language_tag: str = "el"

    def __post_init__(self):
        if not (self.vad_model or self.asr_model or self.aligner_model):
            raise ValueError("at least one capability must be configured")


class Adapter:
    def __init__(self, config: AdapterConfig):
        self.config = config
        self.vad = models.make_vad(config.vad_model) if config.vad_model else None
        self.asr = (
            models.make_asr(config.asr_model, config.device, config.batch_size)
            if config.asr_model
            else None
        )
        self.aligner = models.make_aligner(config.aligner_model) if config.aligner_model else None

    @property
    def capabilities(self) -> list[str]:
        caps = []
        if self.vad:
            caps.append("VAD")
        if self.asr:
            caps.append("TRANSCRIBE")
        if self.aligner:
            caps.append("ALIGN")
        return caps

    def answer(self, req: wire.Request) -> str:
        try:
            if req.op == "VAD":
                if not self.vad:
                    return wire.error_line(req.request_id, req.op, "capability", "VAD not configured")
                audio = models.load_audio(req.audio_path, req.span)
                hop, duration, scores = self.vad.score(audio)
                return wire.ok_line(req.request_id, req.op, wire.vad_result(hop, duration, scores))
            if req.op == "TRANSCRIBE":
                if not self.asr:
                    return wire.error_line(
                        req.request_id, req.op, "capability", "TRANSCRIBE not configured"
                    )
                audio = models.load_audio(req.audio_path, req.span)
                language = req.language_tag or self.config.language_tag
                text, detected = self.asr.transcribe(audio, language)
                return wire.ok_line(
                    req.request_id, req.op, wire.transcript_result(text, detected)
                )
            # ALIGN
            if not self.aligner:
                return wire.error_line(req.request_id, req.op, "capability", "ALIGN not configured")
            audio = models.load_audio(req.audio_path, req.span)
            offset = req.span[0] if req.span else 0.0
            words = self.aligner.align(audio, req.transcript, offset)
            return wire.ok_line(req.request_id, req.op, wire.alignment_result(words))
        except models.RequestError as exc:
            return wire.error_line(req.request_id, req.op, "io", str(exc))
        except Exception as exc:  # stay alive on any per-request failure
            return wire.error_line(
                req.request_id, req.op, "internal", f"{type(exc).__name__}: {exc}"
            )


def serve(config: AdapterConfig, stdin=None, stdout=None) -> None:
    """Load models, emit the handshake, then answer one request per line."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    adapter = Adapter(config)  # model-load failure raises before the handshake

    def emit(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    emit(wire.handshake_line(adapter.capabilities, f"corpusforge-adapter/{__version__}"))
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = wire.decode_request(line)
        except wire.BadRequest as exc:
            emit(wire.error_line(None, None, "protocol", str(exc)))
            continue
        emit(adapter.answer(req))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="VAD/ASR/alignment backend speaking the corpusforge wire protocol on stdio"
    )
    parser.add_argument("--vad-model", default="energy", help="'energy', 'pyannote:<id>', or 'none'")
    parser.add_argument("--asr-model", default="burst", help="'burst', 'whisper:<id>', or 'none'")
    parser.add_argument("--aligner-model", default="even", help="'even', 'ctc:<id-or-path>', or 'none'")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    parser.add_argument("--language", default="el")
    args = parser.parse_args(argv)

    def opt(value: str) -> str | None:
        return None if value == "none" else value

    try:
        config = AdapterConfig(
            vad_model=opt(args.vad_model),
            asr_model=opt(args.asr_model),
            aligner_model=opt(args.aligner_model),
            device=args.device,
            batch_size=args.batch_size,
            language_tag=args.language,
        )
        serve(config)
    except (models.ModelLoadError, ValueError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
