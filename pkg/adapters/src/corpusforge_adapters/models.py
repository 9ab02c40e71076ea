"""Model implementations behind the adapter.

Model identifiers select the implementation:

- VAD: ``energy`` (built-in frame-RMS scorer) or ``pyannote:<model-id>``.
- ASR: ``burst`` (built-in energy-burst placeholder transcriber, for protocol
  and pipeline smoke tests only) or ``whisper:<model-id>`` via transformers.
- Aligner: ``even`` (uniform split with energy confidences) or
  ``ctc:<model-id-or-path>``, real CTC forced alignment over any
  Wav2Vec2ForCTC checkpoint.

The neural wrappers import torch/transformers/pyannote lazily so the
self-contained models run without any ML stack installed.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

FRAME_HOP_S = 0.01
FRAME_WIN_S = 0.025


class ModelLoadError(Exception):
    pass


class RequestError(Exception):
    """Per-request failure; becomes an error response, the process stays up."""


@dataclass(frozen=True)
class Audio:
    samples: np.ndarray  # float64 mono in [-1, 1]
    rate: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate


def load_audio(path: str, span: tuple[float, float] | None = None) -> Audio:
    try:
        with wave.open(path, "rb") as wf:
            rate = wf.getframerate()
            channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            raw = wf.readframes(wf.getnframes())
    except (OSError, EOFError, wave.Error) as exc:
        raise RequestError(f"cannot read {path}: {exc}") from exc
    if sampwidth != 2:
        raise RequestError(f"{path}: expected 16-bit PCM, got width {sampwidth}")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    if span is not None:
        start, end = span
        i0 = int(round(start * rate))
        i1 = min(len(data), int(round(end * rate)))
        if i0 >= len(data):
            raise RequestError(f"span {span} lies outside the audio ({len(data)/rate:.2f}s)")
        data = data[i0:i1]
    if data.size == 0:
        raise RequestError(f"{path}: no samples")
    return Audio(data, rate)


def frame_count(duration_s: float, hop_s: float = FRAME_HOP_S) -> int:
    return math.ceil(duration_s / hop_s - 1e-9)


def frame_rms(audio: Audio, hop_s: float = FRAME_HOP_S, win_s: float = FRAME_WIN_S) -> np.ndarray:
    n = frame_count(audio.duration_s, hop_s)
    hop = int(round(hop_s * audio.rate))
    win = max(1, int(round(win_s * audio.rate)))
    sq = np.concatenate([audio.samples**2, np.zeros(win)])
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    rms = np.empty(n)
    for i in range(n):
        a = i * hop
        b = min(a + win, len(sq))
        rms[i] = math.sqrt(max(0.0, (csum[b] - csum[a]) / max(1, b - a)))
    return rms


class EnergyVad:
    """Frame-RMS speech scorer normalized by the file's loud percentile.

    The RMS track is smoothed over ~200 ms before normalization so scores stay
    high through syllable-rate energy dips, the way a speech-trained VAD's do;
    without it, hysteresis segmentation would shred voiced stretches at every
    amplitude trough.
    """

    SMOOTH_S = 0.2

    def __init__(self, model_id: str = "energy"):
        self.model_id = model_id

    def score(self, audio: Audio) -> tuple[float, float, list[float]]:
        rms = frame_rms(audio)
        win = max(1, int(round(self.SMOOTH_S / FRAME_HOP_S)))
        kernel = np.ones(win) / win
        smoothed = np.convolve(rms, kernel, mode="same")
        loud = float(np.percentile(smoothed, 95))
        if loud <= 0.0:
            scores = np.zeros_like(smoothed)
        else:
            scores = np.clip(smoothed / loud, 0.0, 1.0)
        return FRAME_HOP_S, audio.duration_s, [float(s) for s in scores]


def _burst_spans(audio: Audio, min_burst_s: float = 0.04) -> list[tuple[int, int]]:
    """Contiguous supra-threshold envelope runs, in frame indices."""
    rms = frame_rms(audio)
    loud = float(np.percentile(rms, 90))
    if loud <= 0.0:
        return []
    above = rms >= 0.5 * loud
    min_frames = max(1, int(round(min_burst_s / FRAME_HOP_S)))
    spans = []
    start = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= min_frames:
                spans.append((start, i))
            start = None
    if start is not None and len(above) - start >= min_frames:
        spans.append((start, len(above)))
    return spans


class BurstTranscriber:
    """Placeholder ASR: one pseudo-word per detected energy burst.

    Emits Greek-script tokens so downstream code-switch filtering treats the
    output as in-language text. Useful for protocol conformance and pipeline
    smoke runs, not for real transcription.
    """

    def __init__(self, model_id: str = "burst"):
        self.model_id = model_id

    def transcribe(self, audio: Audio, language_tag: str) -> tuple[str, str]:
        bursts = _burst_spans(audio)
        words = [f"ηχο{i}" for i in range(len(bursts))]
        return " ".join(words), language_tag


class EvenAligner:
    """Uniform word spread over the span; confidence from local signal energy."""

    def __init__(self, model_id: str = "even"):
        self.model_id = model_id

    def align(
        self, audio: Audio, transcript: str, offset_s: float
    ) -> list[tuple[str, float, float, float]]:
        words = transcript.split()
        if not words:
            return []
        rms = frame_rms(audio)
        loud = float(np.percentile(rms, 95)) or 1.0
        step = audio.duration_s / len(words)
        out = []
        for i, word in enumerate(words):
            f0 = int(i * step / FRAME_HOP_S)
            f1 = max(f0 + 1, int((i + 1) * step / FRAME_HOP_S))
            local = float(np.mean(rms[f0:min(f1, len(rms))])) if len(rms) else 0.0
            confidence = min(1.0, max(0.0, local / loud))
            out.append((word, offset_s + i * step, offset_s + (i + 1) * step, round(confidence, 4)))
        return out


class CtcAligner:
    """Word-level forced alignment with a Wav2Vec2 CTC model.

    Builds the standard alignment trellis over (frames x transcript tokens)
    from the model's log-probabilities, backtracks the best monotone path, and
    groups token frame ranges into word timings at the delimiter token.
    """

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import Wav2Vec2ForCTC, Wav2Vec2Processor
        except ImportError as exc:
            raise ModelLoadError(f"transformers/torch unavailable: {exc}") from exc
        self._torch = torch
        try:
            self.processor = Wav2Vec2Processor.from_pretrained(model_id)
            self.model = Wav2Vec2ForCTC.from_pretrained(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load CTC model {model_id!r}: {exc}") from exc
        self.model.eval()
        self.model_id = model_id

    def _emission(self, audio: Audio) -> np.ndarray:
        torch = self._torch
        rate = self.processor.feature_extractor.sampling_rate
        samples = audio.samples
        if audio.rate != rate:
            n_out = int(round(len(samples) * rate / audio.rate))
            samples = np.interp(
                np.linspace(0.0, len(samples), n_out, endpoint=False),
                np.arange(len(samples)),
                samples,
            )
        inputs = self.processor(samples, sampling_rate=rate, return_tensors="pt")
        with torch.no_grad():
            logits = self.model(inputs.input_values).logits[0]
        return torch.log_softmax(logits, dim=-1).numpy()

    def _token_ids(self, transcript: str) -> tuple[list[int], list[int]]:
        """Flat token id sequence with word-delimiter ids between words, plus
        the index of the last token of each word."""
        tokenizer = self.processor.tokenizer
        delim_id = tokenizer.convert_tokens_to_ids(tokenizer.word_delimiter_token)
        unk_id = tokenizer.unk_token_id
        vocab = tokenizer.get_vocab()
        ids: list[int] = []
        word_ends: list[int] = []
        words = transcript.lower().split()
        for w, word in enumerate(words):
            for ch in word:
                ids.append(vocab.get(ch, unk_id))
            word_ends.append(len(ids) - 1)
            if w != len(words) - 1:
                ids.append(delim_id)
        return ids, word_ends

    def align(
        self, audio: Audio, transcript: str, offset_s: float
    ) -> list[tuple[str, float, float, float]]:
        words = transcript.split()
        if not words:
            return []
        emission = self._emission(audio)
        tokens, word_ends = self._token_ids(transcript)
        t_frames, _ = emission.shape
        if t_frames < len(tokens):
            raise RequestError(
                f"audio too short to align: {t_frames} frames for {len(tokens)} tokens"
            )
        blank = self.processor.tokenizer.pad_token_id

        neg_inf = -1e30
        j = len(tokens)
        trellis = np.full((t_frames + 1, j + 1), neg_inf)
        trellis[0, 0] = 0.0
        trellis[1:, 0] = np.cumsum(emission[:, blank])
        for t in range(t_frames):
            stay = trellis[t, 1:] + emission[t, blank]
            advance = trellis[t, :-1] + emission[t, tokens]
            trellis[t + 1, 1:] = np.maximum(stay, advance)

        # backtrack: one emitting frame per token, monotone by construction
        token_frame = [0] * j
        tj = j
        for t in range(t_frames, 0, -1):
            if tj == 0:
                break
            advance = trellis[t - 1, tj - 1] + emission[t - 1, tokens[tj - 1]]
            if trellis[t, tj] <= advance + 1e-12:
                tj -= 1
                token_frame[tj] = t - 1

        hop_s = audio.duration_s / t_frames
        out = []
        token_pos = 0
        for w, word in enumerate(words):
            first = token_frame[token_pos]
            last = token_frame[word_ends[w]]
            start = offset_s + first * hop_s
            end = offset_s + (last + 1) * hop_s
            path_logp = float(
                np.mean([emission[token_frame[k], tokens[k]] for k in range(token_pos, word_ends[w] + 1)])
            )
            confidence = min(1.0, max(0.0, math.exp(path_logp)))
            out.append((word, start, end, round(confidence, 4)))
            token_pos = word_ends[w] + 2  # skip the delimiter token
        return out


class WhisperAsr:
    """Transcription via a transformers Whisper checkpoint."""

    def __init__(self, model_id: str, device: str = "cpu", batch_size: int = 1):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise ModelLoadError(f"transformers unavailable: {exc}") from exc
        try:
            self.pipe = pipeline(
                "automatic-speech-recognition",
                model=model_id,
                device=device,
                batch_size=batch_size,
            )
        except Exception as exc:
            raise ModelLoadError(f"cannot load ASR model {model_id!r}: {exc}") from exc
        self.model_id = model_id

    def transcribe(self, audio: Audio, language_tag: str) -> tuple[str, str]:
        result = self.pipe(
            {"raw": audio.samples.astype(np.float32), "sampling_rate": audio.rate},
            generate_kwargs={"language": language_tag, "task": "transcribe"},
        )
        return result["text"].strip(), language_tag


class PyannoteVad:
    """Frame scores from a pyannote voice-activity pipeline."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            from pyannote.audio import Pipeline
        except ImportError as exc:
            raise ModelLoadError(f"pyannote.audio unavailable: {exc}") from exc
        try:
            self.pipeline = Pipeline.from_pretrained(model_id)
        except Exception as exc:
            raise ModelLoadError(f"cannot load VAD model {model_id!r}: {exc}") from exc
        self.model_id = model_id

    def score(self, audio: Audio) -> tuple[float, float, list[float]]:
        annotation = self.pipeline({"waveform": self._tensor(audio), "sample_rate": audio.rate})
        n = frame_count(audio.duration_s)
        scores = np.zeros(n)
        for segment in annotation.get_timeline():
            f0 = max(0, int(segment.start / FRAME_HOP_S))
            f1 = min(n, int(math.ceil(segment.end / FRAME_HOP_S)))
            scores[f0:f1] = 1.0
        return FRAME_HOP_S, audio.duration_s, [float(s) for s in scores]

    def _tensor(self, audio: Audio):
        import torch

        return torch.from_numpy(audio.samples.astype(np.float32)).unsqueeze(0)


def make_vad(model_id: str):
    if model_id == "energy":
        return EnergyVad()
    if model_id.startswith("pyannote:"):
        return PyannoteVad(model_id.split(":", 1)[1])
    raise ModelLoadError(f"unknown VAD model {model_id!r}")


def make_asr(model_id: str, device: str, batch_size: int):
    if model_id == "burst":
        return BurstTranscriber()
    if model_id.startswith("whisper:"):
        return WhisperAsr(model_id.split(":", 1)[1], device=device, batch_size=batch_size)
    raise ModelLoadError(f"unknown ASR model {model_id!r}")


def make_aligner(model_id: str):
    if model_id == "even":
        return EvenAligner()
    if model_id.startswith("ctc:"):
        return CtcAligner(model_id.split(":", 1)[1])
    raise ModelLoadError(f"unknown aligner model {model_id!r}")
