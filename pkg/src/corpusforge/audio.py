"""WAV/PCM reading, mean downmix, resampling, and 16 kHz mono s16le output."""

from __future__ import annotations

import hashlib
import math
import wave
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE_HZ = 16000


class UndecodableMedia(Exception):
    pass


class ZeroLengthAudio(Exception):
    pass


def is_riff_wave(path: str | Path) -> bool:
    try:
        with open(path, "rb") as fh:
            header = fh.read(12)
    except OSError:
        return False
    return len(header) == 12 and header[:4] == b"RIFF" and header[8:12] == b"WAVE"


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read integer PCM WAV into float64 samples in [-1, 1], shape (frames, channels)."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.getnframes()
            raw = wf.readframes(frames)
    except (wave.Error, EOFError, OSError) as exc:
        raise UndecodableMedia(f"{path}: {exc}") from exc

    if sampwidth == 1:  # unsigned 8-bit
        data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
        data = (data - 128.0) / 128.0
    elif sampwidth == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif sampwidth == 3:
        as_bytes = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        ints = (
            as_bytes[:, 0].astype(np.int32)
            | (as_bytes[:, 1].astype(np.int32) << 8)
            | (as_bytes[:, 2].astype(np.int32) << 16)
        )
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        data = ints.astype(np.float64) / float(1 << 23)
    elif sampwidth == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise UndecodableMedia(f"{path}: unsupported sample width {sampwidth}")

    if channels < 1:
        raise UndecodableMedia(f"{path}: channel count {channels}")
    return data.reshape(-1, channels), rate


def read_wav_pcm16(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Read a WAV, returning raw int16 samples (frames, channels), rate, sampwidth."""
    with wave.open(str(path), "rb") as wf:
        channels = wf.getnchannels()
        sampwidth = wf.getsampwidth()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    if sampwidth != 2:
        raise UndecodableMedia(f"{path}: expected 16-bit PCM, got sample width {sampwidth}")
    return np.frombuffer(raw, dtype="<i2").reshape(-1, channels), rate, sampwidth


def downmix_mean(samples: np.ndarray) -> np.ndarray:
    """Arithmetic-mean downmix across channels; identical channels pass through exactly."""
    if samples.ndim == 1:
        return samples
    if samples.shape[1] == 1:
        return samples[:, 0]
    return samples.mean(axis=1)


def resample(mono: np.ndarray, rate_in: int, rate_out: int = TARGET_RATE_HZ) -> np.ndarray:
    if rate_in == rate_out:
        return mono
    g = math.gcd(rate_in, rate_out)
    return resample_poly(mono, rate_out // g, rate_in // g)


def to_int16(mono: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(mono * 32768.0), -32768, 32767).astype("<i2")


def write_wav_mono16(path: str | Path, pcm: np.ndarray, rate: int = TARGET_RATE_HZ) -> None:
    """Write canonical RIFF/WAVE, PCM s16le, one channel."""
    pcm = np.ascontiguousarray(pcm, dtype="<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


def wav_pcm_payload(path: str | Path) -> bytes:
    """Raw PCM bytes of a WAV data chunk (what the content digest covers)."""
    with wave.open(str(path), "rb") as wf:
        return wf.readframes(wf.getnframes())


def wav_info(path: str | Path) -> tuple[int, int, int, float]:
    """(rate, channels, frames, duration_s) of a WAV file."""
    with wave.open(str(path), "rb") as wf:
        rate = wf.getframerate()
        channels = wf.getnchannels()
        frames = wf.getnframes()
    return rate, channels, frames, frames / rate if rate else 0.0


def pcm_sha256(path: str | Path) -> str:
    return hashlib.sha256(wav_pcm_payload(path)).hexdigest()
