import wave

import numpy as np
import pytest


def write_wav_mono16(path, samples: np.ndarray, rate=16000):
    pcm = np.clip(np.rint(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())
    return path


def speechlike(duration_s=10.0, rate=16000, seed=0):
    """Amplitude-modulated harmonics with pauses: bursts for the energy models."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    pitch = 120.0 + 30.0 * np.sin(2 * np.pi * 0.4 * t)
    signal = np.zeros(n)
    for k in (1, 2, 3):
        signal += np.sin(2 * np.pi * k * np.cumsum(pitch) / rate) / k
    syllables = 0.5 * (1.0 + np.sin(2 * np.pi * 3.5 * t + 0.7))
    signal *= syllables
    gap = np.ones(n)
    period = int(2.0 * rate)
    for start in range(period - rate // 3, n, period):
        gap[start : start + rate // 3] = 0.0
    return 0.4 * signal * gap + 0.001 * rng.standard_normal(n)


@pytest.fixture(scope="session")
def speech_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("audio") / "speechlike_10s.wav"
    return str(write_wav_mono16(path, speechlike(10.0)))


@pytest.fixture(scope="session")
def silence_wav(tmp_path_factory):
    path = tmp_path_factory.mktemp("audio") / "silence_1s.wav"
    return str(write_wav_mono16(path, np.zeros(16000)))
