"""Episode download (resumable, atomic) and normalization to mono 16 kHz PCM WAV."""

from __future__ import annotations

import hashlib
import logging
import os
import shlex
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse

import requests

from . import audio
from .audio import UndecodableMedia, ZeroLengthAudio
from .feeds import Episode, FeedCatalog
from .records import read_records, write_records

logger = logging.getLogger(__name__)


class FetchFailed(Exception):
    pass


class ChecksumMismatch(Exception):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff_s: float = 0.2
    timeout_s: float = 30.0


@dataclass(frozen=True)
class AudioAsset:
    episode_id: str
    path: str
    sample_rate_hz: int
    channels: int
    duration_s: float
    content_sha256: str
    source_format: str

    def __post_init__(self):
        if self.sample_rate_hz != audio.TARGET_RATE_HZ:
            raise ValueError(f"asset sample rate {self.sample_rate_hz}, expected {audio.TARGET_RATE_HZ}")
        if self.channels != 1:
            raise ValueError(f"asset channel count {self.channels}, expected 1")
        if self.duration_s < 0:
            raise ValueError("duration_s must be nonnegative")

    def to_record(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "path": self.path,
            "sample_rate_hz": self.sample_rate_hz,
            "channels": self.channels,
            "duration_s": self.duration_s,
            "content_sha256": self.content_sha256,
            "source_format": self.source_format,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AudioAsset":
        return cls(**rec)


# The decoder is an external executable with a pinned argument list; {input} and
# {output} are substituted per call. Reimplementing the MP3/AAC/OGG codec zoo is
# out of scope; plain RIFF/WAVE inputs are decoded natively and skip this.
DEFAULT_DECODER_ARGV = (
    "ffmpeg",
    "-nostdin",
    "-hide_banner",
    "-loglevel",
    "error",
    "-y",
    "-i",
    "{input}",
    "-f",
    "wav",
    "{output}",
)


@dataclass(frozen=True)
class Decoder:
    argv_template: tuple[str, ...] = DEFAULT_DECODER_ARGV
    timeout_s: float = 300.0

    @classmethod
    def from_command(cls, command: str) -> "Decoder":
        return cls(tuple(shlex.split(command)))

    def decode_to_wav(self, raw_path: Path, out_path: Path) -> None:
        argv = [part.format(input=str(raw_path), output=str(out_path)) for part in self.argv_template]
        try:
            proc = subprocess.run(
                argv,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                timeout=self.timeout_s,
                check=False,
            )
        except FileNotFoundError as exc:
            raise UndecodableMedia(f"decoder executable not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise UndecodableMedia(f"decoder timed out on {raw_path}") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.decode("utf-8", "replace").strip()
            raise UndecodableMedia(f"decoder failed on {raw_path}: {stderr[:500]}")
        if not out_path.exists() or not audio.is_riff_wave(out_path):
            raise UndecodableMedia(f"decoder produced no WAV output for {raw_path}")


def _media_suffix(url: str) -> str:
    suffix = Path(urlparse(url).path).suffix.lower()
    return suffix if suffix and len(suffix) <= 6 else ".media"


def fetch_episode(
    episode: Episode,
    dest: str | Path,
    policy: RetryPolicy | None = None,
    expected_sha256: str | None = None,
) -> Path:
    """Download an episode's enclosure with range-request resumption.

    The complete file only ever appears at its final path via an atomic rename;
    interrupted transfers leave a .part file that the next attempt resumes.
    An already-complete file short-circuits with no network traffic.
    """
    policy = policy or RetryPolicy()
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    final = dest / f"{episode.episode_id}{_media_suffix(episode.enclosure_url)}"
    if final.exists():
        return final
    part = final.with_suffix(final.suffix + ".part")

    last_error: Exception | None = None
    for attempt in range(policy.max_retries + 1):
        if attempt:
            time.sleep(policy.backoff_s * attempt)
        try:
            _download(episode.enclosure_url, part, policy.timeout_s)
            break
        except requests.RequestException as exc:
            last_error = exc
            logger.warning(
                "%s: download attempt %d/%d failed: %s",
                episode.episode_id,
                attempt + 1,
                policy.max_retries + 1,
                exc,
            )
    else:
        raise FetchFailed(f"{episode.enclosure_url}: {last_error}")

    if expected_sha256 is not None:
        digest = _file_sha256(part)
        if digest != expected_sha256:
            part.unlink(missing_ok=True)
            raise ChecksumMismatch(
                f"{episode.episode_id}: digest {digest} != declared {expected_sha256}"
            )
    os.replace(part, final)
    return final


def _download(url: str, part: Path, timeout_s: float) -> None:
    headers = {}
    offset = part.stat().st_size if part.exists() else 0
    if offset:
        headers["Range"] = f"bytes={offset}-"
    with requests.get(url, headers=headers, stream=True, timeout=timeout_s) as resp:
        resp.raise_for_status()
        if resp.status_code == 206:
            mode = "ab"
        else:
            mode = "wb"  # server ignored the range; restart from scratch
            offset = 0
        expected = resp.headers.get("Content-Length")
        received = 0
        with open(part, mode) as fh:
            for chunk in resp.iter_content(chunk_size=256 * 1024):
                fh.write(chunk)
                received += len(chunk)
            fh.flush()
            os.fsync(fh.fileno())
        if expected is not None and received < int(expected):
            raise requests.ConnectionError(
                f"short read: got {received} of {expected} bytes (will resume)"
            )


def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def normalize_audio(
    raw: str | Path,
    out_path: str | Path,
    episode_id: str,
    decoder: Decoder | None = None,
) -> AudioAsset:
    """Convert any decodable media file to mono 16 kHz s16le WAV.

    Multi-channel inputs are downmixed by arithmetic mean before resampling.
    Inputs that are already mono 16 kHz 16-bit PCM are copied bit-exactly.
    """
    raw = Path(raw)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    if audio.is_riff_wave(raw):
        wav_path = raw
        tmp_decoded = None
    else:
        decoder = decoder or Decoder()
        fd, tmp = tempfile.mkstemp(suffix=".wav", dir=out_path.parent)
        os.close(fd)
        tmp_decoded = Path(tmp)
        decoder.decode_to_wav(raw, tmp_decoded)
        wav_path = tmp_decoded

    try:
        rate, channels, frames, _ = audio.wav_info(wav_path)
        if frames == 0:
            raise ZeroLengthAudio(f"{raw}: media decodes to zero frames")
        source_format = f"{raw.suffix.lstrip('.') or 'wav'}/pcm/{rate}Hz/{channels}ch"

        if rate == audio.TARGET_RATE_HZ and channels == 1 and _is_pcm16(wav_path):
            pcm = audio.read_wav_pcm16(wav_path)[0][:, 0]
        else:
            samples, rate_in = audio.read_wav(wav_path)
            mono = audio.downmix_mean(samples)
            mono = audio.resample(mono, rate_in)
            pcm = audio.to_int16(mono)
        if pcm.size == 0:
            raise ZeroLengthAudio(f"{raw}: zero frames after normalization")

        tmp_out = out_path.with_suffix(out_path.suffix + ".tmp")
        audio.write_wav_mono16(tmp_out, pcm)
        os.replace(tmp_out, out_path)
    finally:
        if tmp_decoded is not None:
            tmp_decoded.unlink(missing_ok=True)

    return AudioAsset(
        episode_id=episode_id,
        path=str(out_path),
        sample_rate_hz=audio.TARGET_RATE_HZ,
        channels=1,
        duration_s=pcm.size / audio.TARGET_RATE_HZ,
        content_sha256=hashlib.sha256(pcm.tobytes()).hexdigest(),
        source_format=source_format,
    )


def _is_pcm16(path: Path) -> bool:
    import wave

    try:
        with wave.open(str(path), "rb") as wf:
            return wf.getsampwidth() == 2
    except (wave.Error, EOFError, OSError):
        return False


@dataclass
class IngestResult:
    assets: list[AudioAsset] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (episode_id, reason)
    per_category_s: dict[str, float] = field(default_factory=dict)


def _episode_order_key(episode: Episode) -> tuple:
    # Publish-date descending (unknown dates last), then id: deterministic cap selection.
    date = episode.publish_date
    return (0, _invert(date), episode.episode_id) if date else (1, "", episode.episode_id)


def _invert(date: str) -> str:
    # Lexicographic inversion of an ISO timestamp for descending sort.
    return "".join(chr(0x10FFFF - ord(c)) for c in date)


def ingest_catalog(
    catalog: FeedCatalog,
    workdir: str | Path,
    policy: RetryPolicy | None = None,
    cap_hours_per_category: float | None = None,
    decoder: Decoder | None = None,
    max_workers: int | None = None,
) -> IngestResult:
    """Fetch and normalize catalog episodes, newest first per category.

    When a per-category hour cap is set, a category stops ingesting once its
    running total reaches the cap. Categories are processed in parallel (the
    cap makes episode selection sequential within one category); the asset
    index is written once, at the end, by the single coordinating thread.
    Reruns skip episodes whose normalized asset is already indexed, so an
    unchanged catalog performs no re-downloads.
    """
    if not catalog.episodes:
        raise ValueError("catalog is empty")
    workdir = Path(workdir)
    media_dir = workdir / "media"
    asset_dir = workdir / "assets"
    index_path = asset_dir / "assets.jsonl"
    asset_dir.mkdir(parents=True, exist_ok=True)

    existing = load_asset_index(index_path) if index_path.exists() else {}
    cap_s = None if cap_hours_per_category is None else cap_hours_per_category * 3600.0

    by_category: dict[str, list[Episode]] = {}
    for ep in catalog.episodes:
        by_category.setdefault(ep.category, []).append(ep)

    def ingest_category(category: str) -> tuple[list[AudioAsset], list[tuple[str, str]], float]:
        assets: list[AudioAsset] = []
        failures: list[tuple[str, str]] = []
        total_s = 0.0
        for episode in sorted(by_category[category], key=_episode_order_key):
            if cap_s is not None and total_s >= cap_s:
                break
            asset = existing.get(episode.episode_id)
            if asset is not None and Path(asset.path).exists():
                assets.append(asset)
                total_s += asset.duration_s
                continue
            try:
                raw = fetch_episode(episode, media_dir, policy)
                asset = normalize_audio(
                    raw, asset_dir / f"{episode.episode_id}.wav", episode.episode_id, decoder
                )
            except (FetchFailed, ChecksumMismatch, UndecodableMedia, ZeroLengthAudio) as exc:
                logger.warning("%s: ingest failed: %s", episode.episode_id, exc)
                failures.append((episode.episode_id, str(exc)))
                continue
            assets.append(asset)
            total_s += asset.duration_s
        return assets, failures, total_s

    workers = max_workers or min(len(by_category), (os.cpu_count() or 2) * 2)
    result = IngestResult()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = {cat: pool.submit(ingest_category, cat) for cat in sorted(by_category)}
        for category in sorted(outcomes):
            assets, failures, total_s = outcomes[category].result()
            result.assets.extend(assets)
            result.failures.extend(failures)
            result.per_category_s[category] = total_s

    save_asset_index(result.assets, index_path)
    return result


def save_asset_index(assets: list[AudioAsset], path: str | Path) -> int:
    ordered = sorted(assets, key=lambda a: a.episode_id)
    return write_records(path, (a.to_record() for a in ordered))


def load_asset_index(path: str | Path) -> dict[str, AudioAsset]:
    return {rec["episode_id"]: AudioAsset.from_record(rec) for rec in read_records(path)}
