import sys
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from corpusforge import audio

E2E_CATEGORIES = ["Arts", "Comedy", "Education", "News"]
E2E_EPISODES_PER_CATEGORY = 5
E2E_EPISODE_SECONDS = 30.0  # 4 x 5 x 30 s = 10 minutes of audio
MOCK_BACKEND_CMD = f"{sys.executable} -m corpusforge.backend.mock --seed 7"


class FixtureServer:
    """Local HTTP server with per-path bodies, range support, and fault injection."""

    def __init__(self):
        self.routes: dict[str, bytes] = {}
        self.status_overrides: dict[str, int] = {}
        # path -> number of remaining times to drop the connection mid-body
        self.disconnect_after: dict[str, tuple[int, int]] = {}  # (byte_offset, times)
        self.request_log: list[str] = []
        self._lock = threading.Lock()

        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def do_GET(self):
                with server._lock:
                    server.request_log.append(self.path)
                    status = server.status_overrides.get(self.path)
                    body = server.routes.get(self.path)
                    fault = server.disconnect_after.get(self.path)
                    if fault and fault[1] > 0:
                        server.disconnect_after[self.path] = (fault[0], fault[1] - 1)
                        cut_at = fault[0]
                    else:
                        cut_at = None
                if status is not None:
                    self.send_error(status)
                    return
                if body is None:
                    self.send_error(HTTPStatus.NOT_FOUND)
                    return

                start = 0
                range_header = self.headers.get("Range")
                if range_header and range_header.startswith("bytes="):
                    start = int(range_header.split("=")[1].rstrip("-").split("-")[0])
                    self.send_response(HTTPStatus.PARTIAL_CONTENT)
                    self.send_header("Content-Range", f"bytes {start}-{len(body)-1}/{len(body)}")
                    payload = body[start:]
                else:
                    self.send_response(HTTPStatus.OK)
                    payload = body
                self.send_header("Content-Length", str(len(payload)))
                self.send_header("Content-Type", "application/octet-stream")
                self.end_headers()

                if cut_at is not None and cut_at > start:
                    self.wfile.write(payload[: cut_at - start])
                    self.wfile.flush()
                    # drop the TCP connection mid-transfer
                    self.connection.close()
                    return
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def url(self, path: str) -> str:
        return self.base_url + path

    def add(self, path: str, body: bytes) -> str:
        self.routes[path] = body
        return self.url(path)

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def http_server():
    server = FixtureServer()
    yield server
    server.close()


def make_tone_wav(path, duration_s=2.0, rate=44100, channels=2, freq=440.0, amplitude=0.5):
    """Synthesize an integer-PCM WAV test file; returns the raw int16 array."""
    t = np.arange(int(round(duration_s * rate))) / rate
    mono = amplitude * np.sin(2 * np.pi * freq * t)
    pcm = audio.to_int16(mono)
    data = np.repeat(pcm[:, None], channels, axis=1) if channels > 1 else pcm[:, None]
    import wave

    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(np.ascontiguousarray(data, dtype="<i2").tobytes())
    return data


def rss_feed(podcast: str, items: list[tuple[str, str]]) -> bytes:
    """Minimal RSS 2.0 document with one audio enclosure per item."""
    chunks = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<rss version="2.0"><channel>',
        f"<title>{podcast}</title>",
    ]
    for day, (guid, url) in enumerate(items, start=1):
        chunks.append(
            "<item>"
            f"<title>{guid}</title><guid>{guid}</guid>"
            f'<enclosure url="{url}" type="audio/wav"/>'
            f"<pubDate>Mon, {day:02d} Jul 2024 10:00:00 GMT</pubDate>"
            "</item>"
        )
    chunks.append("</channel></rss>")
    return "".join(chunks).encode("utf-8")


@pytest.fixture
def e2e_workspace(http_server, tmp_path):
    """Synthetic 10-minute multi-category fixture: feeds + audio behind a local server."""
    feed_lines = []
    for c, category in enumerate(E2E_CATEGORIES):
        items = []
        for i in range(E2E_EPISODES_PER_CATEGORY):
            wav_path = tmp_path / f"src_{category}_{i}.wav"
            make_tone_wav(
                wav_path,
                duration_s=E2E_EPISODE_SECONDS,
                rate=16000,
                channels=1,
                freq=170.0 + 31.0 * (c * E2E_EPISODES_PER_CATEGORY + i),
            )
            url = http_server.add(f"/audio/{category}_{i}.wav", wav_path.read_bytes())
            items.append((f"{category}-ep{i}", url))
        feed_url = http_server.add(f"/feeds/{category}.xml", rss_feed(f"{category} Pod", items))
        feed_lines.append(f"{feed_url}\t{category}")

    feeds_file = tmp_path / "feeds.tsv"
    feeds_file.write_text("\n".join(feed_lines) + "\n", encoding="utf-8")

    root = tmp_path / "ws"
    config_file = tmp_path / "pipeline.ini"
    config_file.write_text(
        f"""[workspace]
root = {root}

[crawl]
feeds = {feeds_file}

[backend]
command = {MOCK_BACKEND_CMD}

[sample]
hours_per_category = 0.018
test_s_per_cat = 12
val_s_per_cat = 6
subsets_h =
seed = 3
name = GPC-E2E

[evaluate]
hyps = self
split = test
""",
        encoding="utf-8",
    )
    return config_file, root


def make_speechlike_wav(path, duration_s=10.0, rate=16000, seed=0, pause_every_s=2.0):
    """Bursty amplitude-modulated harmonics with pauses: enough structure for
    energy-based VAD and burst counting without any real speech."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    pitch = 120.0 + 30.0 * np.sin(2 * np.pi * 0.4 * t)
    signal = np.zeros(n)
    for k in (1, 2, 3):
        signal += np.sin(2 * np.pi * k * np.cumsum(pitch) / rate) / k
    syllables = 0.5 * (1.0 + np.sin(2 * np.pi * 3.5 * t + rng.uniform(0, 2 * np.pi)))
    signal *= syllables
    # silence gaps
    gap = np.ones(n)
    period = int(pause_every_s * rate)
    for start in range(period - rate // 3, n, period):
        gap[start : start + rate // 3] = 0.0
    signal = 0.4 * signal * gap + 0.001 * rng.standard_normal(n)
    audio.write_wav_mono16(path, audio.to_int16(signal), rate)
    return path
