"""Podcast RSS/Atom crawling, parsing, and per-category catalog accounting."""

from __future__ import annotations

import hashlib
import logging
import threading
import time
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from email.utils import parsedate_to_datetime
from pathlib import Path
from urllib.parse import urlparse

import requests

from .records import read_records, write_records

logger = logging.getLogger(__name__)

_ATOM_NS = "{http://www.w3.org/2005/Atom}"
_ITUNES_NS = "{http://www.itunes.com/dtds/podcast-1.0.dtd}"

_AUDIO_EXTENSIONS = (".mp3", ".m4a", ".m4b", ".aac", ".ogg", ".opus", ".wav", ".flac")

# Default category set: the 16 podcast domains the corpus is stratified over.
DEFAULT_CATEGORIES = (
    "Arts",
    "Business",
    "Comedy",
    "Education",
    "HealthFitness",
    "History",
    "KidsFamily",
    "Leisure",
    "Music",
    "News",
    "Science",
    "SocietyCulture",
    "Sports",
    "Technology",
    "TrueCrime",
    "TVFilm",
)


class FeedError(Exception):
    pass


class MalformedFeed(FeedError):
    """The document is not well-formed XML."""


class UnsupportedFeedFormat(FeedError):
    """Well-formed XML, but neither RSS 2.0 nor Atom."""


class EmptyFeed(FeedError):
    """The feed carries zero items/entries."""


class AllSourcesFailed(FeedError):
    """Every feed in a crawl errored; partial failure is not an error."""


@dataclass(frozen=True)
class FeedSource:
    feed_url: str
    category: str
    language_tag: str = "el"

    def __post_init__(self):
        parsed = urlparse(self.feed_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"feed_url must be absolute HTTP(S): {self.feed_url!r}")
        if not self.category:
            raise ValueError("category must be non-empty")
        if not self.language_tag:
            raise ValueError("language_tag must be non-empty")


@dataclass(frozen=True)
class Episode:
    episode_id: str
    title: str
    enclosure_url: str
    declared_duration_s: float | None
    publish_date: str | None  # ISO 8601, UTC
    category: str
    podcast_name: str

    def to_record(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "title": self.title,
            "enclosure_url": self.enclosure_url,
            "declared_duration_s": self.declared_duration_s,
            "publish_date": self.publish_date,
            "category": self.category,
            "podcast_name": self.podcast_name,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Episode":
        return cls(
            episode_id=rec["episode_id"],
            title=rec["title"],
            enclosure_url=rec["enclosure_url"],
            declared_duration_s=rec["declared_duration_s"],
            publish_date=rec["publish_date"],
            category=rec["category"],
            podcast_name=rec["podcast_name"],
        )


def episode_identity(feed_url: str, guid: str, enclosure_url: str) -> str:
    """Stable 128-bit episode id: GUIDs alone are unreliable in the wild."""
    material = "\x1f".join((feed_url, guid, enclosure_url)).encode("utf-8")
    return hashlib.sha256(material).hexdigest()[:32]


def _parse_duration(text: str | None) -> float | None:
    """Parse itunes-style durations: SS, MM:SS, or HH:MM:SS."""
    if not text:
        return None
    parts = text.strip().split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        return None
    if len(values) > 3 or any(v < 0 for v in values):
        return None
    seconds = 0.0
    for v in values:
        seconds = seconds * 60.0 + v
    return seconds


def _iso_utc(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat()


def _parse_rfc822_date(text: str | None) -> str | None:
    if not text:
        return None
    try:
        return _iso_utc(parsedate_to_datetime(text.strip()))
    except (TypeError, ValueError):
        return None


def _parse_iso_date(text: str | None) -> str | None:
    if not text:
        return None
    try:
        return _iso_utc(datetime.fromisoformat(text.strip().replace("Z", "+00:00")))
    except ValueError:
        return None


def _is_audio_enclosure(url: str | None, mime: str | None) -> bool:
    if not url:
        return False
    if mime:
        return mime.strip().lower().startswith("audio/")
    return url.lower().split("?")[0].endswith(_AUDIO_EXTENSIONS)


def parse_feed(xml_bytes: bytes, source: FeedSource) -> list[Episode]:
    """Parse an RSS 2.0 or Atom document into Episodes.

    Items without an audio enclosure are skipped with a warning. Episode ids
    are deterministic across reruns (hash of feed URL, item GUID, and
    enclosure URL).
    """
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        raise MalformedFeed(f"{source.feed_url}: {exc}") from exc

    if root.tag == "rss":
        return _parse_rss(root, source)
    if root.tag == _ATOM_NS + "feed":
        return _parse_atom(root, source)
    raise UnsupportedFeedFormat(f"{source.feed_url}: root element {root.tag!r}")


def _parse_rss(root: ET.Element, source: FeedSource) -> list[Episode]:
    channel = root.find("channel")
    if channel is None:
        raise UnsupportedFeedFormat(f"{source.feed_url}: rss document without <channel>")
    items = channel.findall("item")
    if not items:
        raise EmptyFeed(f"{source.feed_url}: feed has no items")

    podcast_name = (channel.findtext("title") or "").strip() or urlparse(source.feed_url).netloc
    episodes = []
    skipped = 0
    for item in items:
        enclosure = item.find("enclosure")
        url = enclosure.get("url") if enclosure is not None else None
        mime = enclosure.get("type") if enclosure is not None else None
        if not _is_audio_enclosure(url, mime):
            skipped += 1
            logger.warning(
                "%s: item %r has no audio enclosure, skipping",
                source.feed_url,
                (item.findtext("title") or "").strip(),
            )
            continue
        guid = (item.findtext("guid") or "").strip() or url
        episodes.append(
            Episode(
                episode_id=episode_identity(source.feed_url, guid, url),
                title=(item.findtext("title") or "").strip(),
                enclosure_url=url,
                declared_duration_s=_parse_duration(item.findtext(_ITUNES_NS + "duration")),
                publish_date=_parse_rfc822_date(item.findtext("pubDate")),
                category=source.category,
                podcast_name=podcast_name,
            )
        )
    if skipped:
        logger.info("%s: skipped %d item(s) without audio enclosures", source.feed_url, skipped)
    return episodes


def _parse_atom(root: ET.Element, source: FeedSource) -> list[Episode]:
    entries = root.findall(_ATOM_NS + "entry")
    if not entries:
        raise EmptyFeed(f"{source.feed_url}: feed has no entries")

    podcast_name = (root.findtext(_ATOM_NS + "title") or "").strip() or urlparse(source.feed_url).netloc
    episodes = []
    for entry in entries:
        url = mime = None
        for link in entry.findall(_ATOM_NS + "link"):
            if link.get("rel") == "enclosure" and _is_audio_enclosure(link.get("href"), link.get("type")):
                url, mime = link.get("href"), link.get("type")
                break
        if url is None:
            logger.warning(
                "%s: entry %r has no audio enclosure, skipping",
                source.feed_url,
                (entry.findtext(_ATOM_NS + "title") or "").strip(),
            )
            continue
        guid = (entry.findtext(_ATOM_NS + "id") or "").strip() or url
        published = entry.findtext(_ATOM_NS + "published") or entry.findtext(_ATOM_NS + "updated")
        episodes.append(
            Episode(
                episode_id=episode_identity(source.feed_url, guid, url),
                title=(entry.findtext(_ATOM_NS + "title") or "").strip(),
                enclosure_url=url,
                declared_duration_s=None,
                publish_date=_parse_iso_date(published),
                category=source.category,
                podcast_name=podcast_name,
            )
        )
    return episodes


@dataclass
class FeedCatalog:
    episodes: list[Episode] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for ep in self.episodes:
            if ep.episode_id in seen:
                raise ValueError(f"duplicate episode_id {ep.episode_id}")
            seen.add(ep.episode_id)

    def per_category_stats(self) -> dict[str, dict]:
        """Recompute (episode_count, podcast_count, declared_hours, unknown) per category."""
        stats: dict[str, dict] = {}
        for ep in self.episodes:
            entry = stats.setdefault(
                ep.category,
                {"episode_count": 0, "podcasts": set(), "declared_hours": 0.0, "unknown_duration": 0},
            )
            entry["episode_count"] += 1
            entry["podcasts"].add(ep.podcast_name)
            if ep.declared_duration_s is None:
                entry["unknown_duration"] += 1
            else:
                entry["declared_hours"] += ep.declared_duration_s / 3600.0
        return {
            cat: {
                "episode_count": v["episode_count"],
                "podcast_count": len(v["podcasts"]),
                "declared_hours": v["declared_hours"],
                "unknown_duration": v["unknown_duration"],
            }
            for cat, v in stats.items()
        }


@dataclass(frozen=True)
class CrawlPolicy:
    per_host_delay_s: float = 0.0
    max_retries: int = 2
    max_inflight: int = 8
    timeout_s: float = 20.0


@dataclass
class CrawlResult:
    catalog: FeedCatalog
    failures: list[tuple[str, str]] = field(default_factory=list)  # (feed_url, reason)


class _HostThrottle:
    """Serializes requests per host with a minimum delay between them."""

    def __init__(self, delay_s: float):
        self.delay_s = delay_s
        self._lock = threading.Lock()
        self._last: dict[str, float] = {}

    def wait(self, host: str) -> None:
        if self.delay_s <= 0:
            return
        while True:
            with self._lock:
                now = time.monotonic()
                last = self._last.get(host)
                if last is None or now - last >= self.delay_s:
                    self._last[host] = now
                    return
                remaining = self.delay_s - (now - last)
            time.sleep(remaining)


def _fetch_feed(source: FeedSource, policy: CrawlPolicy, throttle: _HostThrottle) -> bytes:
    host = urlparse(source.feed_url).netloc
    last_error: Exception | None = None
    for attempt in range(policy.max_retries + 1):
        throttle.wait(host)
        try:
            resp = requests.get(source.feed_url, timeout=policy.timeout_s)
            resp.raise_for_status()
            return resp.content
        except requests.RequestException as exc:
            last_error = exc
            logger.warning("%s: fetch attempt %d failed: %s", source.feed_url, attempt + 1, exc)
    raise FeedError(f"{source.feed_url}: {last_error}")


def crawl(sources: list[FeedSource], politeness: CrawlPolicy | None = None) -> CrawlResult:
    """Fetch and parse all feeds concurrently; per-source failures never abort the crawl."""
    if not sources:
        raise ValueError("crawl requires at least one feed source")
    policy = politeness or CrawlPolicy()
    throttle = _HostThrottle(policy.per_host_delay_s)

    episodes: list[Episode] = []
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, policy.max_inflight)) as pool:
        futures = {
            pool.submit(_fetch_and_parse, src, policy, throttle): src for src in sources
        }
        for future in as_completed(futures):
            src = futures[future]
            try:
                episodes.extend(future.result())
            except Exception as exc:
                failures.append((src.feed_url, str(exc)))

    if failures and len(failures) == len(sources):
        raise AllSourcesFailed(f"all {len(sources)} feeds failed; first: {failures[0][1]}")

    episodes.sort(key=lambda e: (e.category, e.podcast_name, e.episode_id))
    deduped: list[Episode] = []
    seen: set[str] = set()
    for ep in episodes:
        if ep.episode_id in seen:
            logger.warning("dropping duplicate episode %s (%r)", ep.episode_id, ep.title)
            continue
        seen.add(ep.episode_id)
        deduped.append(ep)
    return CrawlResult(FeedCatalog(deduped), failures)


def _fetch_and_parse(source: FeedSource, policy: CrawlPolicy, throttle: _HostThrottle) -> list[Episode]:
    return parse_feed(_fetch_feed(source, policy, throttle), source)


@dataclass(frozen=True)
class CatalogRow:
    category: str
    hours: float
    podcast_count: int
    episode_count: int
    unknown_duration: int


def catalog_stats(catalog: FeedCatalog) -> list[CatalogRow]:
    """Per-category table rows sorted by category name, with a totals row appended.

    Hours come from declared durations where present; episodes without one are
    counted in the unknown_duration column instead.
    """
    stats = catalog.per_category_stats()
    rows = [
        CatalogRow(
            category=cat,
            hours=v["declared_hours"],
            podcast_count=v["podcast_count"],
            episode_count=v["episode_count"],
            unknown_duration=v["unknown_duration"],
        )
        for cat, v in sorted(stats.items())
    ]
    total = CatalogRow(
        category="Total",
        hours=sum(r.hours for r in rows),
        podcast_count=sum(r.podcast_count for r in rows),
        episode_count=sum(r.episode_count for r in rows),
        unknown_duration=sum(r.unknown_duration for r in rows),
    )
    return rows + [total]


def render_catalog_stats(rows: list[CatalogRow]) -> str:
    header = ("Domain", "Total hours", "#podcasts", "#episodes", "#unknown-duration")
    cells = [header] + [
        (r.category, f"{r.hours:.1f}", str(r.podcast_count), str(r.episode_count), str(r.unknown_duration))
        for r in rows
    ]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join(lines) + "\n"


def load_feed_list(path: str | Path, language_tag: str = "el") -> list[FeedSource]:
    """Read a feed list file: one `url<TAB>category` per line, UTF-8, # comments."""
    sources = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'url<TAB>category', got {line!r}")
            sources.append(FeedSource(feed_url=parts[0], category=parts[1], language_tag=language_tag))
    return sources


def save_catalog(catalog: FeedCatalog, path: str | Path) -> int:
    """Persist one episode per line with stable field order, so diffs are meaningful."""
    return write_records(path, (ep.to_record() for ep in catalog.episodes))


def load_catalog(path: str | Path) -> FeedCatalog:
    return FeedCatalog([Episode.from_record(rec) for rec in read_records(path)])
