"""Corpus acquisition: the web API client (with caching and rate limiting)
and the versioned corpus JSON format.

Fixture mode is first class: pass any session-like object with a
``request(method, url, ...)`` method (see FixtureTransport) and the whole
pipeline runs offline. With a warm cache the client issues zero network
calls and produces an identical corpus.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .core import ArtistRecord, Corpus, CorpusError, PlaylistRecord, TrackRecord, UserRecord, parse_release_year

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
API_BASE = "https://api.spotify.com/v1"
TOKEN_URL = "https://accounts.spotify.com/api/token"
TRACKS_BATCH = 50
ARTISTS_BATCH = 50
AUDIO_FEATURES_BATCH = 100
PAGE_LIMIT = 50


class IngestError(RuntimeError):
    """Base class for acquisition failures."""


class CredentialError(IngestError):
    """Missing or rejected API credentials."""


class UserNotFoundError(IngestError):
    """The requested user id does not exist."""


class ApiError(IngestError):
    """Unexpected API response."""


class SchemaError(ValueError):
    """A corpus file violates the schema; the message carries a JSON pointer."""

    def __init__(self, pointer: str, message: str) -> None:
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


@dataclass
class ApiCredentials:
    """OAuth2 client-credentials pair plus the current bearer token.

    Secrets never appear in logs or reprs.
    """

    client_id: str
    client_secret: str
    token: str | None = None
    expires_at: float = 0.0

    def __repr__(self) -> str:  # redact secrets
        return f"ApiCredentials(client_id={self.client_id[:4]}..., client_secret=***)"

    @classmethod
    def from_env(cls, environ=None) -> "ApiCredentials":
        import os

        env = environ if environ is not None else os.environ
        client_id = env.get("SPOTIFY_CLIENT_ID")
        client_secret = env.get("SPOTIFY_CLIENT_SECRET")
        if not client_id or not client_secret:
            raise CredentialError(
                "SPOTIFY_CLIENT_ID and SPOTIFY_CLIENT_SECRET must be set for live API access"
            )
        return cls(client_id, client_secret)

    def expired(self, now: float) -> bool:
        return self.token is None or now >= self.expires_at - 30.0


class JsonCache:
    """Content-addressed response cache keyed on (endpoint, sorted ids).

    Entries never expire on their own; ``purge`` clears everything.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(endpoint: str, ids: tuple[str, ...]) -> str:
        digest = hashlib.sha256()
        digest.update(endpoint.encode("utf-8"))
        for item in sorted(str(i) for i in ids):
            digest.update(b"\0")
            digest.update(item.encode("utf-8"))
        return digest.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, endpoint: str, ids: tuple[str, ...]):
        path = self._path(self.key(endpoint, ids))
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["payload"]

    def put(self, endpoint: str, ids: tuple[str, ...], payload) -> None:
        entry = {"endpoint": endpoint, "ids": sorted(str(i) for i in ids),
                 "fetched_at": time.time(), "payload": payload}
        path = self._path(self.key(endpoint, ids))
        # write-then-rename keeps concurrent writers last-write-wins safe
        tmp = path.with_name(f"{path.stem}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(entry), encoding="utf-8")
        os.replace(tmp, path)

    def purge(self) -> int:
        files = list(self.directory.glob("*.json"))
        for f in files:
            f.unlink()
        return len(files)


class RateLimiter:
    """Serializes requests to at most ``requests_per_second``."""

    def __init__(self, requests_per_second: float, sleeper=time.sleep, clock=time.monotonic) -> None:
        self.interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._sleep = sleeper
        self._clock = clock
        self._last = -1e18

    def wait(self) -> None:
        now = self._clock()
        delay = self._last + self.interval - now
        if delay > 0:
            self._sleep(delay)
            now = self._clock()
        self._last = now


class FixtureTransport:
    """Session replacement serving canned JSON responses from a directory.

    Responses are looked up by a slug of the request path and query; record
    them with ``save_response``. Raises KeyError on unknown requests, so tests
    notice missing fixtures immediately.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.calls: list[str] = []

    @staticmethod
    def slug(method: str, url: str, params: dict | None) -> str:
        qs = "&".join(f"{k}={params[k]}" for k in sorted(params)) if params else ""
        raw = f"{method} {url}?{qs}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:24]

    def save_response(self, method: str, url: str, params: dict | None, payload) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{self.slug(method, url, params)}.json"
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")

    def request(self, method: str, url: str, params=None, **kwargs):
        self.calls.append(url)
        path = self.directory / f"{self.slug(method, url, params)}.json"
        if not path.exists():
            raise KeyError(f"no fixture for {method} {url} params={params}")
        payload = json.loads(path.read_text(encoding="utf-8"))

        class _Response:
            status_code = 200
            headers: dict = {}
            text = path.read_text(encoding="utf-8")

            @staticmethod
            def json():
                return payload

        return _Response()


class SpotifyClient:
    """Minimal client for the public playlist endpoints.

    Batch fetches for disjoint id sets may run concurrently under the shared
    rate limiter; the cache tolerates concurrent writers (last write wins on
    identical keys, and identical keys hold identical payloads).
    """

    def __init__(
        self,
        credentials: ApiCredentials | None = None,
        session=None,
        cache: JsonCache | None = None,
        requests_per_second: float = 4.0,
        max_retries: int = 5,
        sleeper=time.sleep,
        clock=time.monotonic,
    ) -> None:
        if session is None:
            import requests

            session = requests.Session()
        self.credentials = credentials
        self.session = session
        self.cache = cache
        self.max_retries = max_retries
        self._sleep = sleeper
        self._clock = clock
        self._limiter = RateLimiter(requests_per_second, sleeper, clock)
        self.network_calls = 0

    def _refresh_token(self) -> None:
        if self.credentials is None:
            raise CredentialError("no API credentials configured")
        self._limiter.wait()
        self.network_calls += 1
        response = self.session.request(
            "POST",
            TOKEN_URL,
            data={"grant_type": "client_credentials"},
            auth=(self.credentials.client_id, self.credentials.client_secret),
        )
        if response.status_code != 200:
            raise CredentialError(f"token request failed with status {response.status_code}")
        payload = response.json()
        self.credentials.token = payload["access_token"]
        self.credentials.expires_at = self._clock() + float(payload.get("expires_in", 3600))

    def _headers(self) -> dict:
        if self.credentials is None:
            return {}
        if self.credentials.expired(self._clock()):
            self._refresh_token()
        return {"Authorization": f"Bearer {self.credentials.token}"}

    def _get(self, path: str, params: dict | None, cache_ids: tuple[str, ...]):
        endpoint = path.split("?")[0]
        if self.cache is not None:
            cached = self.cache.get(endpoint, cache_ids)
            if cached is not None:
                return cached
        url = path if path.startswith("http") else API_BASE + path
        attempts = 0
        while True:
            self._limiter.wait()
            self.network_calls += 1
            response = self.session.request("GET", url, params=params, headers=self._headers())
            if response.status_code == 200:
                payload = response.json()
                if self.cache is not None:
                    self.cache.put(endpoint, cache_ids, payload)
                return payload
            if response.status_code == 404:
                raise UserNotFoundError(f"resource not found: {path}")
            if response.status_code in (401, 403):
                raise CredentialError(f"authorization failed ({response.status_code}) for {path}")
            if response.status_code == 429:
                attempts += 1
                if attempts > self.max_retries:
                    raise ApiError(f"rate limited more than {self.max_retries} times on {path}")
                delay = float(response.headers.get("Retry-After", 1))
                logger.info("429 on %s; honoring Retry-After=%.1fs", path, delay)
                self._sleep(delay)
                continue
            raise ApiError(f"unexpected status {response.status_code} for {path}")

    def _paginate(self, path: str, extra_ids: tuple[str, ...]) -> list[dict]:
        items: list[dict] = []
        offset = 0
        while True:
            page = self._get(
                path,
                {"limit": PAGE_LIMIT, "offset": offset},
                extra_ids + (f"offset={offset}", f"limit={PAGE_LIMIT}"),
            )
            items.extend(page.get("items", []))
            if page.get("next"):
                offset += PAGE_LIMIT
            else:
                return items

    def fetch_user_playlists(self, user_id: str) -> list[dict]:
        """All public playlist payloads of a user, in API offset order."""
        items = self._paginate(f"/users/{user_id}/playlists", (user_id,))
        return [p for p in items if p.get("public", True)]

    def fetch_playlist_tracks(self, playlist_id: str) -> list[dict]:
        return self._paginate(f"/playlists/{playlist_id}/tracks", (playlist_id,))

    def _batched(self, ids: list[str], path: str, batch: int, item_key: str) -> dict[str, dict | None]:
        out: dict[str, dict | None] = {}
        unique = sorted(set(ids))
        for start in range(0, len(unique), batch):
            chunk = unique[start : start + batch]
            payload = self._get(path, {"ids": ",".join(chunk)}, tuple(chunk))
            for requested, item in zip(chunk, payload.get(item_key, [])):
                out[requested] = item  # None stays None: flagged, never fabricated
        return out

    def fetch_track_details(self, track_ids: list[str]) -> dict[str, dict | None]:
        if not track_ids:
            return {}
        return self._batched(track_ids, "/tracks", TRACKS_BATCH, "tracks")

    def fetch_audio_features(self, track_ids: list[str]) -> dict[str, dict | None]:
        if not track_ids:
            return {}
        return self._batched(track_ids, "/audio-features", AUDIO_FEATURES_BATCH, "audio_features")

    def fetch_artists(self, artist_ids: list[str]) -> list[ArtistRecord]:
        if not artist_ids:
            return []
        raw = self._batched(artist_ids, "/artists", ARTISTS_BATCH, "artists")
        records = []
        for artist_id, item in sorted(raw.items()):
            if item is None:
                logger.warning("artist %s missing from API response", artist_id)
                continue
            records.append(
                ArtistRecord(
                    artist_id=item["id"],
                    popularity=int(item.get("popularity", 0)),
                    followers=int(item.get("followers", {}).get("total", 0)),
                    genres=tuple(item.get("genres", [])),
                )
            )
        return records


def build_corpus(client: SpotifyClient, user_attributes: dict[str, dict[str, str]]) -> Corpus:
    """Fetch every user's public playlists and assemble a corpus.

    Users with no public playlists are dropped with a warning. Tracks whose
    audio analysis is missing keep ``audio=None`` and are excluded from audio
    statistics downstream.
    """
    users: list[UserRecord] = []
    artist_table: dict[str, ArtistRecord] = {}
    for user_id, attributes in user_attributes.items():
        playlists_raw = client.fetch_user_playlists(user_id)
        playlists: list[PlaylistRecord] = []
        for playlist in playlists_raw:
            playlist_id = playlist["id"]
            track_items = client.fetch_playlist_tracks(playlist_id)
            entries = []
            for item in track_items:
                track = item.get("track") or {}
                if track.get("id"):
                    entries.append((track["id"], item.get("added_at", "")))
            track_ids = [tid for tid, _ in entries]
            details = client.fetch_track_details(track_ids)
            audio = client.fetch_audio_features(track_ids)
            artist_ids = sorted(
                {
                    a["id"]
                    for tid in track_ids
                    if details.get(tid)
                    for a in details[tid].get("artists", [])
                    if a.get("id")
                }
            )
            for artist in client.fetch_artists(artist_ids):
                artist_table[artist.artist_id] = artist
            tracks = []
            for tid, added_at in entries:
                detail = details.get(tid)
                if detail is None:
                    logger.warning("track %s missing details; skipped", tid)
                    continue
                album = detail.get("album", {})
                try:
                    release_year = parse_release_year(album.get("release_date", "1970"))
                    added_year = parse_release_year(added_at) if added_at else release_year
                    tracks.append(
                        TrackRecord(
                            track_id=tid,
                            title=detail.get("name", ""),
                            popularity=int(detail.get("popularity", 0)),
                            explicit=bool(detail.get("explicit", False)),
                            release_year=release_year,
                            duration_ms=int(detail.get("duration_ms", 1)),
                            audio=_parse_audio(audio.get(tid)),
                            artist_ids=tuple(a["id"] for a in detail.get("artists", []) if a.get("id")),
                            album_id=album.get("id", f"album-of-{tid}"),
                            added_year=added_year,
                        )
                    )
                except (CorpusError, ValueError) as exc:
                    logger.warning("track %s dropped: %s", tid, exc)
            playlists.append(
                PlaylistRecord(
                    playlist_id=playlist_id,
                    owner_id=user_id,
                    followers=int(playlist.get("followers", {}).get("total", 0)),
                    tracks=tuple(tracks),
                )
            )
        if not playlists:
            logger.warning("user %s has no public playlists; dropped", user_id)
            continue
        users.append(UserRecord(user_id, dict(attributes), tuple(playlists)))
    if not users:
        raise IngestError("no user yielded any public playlist")
    return Corpus(tuple(users), artist_table, provenance="live-api")


def _parse_audio(payload: dict | None) -> dict[str, float] | None:
    if payload is None:
        return None
    from .core import AUDIO_FEATURES

    try:
        return {name: float(payload[name]) for name in AUDIO_FEATURES}
    except KeyError:
        return None


# ---------------------------------------------------------------------------
# corpus JSON format
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, types, pointer: str):
    if key not in obj:
        raise SchemaError(pointer, f"missing required key {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise SchemaError(f"{pointer}/{key}", f"expected {types}, got {type(value).__name__}")
    return value


def corpus_to_dict(corpus: Corpus) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "provenance": corpus.provenance,
        "artists": [
            {
                "artist_id": a.artist_id,
                "popularity": a.popularity,
                "followers": a.followers,
                "genres": list(a.genres),
            }
            for _, a in sorted(corpus.artist_table.items())
        ],
        "users": [
            {
                "user_id": u.user_id,
                "attributes": dict(u.attributes),
                "playlists": [
                    {
                        "playlist_id": p.playlist_id,
                        "followers": p.followers,
                        "tracks": [
                            {
                                "track_id": t.track_id,
                                "title": t.title,
                                "popularity": t.popularity,
                                "explicit": t.explicit,
                                "release_year": t.release_year,
                                "duration_ms": t.duration_ms,
                                "audio": t.audio,
                                "artist_ids": list(t.artist_ids),
                                "album_id": t.album_id,
                                "added_year": t.added_year,
                            }
                            for t in p.tracks
                        ],
                    }
                    for p in u.playlists
                ],
            }
            for u in corpus.users
        ],
    }


def corpus_from_dict(payload: dict) -> Corpus:
    if not isinstance(payload, dict):
        raise SchemaError("", "corpus file must hold a JSON object")
    version = _require(payload, "schema_version", int, "")
    if version != SCHEMA_VERSION:
        raise SchemaError("/schema_version", f"unsupported version {version}")
    provenance = _require(payload, "provenance", str, "")
    artists_raw = _require(payload, "artists", list, "")
    users_raw = _require(payload, "users", list, "")
    artist_table: dict[str, ArtistRecord] = {}
    for i, item in enumerate(artists_raw):
        pointer = f"/artists/{i}"
        if not isinstance(item, dict):
            raise SchemaError(pointer, "artist entry must be an object")
        artist_id = _require(item, "artist_id", str, pointer)
        if artist_id in artist_table:
            raise SchemaError(pointer, f"duplicate artist_id {artist_id!r}")
        try:
            artist_table[artist_id] = ArtistRecord(
                artist_id=artist_id,
                popularity=_require(item, "popularity", int, pointer),
                followers=_require(item, "followers", int, pointer),
                genres=tuple(_require(item, "genres", list, pointer)),
            )
        except CorpusError as exc:
            raise SchemaError(pointer, str(exc)) from exc
    users: list[UserRecord] = []
    seen_users: set[str] = set()
    seen_playlists: set[str] = set()
    for i, user_raw in enumerate(users_raw):
        pointer = f"/users/{i}"
        if not isinstance(user_raw, dict):
            raise SchemaError(pointer, "user entry must be an object")
        user_id = _require(user_raw, "user_id", str, pointer)
        if user_id in seen_users:
            raise SchemaError(pointer, f"duplicate user_id {user_id!r}")
        seen_users.add(user_id)
        attributes = _require(user_raw, "attributes", dict, pointer)
        playlists = []
        for j, playlist_raw in enumerate(_require(user_raw, "playlists", list, pointer)):
            p_pointer = f"{pointer}/playlists/{j}"
            if not isinstance(playlist_raw, dict):
                raise SchemaError(p_pointer, "playlist entry must be an object")
            playlist_id = _require(playlist_raw, "playlist_id", str, p_pointer)
            if playlist_id in seen_playlists:
                raise SchemaError(p_pointer, f"duplicate playlist_id {playlist_id!r}")
            seen_playlists.add(playlist_id)
            tracks = []
            for k, track_raw in enumerate(_require(playlist_raw, "tracks", list, p_pointer)):
                t_pointer = f"{p_pointer}/tracks/{k}"
                if not isinstance(track_raw, dict):
                    raise SchemaError(t_pointer, "track entry must be an object")
                audio = track_raw.get("audio")
                if audio is not None and not isinstance(audio, dict):
                    raise SchemaError(f"{t_pointer}/audio", "audio must be an object or null")
                try:
                    tracks.append(
                        TrackRecord(
                            track_id=_require(track_raw, "track_id", str, t_pointer),
                            title=_require(track_raw, "title", str, t_pointer),
                            popularity=_require(track_raw, "popularity", int, t_pointer),
                            explicit=_require(track_raw, "explicit", bool, t_pointer),
                            release_year=_require(track_raw, "release_year", int, t_pointer),
                            duration_ms=_require(track_raw, "duration_ms", int, t_pointer),
                            audio=None if audio is None else {k2: float(v) for k2, v in audio.items()},
                            artist_ids=tuple(_require(track_raw, "artist_ids", list, t_pointer)),
                            album_id=_require(track_raw, "album_id", str, t_pointer),
                            added_year=_require(track_raw, "added_year", int, t_pointer),
                        )
                    )
                except CorpusError as exc:
                    raise SchemaError(t_pointer, str(exc)) from exc
            try:
                playlists.append(
                    PlaylistRecord(
                        playlist_id=playlist_id,
                        owner_id=user_id,
                        followers=_require(playlist_raw, "followers", int, p_pointer),
                        tracks=tuple(tracks),
                    )
                )
            except CorpusError as exc:
                raise SchemaError(p_pointer, str(exc)) from exc
        try:
            users.append(UserRecord(user_id, dict(attributes), tuple(playlists)))
        except CorpusError as exc:
            raise SchemaError(pointer, str(exc)) from exc
    try:
        return Corpus(tuple(users), artist_table, provenance=provenance)
    except CorpusError as exc:
        raise SchemaError("", str(exc)) from exc


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_dict(corpus), indent=2, ensure_ascii=False), encoding="utf-8"
    )


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file {path} does not exist")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"not valid JSON: {exc}") from exc
    return corpus_from_dict(payload)
