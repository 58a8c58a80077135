"""Playlist featurization: raw playlists -> fixed 111-entry descriptors.

The descriptor concatenates four blocks, in this order:

* songs (49): mean/std/min/max of popularity, release year, duration and the
  nine audio descriptors, plus the explicit-content ratio;
* artists (19): contributor counts, low-popularity and repetition ratios,
  Simpson diversity, appearance statistics, popularity/follower statistics;
* genres (32): proportion of songs per canonical genre (30), plus a "local"
  bucket for locale-linked genres and an "other" fallback;
* misc (11): song count, playlist followers, total duration, album counts
  and diversity, and added-year statistics including the year span.

Standard deviations are sample estimates (n - 1), defined as 0 for a single
sample. Featurization is order-free: tracks are canonically sorted before
aggregating, so permuting a playlist's tracks changes nothing, bit for bit.
"""
from __future__ import annotations

import csv
import logging
import warnings
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import AUDIO_FEATURES, ArtistRecord, Corpus, PlaylistRecord, TrackRecord

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "v1"
N_FEATURES = 111
N_CANONICAL_GENRES = 30

_STATS = ("mean", "std", "min", "max")
_SONG_QUANTITIES = ("popularity", "release_year", "duration_ms") + AUDIO_FEATURES


class FeaturizationError(ValueError):
    """A playlist cannot be featurized (empty, or missing required data)."""


class DegenerateInputWarning(UserWarning):
    """An aggregate was computed on degenerate input (e.g. fewer than 2 items)."""


def simpson_diversity(counts: list[int]) -> float:
    """Unbiased Simpson diversity 1 - sum(n_i (n_i - 1)) / (N (N - 1)).

    0 when everything falls in one category, 1 when every item is a singleton.
    Inputs with fewer than two items total are degenerate and score 0.
    """
    total = sum(counts)
    if total < 2:
        warnings.warn(
            f"Simpson diversity needs at least 2 items, got {total}; returning 0.0",
            DegenerateInputWarning,
            stacklevel=2,
        )
        return 0.0
    same = sum(n * (n - 1) for n in counts)
    return 1.0 - same / (total * (total - 1))


@dataclass(frozen=True)
class GenreLexicon:
    """Canonical genre list plus tag matchers and locale markers.

    ``matchers`` maps each canonical genre to the tag substrings that count as
    a match; ``local_markers`` lists locale keywords whose presence in a tag
    marks the song as local. Matching is case-insensitive substring-on-tag.
    """

    canonical: tuple[str, ...]
    matchers: dict[str, tuple[str, ...]]
    local_markers: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.canonical) != N_CANONICAL_GENRES:
            raise ValueError(
                f"lexicon must define exactly {N_CANONICAL_GENRES} canonical genres, "
                f"got {len(self.canonical)}"
            )
        if len(set(self.canonical)) != len(self.canonical):
            raise ValueError("canonical genre names must be unique")
        missing = [g for g in self.canonical if g not in self.matchers]
        if missing:
            raise ValueError(f"no matchers for genres: {missing}")

    def match(self, tags: tuple[str, ...]) -> tuple[set[str], bool]:
        """Return (matched canonical genres, whether any tag is locale-linked)."""
        lowered = [t.lower() for t in tags]
        matched = {
            genre
            for genre in self.canonical
            if any(sub in tag for sub in self.matchers[genre] for tag in lowered)
        }
        is_local = any(marker in tag for marker in self.local_markers for tag in lowered)
        return matched, is_local


def parse_lexicon(text: str) -> GenreLexicon:
    """Parse the lexicon file format (see data/genres.txt for an example)."""
    canonical: list[str] = []
    matchers: dict[str, tuple[str, ...]] = {}
    local_markers: list[str] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, rest = line.partition(":")
        name = name.strip().lower()
        subs = tuple(s.strip().lower() for s in rest.split(",") if s.strip()) if sep else ()
        if not name:
            raise ValueError(f"lexicon line {lineno}: missing genre name")
        if name == "local":
            local_markers.extend(subs)
        else:
            canonical.append(name)
            matchers[name] = subs if subs else (name,)
    return GenreLexicon(tuple(canonical), matchers, tuple(local_markers))


def load_lexicon(path: str | Path | None = None) -> GenreLexicon:
    """Load a lexicon file, or the packaged default when no path is given."""
    if path is None:
        text = resources.files("playlistmine.data").joinpath("genres.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_lexicon(text)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered names of the 111 features, with family spans and ratio flags."""

    version: str
    names: tuple[str, ...]
    families: dict[str, tuple[int, int]]  # family -> (start, end) index span
    ratio_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.names) != N_FEATURES:
            raise ValueError(f"schema must have {N_FEATURES} names, got {len(self.names)}")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None

    def family_of(self, name: str) -> str:
        i = self.index(name)
        for family, (start, end) in self.families.items():
            if start <= i < end:
                return family
        raise KeyError(name)

    def family_names(self, family: str) -> tuple[str, ...]:
        start, end = self.families[family]
        return self.names[start:end]


def _songs_block_names() -> list[str]:
    names = [f"songs_{q}_{s}" for q in _SONG_QUANTITIES for s in _STATS]
    names.append("songs_explicit_ratio")
    return names


_ARTIST_BLOCK_NAMES = [
    "artists_total_count",
    "artists_unique_count",
    "artists_low_popularity_ratio",
    "artists_low_popularity_unique_ratio",
    "artists_single_artist_song_ratio",
    "artists_repeat_ratio",
    "artists_diversity",
    *[f"artists_appearances_{s}" for s in _STATS],
    *[f"artists_popularity_{s}" for s in _STATS],
    *[f"artists_followers_{s}" for s in _STATS],
]

_MISC_BLOCK_NAMES = [
    "misc_song_count",
    "misc_followers",
    "misc_duration_total_ms",
    "misc_album_unique_count",
    "misc_album_diversity",
    *[f"misc_added_year_{s}" for s in _STATS],
    "misc_added_year_span",
    "misc_added_year_distinct_count",
]

_RATIO_FEATURES = frozenset(
    [
        "songs_explicit_ratio",
        "artists_low_popularity_ratio",
        "artists_low_popularity_unique_ratio",
        "artists_single_artist_song_ratio",
        "artists_repeat_ratio",
        "artists_diversity",
        "misc_album_diversity",
    ]
)


def build_schema(lexicon: GenreLexicon) -> FeatureSchema:
    """Assemble the 111-entry schema for a given genre lexicon."""
    songs = _songs_block_names()
    genres = [f"genre_{g}" for g in lexicon.canonical] + ["genre_local", "genre_other"]
    names = songs + _ARTIST_BLOCK_NAMES + genres + _MISC_BLOCK_NAMES
    families = {}
    offset = 0
    for family, block in (
        ("songs", songs),
        ("artists", _ARTIST_BLOCK_NAMES),
        ("genres", genres),
        ("misc", _MISC_BLOCK_NAMES),
    ):
        families[family] = (offset, offset + len(block))
        offset += len(block)
    ratio_indices = tuple(
        i for i, name in enumerate(names) if name in _RATIO_FEATURES or name.startswith("genre_")
    )
    return FeatureSchema(SCHEMA_VERSION, tuple(names), families, ratio_indices)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """One playlist's 111-entry descriptor."""

    playlist_id: str
    owner_id: str
    values: np.ndarray

    def validate(self, schema: FeatureSchema) -> None:
        if self.values.shape != (N_FEATURES,):
            raise FeaturizationError(
                f"playlist {self.playlist_id}: expected {N_FEATURES} values, got {self.values.shape}"
            )
        if np.isnan(self.values).any():
            bad = [schema.names[i] for i in np.flatnonzero(np.isnan(self.values))]
            raise FeaturizationError(f"playlist {self.playlist_id}: NaN in features {bad}")
        ratios = self.values[list(schema.ratio_indices)]
        if (ratios < 0).any() or (ratios > 1).any():
            bad = [
                schema.names[i]
                for i in schema.ratio_indices
                if not 0 <= self.values[i] <= 1
            ]
            raise FeaturizationError(f"playlist {self.playlist_id}: ratio features out of [0,1]: {bad}")


def _stat_quad(values: list[float]) -> tuple[float, float, float, float]:
    """(mean, sample std, min, max) of a non-empty list; std is 0 for n = 1."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std, float(arr.min()), float(arr.max())


def _canonical_track_order(tracks: tuple[TrackRecord, ...]) -> list[TrackRecord]:
    """Sort tracks so aggregation is independent of input order, bit for bit."""
    return sorted(
        tracks,
        key=lambda t: (
            t.track_id,
            t.title,
            t.popularity,
            t.release_year,
            t.duration_ms,
            t.added_year,
            t.explicit,
            t.artist_ids,
        ),
    )


def aggregate_song_features(tracks: list[TrackRecord]) -> dict[str, float]:
    """Songs block: per-playlist statistics of track-level quantities.

    Tracks lacking audio analysis are excluded from the audio statistics only.
    """
    if not tracks:
        raise FeaturizationError("cannot aggregate songs of an empty playlist")
    out: dict[str, float] = {}
    base = {
        "popularity": [float(t.popularity) for t in tracks],
        "release_year": [float(t.release_year) for t in tracks],
        "duration_ms": [float(t.duration_ms) for t in tracks],
    }
    with_audio = [t for t in tracks if t.audio is not None]
    for q in _SONG_QUANTITIES:
        if q in base:
            values = base[q]
        else:
            if not with_audio:
                raise FeaturizationError(f"no track has audio data; cannot compute {q} statistics")
            values = [t.audio[q] for t in with_audio]
        for s, v in zip(_STATS, _stat_quad(values)):
            out[f"songs_{q}_{s}"] = v
    out["songs_explicit_ratio"] = sum(t.explicit for t in tracks) / len(tracks)
    return out


def aggregate_artist_features(
    tracks: list[TrackRecord], artist_table: dict[str, ArtistRecord]
) -> dict[str, float]:
    """Artists block: contributor counts, ratios, diversity and statistics.

    Popularity/follower statistics run over contributor appearances (with
    multiplicity); appearance statistics run over unique artists. The
    low-popularity threshold is popularity < 20.
    """
    if not tracks:
        raise FeaturizationError("cannot aggregate artists of an empty playlist")
    appearances: list[str] = [aid for t in tracks for aid in t.artist_ids]
    for aid in appearances:
        if aid not in artist_table:
            raise FeaturizationError(f"artist {aid!r} not resolvable in the artist table")
    counts = Counter(appearances)
    unique_ids = sorted(counts)
    total = len(appearances)
    pops = [float(artist_table[a].popularity) for a in appearances]
    followers = [float(artist_table[a].followers) for a in appearances]
    out: dict[str, float] = {
        "artists_total_count": float(total),
        "artists_unique_count": float(len(unique_ids)),
        "artists_low_popularity_ratio": sum(p < 20 for p in pops) / total,
        "artists_low_popularity_unique_ratio": (
            sum(artist_table[a].popularity < 20 for a in unique_ids) / len(unique_ids)
        ),
        "artists_single_artist_song_ratio": sum(len(t.artist_ids) == 1 for t in tracks) / len(tracks),
        "artists_repeat_ratio": (total - len(unique_ids)) / total,
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        out["artists_diversity"] = simpson_diversity([counts[a] for a in unique_ids])
    for s, v in zip(_STATS, _stat_quad([float(counts[a]) for a in unique_ids])):
        out[f"artists_appearances_{s}"] = v
    for s, v in zip(_STATS, _stat_quad(pops)):
        out[f"artists_popularity_{s}"] = v
    for s, v in zip(_STATS, _stat_quad(followers)):
        out[f"artists_followers_{s}"] = v
    return out


def aggregate_genre_features(
    tracks: list[TrackRecord],
    artist_table: dict[str, ArtistRecord],
    lexicon: GenreLexicon,
) -> dict[str, float]:
    """Genres block: proportion of songs per canonical genre, plus local/other.

    A song counts toward every canonical genre matched by any of its artists'
    tags (multi-label, so proportions need not sum to 1). A song matching no
    canonical genre and no locale marker falls into "other".
    """
    if not tracks:
        raise FeaturizationError("cannot aggregate genres of an empty playlist")
    genre_counts = {g: 0 for g in lexicon.canonical}
    local_count = 0
    other_count = 0
    for track in tracks:
        tags = tuple(
            tag for aid in sorted(set(track.artist_ids)) for tag in artist_table[aid].genres
        )
        matched, is_local = lexicon.match(tags)
        for g in matched:
            genre_counts[g] += 1
        if is_local:
            local_count += 1
        if not matched and not is_local:
            other_count += 1
    n = len(tracks)
    out = {f"genre_{g}": genre_counts[g] / n for g in lexicon.canonical}
    out["genre_local"] = local_count / n
    out["genre_other"] = other_count / n
    return out


def aggregate_misc_features(playlist: PlaylistRecord) -> dict[str, float]:
    """Misc block: playlist-level counts, album diversity and added-year stats."""
    tracks = _canonical_track_order(playlist.tracks)
    if not tracks:
        raise FeaturizationError(f"playlist {playlist.playlist_id} has no tracks")
    album_counts = Counter(t.album_id for t in tracks)
    added = [float(t.added_year) for t in tracks]
    out: dict[str, float] = {
        "misc_song_count": float(len(tracks)),
        "misc_followers": float(playlist.followers),
        "misc_duration_total_ms": float(sum(t.duration_ms for t in tracks)),
        "misc_album_unique_count": float(len(album_counts)),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        out["misc_album_diversity"] = simpson_diversity(
            [album_counts[a] for a in sorted(album_counts)]
        )
    for s, v in zip(_STATS, _stat_quad(added)):
        out[f"misc_added_year_{s}"] = v
    out["misc_added_year_span"] = max(added) - min(added)
    out["misc_added_year_distinct_count"] = float(len(set(added)))
    return out


def featurize_playlist(
    playlist: PlaylistRecord,
    artist_table: dict[str, ArtistRecord],
    lexicon: GenreLexicon,
    schema: FeatureSchema | None = None,
) -> FeatureVector:
    """Compute the full 111-entry descriptor for one playlist.

    Raises FeaturizationError for empty playlists; callers featurizing a whole
    corpus skip those with a warning.
    """
    if schema is None:
        schema = build_schema(lexicon)
    if not playlist.tracks:
        raise FeaturizationError(f"playlist {playlist.playlist_id} is empty")
    tracks = _canonical_track_order(playlist.tracks)
    named: dict[str, float] = {}
    named.update(aggregate_song_features(tracks))
    named.update(aggregate_artist_features(tracks, artist_table))
    named.update(aggregate_genre_features(tracks, artist_table, lexicon))
    named.update(aggregate_misc_features(playlist))
    values = np.array([named[name] for name in schema.names], dtype=np.float64)
    vec = FeatureVector(playlist.playlist_id, playlist.owner_id, values)
    vec.validate(schema)
    return vec


def featurize_user(vectors: list[FeatureVector] | list[np.ndarray]) -> np.ndarray:
    """User-level descriptor: element-wise mean over the user's playlists."""
    if not vectors:
        raise FeaturizationError("user has no featurized playlists")
    rows = [v.values if isinstance(v, FeatureVector) else np.asarray(v) for v in vectors]
    return np.mean(np.stack(rows), axis=0)


@dataclass(frozen=True, eq=False)
class FeaturizedUser:
    """A user's attribute labels plus their set of playlist descriptors."""

    user_id: str
    attributes: dict[str, str]
    vectors: tuple[FeatureVector, ...]

    @property
    def n_playlists(self) -> int:
        return len(self.vectors)

    def matrix(self) -> np.ndarray:
        """(n_playlists, 111) matrix, rows in sorted-playlist-id order."""
        return np.stack([v.values for v in self.vectors])

    def mean_vector(self) -> np.ndarray:
        return featurize_user(list(self.vectors))


@dataclass(frozen=True, eq=False)
class FeaturizedCorpus:
    """All featurized users plus the schema the vectors follow."""

    users: tuple[FeaturizedUser, ...]
    schema: FeatureSchema
    provenance: str

    def playlist_matrix(self) -> tuple[np.ndarray, list[str], list[str]]:
        """(P, 111) matrix over all playlists with aligned playlist/owner ids."""
        rows, pids, oids = [], [], []
        for user in self.users:
            for vec in user.vectors:
                rows.append(vec.values)
                pids.append(vec.playlist_id)
                oids.append(vec.owner_id)
        return np.stack(rows), pids, oids

    def user_matrix(self) -> tuple[np.ndarray, list[str]]:
        """(U, 111) matrix of user-level mean vectors with aligned user ids."""
        return (
            np.stack([u.mean_vector() for u in self.users]),
            [u.user_id for u in self.users],
        )


def featurize_corpus(corpus: Corpus, lexicon: GenreLexicon | None = None) -> FeaturizedCorpus:
    """Featurize every playlist in the corpus.

    Empty or unfeaturizable playlists are skipped with a warning; users left
    with no featurizable playlist are dropped entirely (they carry no signal).
    """
    if lexicon is None:
        lexicon = load_lexicon()
    schema = build_schema(lexicon)
    users: list[FeaturizedUser] = []
    for user in corpus.users:
        vectors = []
        for playlist in user.playlists:
            try:
                vectors.append(featurize_playlist(playlist, corpus.artist_table, lexicon, schema))
            except FeaturizationError as exc:
                logger.warning("skipping playlist %s: %s", playlist.playlist_id, exc)
        if not vectors:
            logger.warning("dropping user %s: no featurizable playlists", user.user_id)
            continue
        vectors.sort(key=lambda v: v.playlist_id)
        users.append(FeaturizedUser(user.user_id, dict(user.attributes), tuple(vectors)))
    if not users:
        raise FeaturizationError("no user in the corpus could be featurized")
    return FeaturizedCorpus(tuple(users), schema, corpus.provenance)


def write_features_csv(fc: FeaturizedCorpus, path: str | Path) -> None:
    """Export all playlist vectors as CSV.

    Header: the 111 schema names, then playlist_id and owner_id. Rows are
    ordered by (owner_id, playlist_id); quoting follows RFC 4180.
    """
    vectors = sorted(
        (v for u in fc.users for v in u.vectors),
        key=lambda v: (v.owner_id, v.playlist_id),
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(fc.schema.names) + ["playlist_id", "owner_id"])
        for vec in vectors:
            writer.writerow([repr(x) for x in vec.values.tolist()] + [vec.playlist_id, vec.owner_id])
