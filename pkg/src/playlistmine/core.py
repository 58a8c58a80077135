"""Shared domain model: tracks, artists, playlists, users, corpora and the
attribute-inference tasks.

Everything downstream (featurization, statistics, clustering, learning)
consumes these types. A Corpus is immutable after construction; all mutation
happens while building it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

# Per-track audio descriptors served by the platform, in canonical order.
AUDIO_FEATURES = (
    "danceability",
    "energy",
    "loudness",
    "speechiness",
    "acousticness",
    "instrumentalness",
    "liveness",
    "valence",
    "tempo",
)


class CorpusError(ValueError):
    """A corpus or one of its records violates a structural invariant."""


def parse_release_year(date_str: str) -> int:
    """Extract the leading 4-digit year from "YYYY", "YYYY-MM" or "YYYY-MM-DD".

    The upstream API returns mixed date precisions, so only the year prefix is
    trusted.
    """
    head = date_str.strip()[:4]
    if len(head) != 4 or not head.isdigit():
        raise ValueError(f"cannot parse a year from date string {date_str!r}")
    return int(head)


@dataclass(frozen=True)
class TrackRecord:
    """One song inside a playlist, with platform metadata and audio descriptors.

    ``audio`` is None when the platform had no audio analysis for the track;
    such tracks are excluded from audio statistics but still count everywhere
    else.
    """

    track_id: str
    title: str
    popularity: int
    explicit: bool
    release_year: int
    duration_ms: int
    audio: dict[str, float] | None
    artist_ids: tuple[str, ...]
    album_id: str
    added_year: int

    def __post_init__(self) -> None:
        if not 0 <= self.popularity <= 100:
            raise CorpusError(f"track {self.track_id}: popularity {self.popularity} not in [0, 100]")
        if self.duration_ms <= 0:
            raise CorpusError(f"track {self.track_id}: duration_ms must be positive")
        if not self.artist_ids:
            raise CorpusError(f"track {self.track_id}: artist_ids must be non-empty")
        if self.audio is not None and set(self.audio) != set(AUDIO_FEATURES):
            raise CorpusError(
                f"track {self.track_id}: audio keys must be exactly {sorted(AUDIO_FEATURES)}, "
                f"got {sorted(self.audio)}"
            )
        object.__setattr__(self, "artist_ids", tuple(self.artist_ids))


@dataclass(frozen=True)
class ArtistRecord:
    """Platform-level metadata for one artist."""

    artist_id: str
    popularity: int
    followers: int
    genres: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.popularity <= 100:
            raise CorpusError(f"artist {self.artist_id}: popularity {self.popularity} not in [0, 100]")
        if self.followers < 0:
            raise CorpusError(f"artist {self.artist_id}: followers must be >= 0")
        object.__setattr__(self, "genres", tuple(g.lower() for g in self.genres))


@dataclass(frozen=True)
class PlaylistRecord:
    """A raw public playlist: owner, follower count, and constituent tracks.

    ``tracks`` may be empty straight after ingest; featurization skips empty
    playlists with a warning.
    """

    playlist_id: str
    owner_id: str
    followers: int
    tracks: tuple[TrackRecord, ...] = ()

    def __post_init__(self) -> None:
        if self.followers < 0:
            raise CorpusError(f"playlist {self.playlist_id}: followers must be >= 0")
        object.__setattr__(self, "tracks", tuple(self.tracks))


@dataclass(frozen=True)
class UserRecord:
    """One surveyed user: attribute labels plus their public playlists.

    ``attributes`` maps task name -> class label; a task may be absent when
    the user did not answer it. Such users are excluded from that task only.
    """

    user_id: str
    attributes: dict[str, str]
    playlists: tuple[PlaylistRecord, ...]

    def __post_init__(self) -> None:
        if not self.playlists:
            raise CorpusError(f"user {self.user_id}: must own at least one playlist")
        for pl in self.playlists:
            if pl.owner_id != self.user_id:
                raise CorpusError(
                    f"user {self.user_id}: playlist {pl.playlist_id} is owned by {pl.owner_id}"
                )
        object.__setattr__(self, "playlists", tuple(self.playlists))


@dataclass(frozen=True)
class Corpus:
    """The full dataset: users with raw playlists plus the artist lookup table.

    provenance is one of "live-api", "fixture" or "synthetic". Immutable after
    construction, hence safe for concurrent readers.
    """

    users: tuple[UserRecord, ...]
    artist_table: dict[str, ArtistRecord]
    provenance: str = "fixture"

    def __post_init__(self) -> None:
        if not self.users:
            raise CorpusError("corpus must contain at least one user")
        if self.provenance not in ("live-api", "fixture", "synthetic"):
            raise CorpusError(f"unknown provenance {self.provenance!r}")
        seen: set[str] = set()
        for user in self.users:
            if user.user_id in seen:
                raise CorpusError(f"duplicate user_id {user.user_id!r}")
            seen.add(user.user_id)
        for user in self.users:
            for pl in user.playlists:
                for track in pl.tracks:
                    for artist_id in track.artist_ids:
                        if artist_id not in self.artist_table:
                            raise CorpusError(
                                f"track {track.track_id} references unknown artist {artist_id!r}"
                            )
        object.__setattr__(self, "users", tuple(self.users))

    def playlists(self) -> list[PlaylistRecord]:
        """All playlists across users, in user order."""
        return [pl for user in self.users for pl in user.playlists]


@dataclass(frozen=True)
class AttributeTask:
    """One classification target: an attribute with its ordered class labels."""

    name: str
    classes: tuple[str, ...]
    category: str

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise CorpusError(f"task {self.name}: needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise CorpusError(f"task {self.name}: class labels must be unique")
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def encode(self, label: str) -> int:
        """Class label -> index in [0, n_classes)."""
        try:
            return self.classes.index(label)
        except ValueError:
            raise KeyError(f"task {self.name}: unknown class label {label!r}") from None

    def decode(self, index: int) -> str:
        return self.classes[index]


_YES_NO = ("yes", "no")
_LMH = ("low", "medium", "high")

# The sixteen inference targets. Class order is fixed; encoders derive from it.
TASKS: dict[str, AttributeTask] = {
    t.name: t
    for t in (
        AttributeTask("gender", ("female", "male", "other"), "demographic"),
        AttributeTask("age", ("13-17", "18-24", "25-30", "31+"), "demographic"),
        AttributeTask(
            "country",
            ("US", "IT", "UK", "CA", "DE", "PH", "AU", "BR", "IN", "other"),
            "demographic",
        ),
        AttributeTask("relationship", _YES_NO, "demographic"),
        AttributeTask("live_alone", _YES_NO, "demographic"),
        AttributeTask("occupation", _YES_NO, "demographic"),
        AttributeTask("economic", _LMH, "demographic"),
        AttributeTask("sport", ("regularly", "occasionally", "no"), "habits"),
        AttributeTask("smoke", _YES_NO, "habits"),
        AttributeTask("alcohol", _YES_NO, "habits"),
        AttributeTask("premium", _YES_NO, "habits"),
        AttributeTask("openness", _LMH, "personality"),
        AttributeTask("conscientiousness", _LMH, "personality"),
        AttributeTask("extraversion", _LMH, "personality"),
        AttributeTask("agreeableness", _LMH, "personality"),
        AttributeTask("neuroticism", _LMH, "personality"),
    )
}

TASK_CATEGORIES = ("demographic", "habits", "personality")


def get_task(name: str) -> AttributeTask:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown attribute task {name!r}; known: {sorted(TASKS)}") from None


def age_to_bin(age: int) -> str:
    """Bin a raw age into the four survey age groups."""
    if age < 13:
        raise ValueError("ages below 13 are excluded")
    if age <= 17:
        return "13-17"
    if age <= 24:
        return "18-24"
    if age <= 30:
        return "25-30"
    return "31+"


def personality_score_to_bin(score: float) -> str:
    """Bin a 0-100 trait score into low / medium / high at [33.3, 66.6, 100]."""
    if not 0 <= score <= 100:
        raise ValueError(f"personality score {score} not in [0, 100]")
    if score <= 33.3:
        return "low"
    if score <= 66.6:
        return "medium"
    return "high"


def _sample_std(values: list[float]) -> float:
    """Sample standard deviation (n - 1 denominator); 0.0 for a single value."""
    n = len(values)
    if n <= 1:
        return 0.0
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


@dataclass(frozen=True)
class CorpusSummary:
    """Corpus-level headline counts, mirroring the dataset description tables."""

    n_users: int
    n_playlists: int
    playlists_per_user_mean: float
    playlists_per_user_std: float
    songs_per_playlist_mean: float
    songs_per_playlist_std: float
    n_unique_songs: int
    n_unique_artists: int

    def as_dict(self) -> dict[str, float | int]:
        return {
            "users": self.n_users,
            "playlists": self.n_playlists,
            "playlists_per_user_mean": self.playlists_per_user_mean,
            "playlists_per_user_std": self.playlists_per_user_std,
            "songs_per_playlist_mean": self.songs_per_playlist_mean,
            "songs_per_playlist_std": self.songs_per_playlist_std,
            "unique_songs": self.n_unique_songs,
            "unique_artists": self.n_unique_artists,
        }


def corpus_summary(corpus: Corpus) -> CorpusSummary:
    """Compute headline counts over the full corpus.

    Standard deviations are sample estimates (n - 1 denominator).
    """
    playlists = corpus.playlists()
    if not playlists:
        raise CorpusError("cannot summarize a corpus with no playlists")
    per_user = [float(len(u.playlists)) for u in corpus.users]
    per_playlist = [float(len(p.tracks)) for p in playlists]
    songs: set[str] = set()
    artists: set[str] = set()
    for pl in playlists:
        for track in pl.tracks:
            songs.add(track.track_id)
            artists.update(track.artist_ids)
    return CorpusSummary(
        n_users=len(corpus.users),
        n_playlists=len(playlists),
        playlists_per_user_mean=sum(per_user) / len(per_user),
        playlists_per_user_std=_sample_std(per_user),
        songs_per_playlist_mean=sum(per_playlist) / len(per_playlist),
        songs_per_playlist_std=_sample_std(per_playlist),
        n_unique_songs=len(songs),
        n_unique_artists=len(artists),
    )


# Class distributions at playlist level, used as default generator priors and
# as documentation fixtures. Values are fractions; rows normalize to 1.
PLAYLIST_LEVEL_PRIORS: dict[str, dict[str, float]] = {
    "gender": {"female": 0.30, "male": 0.66, "other": 0.04},
    "age": {"13-17": 0.09, "18-24": 0.39, "25-30": 0.33, "31+": 0.19},
    "country": {
        "US": 0.32, "IT": 0.08, "UK": 0.16, "CA": 0.10, "DE": 0.03,
        "PH": 0.02, "AU": 0.02, "BR": 0.03, "IN": 0.02, "other": 0.22,
    },
    "relationship": {"yes": 0.45, "no": 0.55},
    "live_alone": {"yes": 0.12, "no": 0.88},
    "occupation": {"yes": 0.61, "no": 0.39},
    "economic": {"low": 0.25, "medium": 0.46, "high": 0.29},
    "sport": {"regularly": 0.40, "occasionally": 0.32, "no": 0.27},
    "smoke": {"yes": 0.20, "no": 0.80},
    "alcohol": {"yes": 0.66, "no": 0.34},
    "premium": {"yes": 0.88, "no": 0.12},
    "openness": {"low": 0.03, "medium": 0.42, "high": 0.55},
    "conscientiousness": {"low": 0.23, "medium": 0.56, "high": 0.21},
    "extraversion": {"low": 0.38, "medium": 0.44, "high": 0.18},
    "agreeableness": {"low": 0.09, "medium": 0.60, "high": 0.31},
    "neuroticism": {"low": 0.23, "medium": 0.43, "high": 0.34},
}

USER_LEVEL_PRIORS: dict[str, dict[str, float]] = {
    "gender": {"female": 0.28, "male": 0.68, "other": 0.04},
    "age": {"13-17": 0.15, "18-24": 0.45, "25-30": 0.29, "31+": 0.11},
    "country": {
        "US": 0.27, "IT": 0.10, "UK": 0.07, "CA": 0.06, "DE": 0.05,
        "PH": 0.03, "AU": 0.03, "BR": 0.03, "IN": 0.03, "other": 0.33,
    },
    "relationship": {"yes": 0.33, "no": 0.67},
    "live_alone": {"yes": 0.14, "no": 0.86},
    "occupation": {"yes": 0.48, "no": 0.52},
    "economic": {"low": 0.25, "medium": 0.52, "high": 0.23},
    "sport": {"regularly": 0.34, "occasionally": 0.35, "no": 0.31},
    "smoke": {"yes": 0.20, "no": 0.80},
    "alcohol": {"yes": 0.54, "no": 0.46},
    "premium": {"yes": 0.76, "no": 0.24},
    "openness": {"low": 0.07, "medium": 0.46, "high": 0.47},
    "conscientiousness": {"low": 0.20, "medium": 0.62, "high": 0.18},
    "extraversion": {"low": 0.43, "medium": 0.44, "high": 0.13},
    "agreeableness": {"low": 0.10, "medium": 0.55, "high": 0.35},
    "neuroticism": {"low": 0.23, "medium": 0.41, "high": 0.36},
}


def normalized_prior(task: AttributeTask, raw: dict[str, float]) -> dict[str, float]:
    """Return ``raw`` restricted to the task's classes and normalized to sum 1."""
    values = [raw.get(c, 0.0) for c in task.classes]
    total = sum(values)
    if total <= 0:
        raise ValueError(f"prior for task {task.name} has no mass")
    return {c: v / total for c, v in zip(task.classes, values)}
