"""Synthetic corpora with planted, known structure.

The generator draws plausible raw playlists (users, artist pools, tracks) and
superimposes exactly the requested effects:

* mean shifts: a raw quantity is shifted for every user of one attribute
  class, moving the corresponding playlist features;
* set-level max rules: an attribute's labels are rewritten to depend on the
  maximum of one playlist feature over each user's playlists (a signal an
  averaging classifier cannot represent);
* pure-cluster injections: a tight blob of playlists, all owned by users of
  one class, that the clustering stage should isolate.

The returned GroundTruth records every (attribute, feature) pair carrying
signal, the injected playlists, and the planted totals; it is the oracle the
statistical and learning test suites check against. Same seed, same corpus,
bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    PLAYLIST_LEVEL_PRIORS,
    TASKS,
    ArtistRecord,
    AttributeTask,
    Corpus,
    PlaylistRecord,
    TrackRecord,
    UserRecord,
    normalized_prior,
)
from .features import build_schema, featurize_playlist, load_lexicon

AUDIO_UNIT = ("danceability", "energy", "speechiness", "acousticness",
              "instrumentalness", "liveness", "valence")

# (center window, half spread, hard bounds) for each shiftable raw quantity
_QUANTITY_RANGES: dict[str, tuple[tuple[float, float], float, tuple[float, float]]] = {
    "popularity": ((30.0, 70.0), 15.0, (0.0, 100.0)),
    "duration_ms": ((150_000.0, 270_000.0), 30_000.0, (1.0, 3_600_000.0)),
    "release_year": ((1970.0, 2013.0), 10.0, (1900.0, 2023.0)),
    "loudness": ((-35.0, -10.0), 5.0, (-60.0, 0.0)),
    "tempo": ((90.0, 160.0), 20.0, (0.0, 250.0)),
    **{name: ((0.25, 0.75), 0.12, (0.0, 1.0)) for name in AUDIO_UNIT},
}
_ADDED_YEAR_RANGE = ((2017.0, 2021.0), 2.0, (1960.0, 2023.0))
_EXPLICIT_P = 0.3
_FOLLOWERS_HIGH = 200
_LOCAL_TAG_P = 0.15
_LOCAL_MARKERS = ("italian", "german", "french", "latin", "japanese")


class GenerationError(ValueError):
    """The generation spec is invalid or infeasible."""


@dataclass(frozen=True)
class UniformInt:
    """Inclusive integer range used for playlist and track counts."""

    low: int
    high: int

    def __post_init__(self) -> None:
        if self.low < 1 or self.high < self.low:
            raise GenerationError(f"invalid range [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.integers(self.low, self.high + 1, size=size)


@dataclass(frozen=True)
class MeanShiftEffect:
    """Shift features by a constant for every user of one attribute class."""

    attribute: str
    class_label: str
    features: dict[str, float]  # feature name -> absolute shift


@dataclass(frozen=True)
class MaxRuleEffect:
    """Relabel a binary attribute from the max of one feature over a user's
    playlists: first class when the max exceeds the corpus quantile."""

    attribute: str
    feature: str
    quantile: float = 0.5


@dataclass(frozen=True)
class PureClusterEffect:
    """Inject a tight blob of playlists owned by users of a single class."""

    attribute: str
    class_label: str
    n_playlists: int = 40
    n_owners: int = 8


@dataclass(frozen=True)
class GenerationSpec:
    seed: int
    n_users: int
    playlists_per_user: UniformInt = UniformInt(2, 8)
    tracks_per_playlist: UniformInt = UniformInt(10, 30)
    priors: dict[str, dict[str, float]] | None = None
    effects: tuple = ()
    artists_per_user: int = 8
    missing_rate: float = 0.0


@dataclass
class GroundTruth:
    """Everything the generator planted, for use as a test oracle."""

    signal_pairs: list[tuple[str, str]] = field(default_factory=list)
    max_rules: dict[str, dict] = field(default_factory=dict)
    injected_playlists: dict[str, list[str]] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=dict)
    effects: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "signal_pairs": [list(p) for p in self.signal_pairs],
            "max_rules": self.max_rules,
            "injected_playlists": self.injected_playlists,
            "totals": self.totals,
            "effects": self.effects,
        }


def _classify_target(feature: str) -> tuple[str, str | None]:
    """Map a feature name onto the raw knob that can move it."""
    if feature == "songs_explicit_ratio":
        return "explicit", None
    if feature == "misc_followers":
        return "followers", None
    if feature.startswith("genre_"):
        g = feature[len("genre_"):]
        if g in ("local", "other"):
            raise GenerationError(f"cannot plant a shift on derived bucket {feature}")
        return "genre", g
    parts = feature.split("_")
    if feature.startswith("songs_") and parts[-1] in ("mean", "min", "max"):
        quantity = "_".join(parts[1:-1])
        if quantity in _QUANTITY_RANGES:
            return "song_quantity", quantity
    if feature.startswith("misc_added_year_") and parts[-1] in ("mean", "min", "max"):
        return "added_year", None
    raise GenerationError(f"unsupported mean-shift target {feature!r}")


def _check_shift_bounds(feature: str, kind: str, quantity: str | None, delta: float) -> None:
    if kind == "explicit":
        if not 0.0 <= _EXPLICIT_P + delta <= 1.0:
            raise GenerationError(
                f"shift {delta} on {feature} pushes the explicit probability outside [0, 1]"
            )
        return
    if kind == "followers":
        if delta < 0:
            raise GenerationError(f"negative follower shift {delta} would go below zero")
        return
    if kind == "genre":
        if not 0.0 <= delta <= 0.9:
            raise GenerationError(f"genre shift {delta} on {feature} not in [0, 0.9]")
        return
    window, spread, bounds = (
        _ADDED_YEAR_RANGE if kind == "added_year" else _QUANTITY_RANGES[quantity]
    )
    lo = window[0] - spread + min(delta, 0.0)
    hi = window[1] + spread + max(delta, 0.0)
    if lo < bounds[0] or hi > bounds[1]:
        raise GenerationError(
            f"shift {delta} on {feature} exceeds the plausible bounds {bounds}"
        )


def _validate_spec(spec: GenerationSpec, schema_names: tuple[str, ...]) -> dict[str, AttributeTask]:
    if spec.n_users < 1:
        raise GenerationError("need at least one user")
    if not 0.0 <= spec.missing_rate < 1.0:
        raise GenerationError("missing_rate must be in [0, 1)")
    tasks = dict(TASKS)
    seen_attrs: set[str] = set()
    for effect in spec.effects:
        if effect.attribute not in tasks:
            raise GenerationError(f"unknown attribute {effect.attribute!r}")
        if effect.attribute in seen_attrs:
            raise GenerationError(f"multiple effects target attribute {effect.attribute!r}")
        seen_attrs.add(effect.attribute)
        if isinstance(effect, MeanShiftEffect):
            task = tasks[effect.attribute]
            if effect.class_label not in task.classes:
                raise GenerationError(
                    f"{effect.attribute!r} has no class {effect.class_label!r}"
                )
            for feature, delta in effect.features.items():
                if feature not in schema_names:
                    raise GenerationError(f"unknown feature {feature!r}")
                kind, quantity = _classify_target(feature)
                _check_shift_bounds(feature, kind, quantity, delta)
        elif isinstance(effect, MaxRuleEffect):
            if effect.feature not in schema_names:
                raise GenerationError(f"unknown feature {effect.feature!r}")
            if tasks[effect.attribute].n_classes != 2:
                raise GenerationError("max rules need a binary attribute")
            if not 0.0 < effect.quantile < 1.0:
                raise GenerationError("max-rule quantile must be in (0, 1)")
        elif isinstance(effect, PureClusterEffect):
            task = tasks[effect.attribute]
            if effect.class_label not in task.classes:
                raise GenerationError(
                    f"{effect.attribute!r} has no class {effect.class_label!r}"
                )
            if effect.n_owners < 2 or effect.n_playlists < effect.n_owners:
                raise GenerationError("cluster injection needs >= 2 owners and >= 1 playlist each")
        else:
            raise GenerationError(f"unknown effect type {type(effect).__name__}")
    return tasks


@dataclass
class _DraftPlaylist:
    playlist_id: str
    followers: int
    n_tracks: int
    centers: dict[str, float]
    values: dict[str, np.ndarray]
    explicit_u: np.ndarray       # uniforms, thresholded against the explicit p
    explicit_p: float
    added_year: np.ndarray
    artist_pick: list[tuple[int, ...]]  # per track: indices into the owner pool
    album_pick: np.ndarray
    injected: bool = False


def _draw_playlist(
    pid: str, rng: np.random.Generator, spec: GenerationSpec, pool_size: int
) -> _DraftPlaylist:
    n_tracks = int(spec.tracks_per_playlist.sample(rng))
    centers: dict[str, float] = {}
    values: dict[str, np.ndarray] = {}
    for quantity, (window, spread, _) in _QUANTITY_RANGES.items():
        center = float(rng.uniform(window[0], window[1]))
        centers[quantity] = center
        values[quantity] = center + rng.uniform(-spread, spread, size=n_tracks)
    added_center = rng.uniform(*_ADDED_YEAR_RANGE[0])
    added = np.rint(added_center + rng.uniform(-_ADDED_YEAR_RANGE[1], _ADDED_YEAR_RANGE[1], size=n_tracks))
    n_artists = np.where(rng.random(n_tracks) < 0.2, 2, 1)
    picks = []
    for k in n_artists:
        picks.append(tuple(int(a) for a in rng.choice(pool_size, size=int(k), replace=False)))
    return _DraftPlaylist(
        playlist_id=pid,
        followers=int(rng.integers(0, _FOLLOWERS_HIGH + 1)),
        n_tracks=n_tracks,
        centers=centers,
        values=values,
        explicit_u=rng.random(n_tracks),
        explicit_p=_EXPLICIT_P,
        added_year=added,
        artist_pick=picks,
        album_pick=rng.integers(0, 2, size=n_tracks),
    )


def _materialize_playlist(
    draft: _DraftPlaylist, owner_id: str, pool_ids: list[str], bounds_clip: bool = False
) -> PlaylistRecord:
    tracks = []
    for t in range(draft.n_tracks):
        audio = {name: float(draft.values[name][t]) for name in AUDIO_UNIT}
        audio["loudness"] = float(draft.values["loudness"][t])
        audio["tempo"] = float(draft.values["tempo"][t])
        artist_ids = tuple(pool_ids[a] for a in draft.artist_pick[t])
        album_artist = pool_ids[draft.artist_pick[t][0]]
        tracks.append(
            TrackRecord(
                track_id=f"{draft.playlist_id}-t{t:03d}",
                title=f"track {t} of {draft.playlist_id}",
                popularity=int(np.clip(round(draft.values["popularity"][t]), 0, 100)),
                explicit=bool(draft.explicit_u[t] < draft.explicit_p),
                release_year=int(np.clip(round(draft.values["release_year"][t]), 1900, 2023)),
                duration_ms=max(1, int(round(draft.values["duration_ms"][t]))),
                audio=audio,
                artist_ids=artist_ids,
                album_id=f"{album_artist}-alb{int(draft.album_pick[t])}",
                added_year=int(np.clip(draft.added_year[t], 1960, 2023)),
            )
        )
    return PlaylistRecord(draft.playlist_id, owner_id, draft.followers, tuple(tracks))


def generate_corpus(spec: GenerationSpec) -> tuple[Corpus, GroundTruth]:
    """Build the corpus and its ground-truth sidecar; deterministic per seed."""
    lexicon = load_lexicon()
    schema = build_schema(lexicon)
    tasks = _validate_spec(spec, schema.names)
    priors = spec.priors or PLAYLIST_LEVEL_PRIORS
    seeds = np.random.SeedSequence(spec.seed).spawn(3)
    label_rng = np.random.default_rng(seeds[0])
    base_rng = np.random.default_rng(seeds[1])
    effect_rng = np.random.default_rng(seeds[2])
    truth = GroundTruth()

    # attribute labels, sampled per task from the (normalized) priors
    attributes: list[dict[str, str]] = []
    for _ in range(spec.n_users):
        labels: dict[str, str] = {}
        for name, task in tasks.items():
            prior = normalized_prior(task, priors.get(name, PLAYLIST_LEVEL_PRIORS[name]))
            probs = [prior[c] for c in task.classes]
            labels[name] = task.classes[int(label_rng.choice(task.n_classes, p=probs))]
            if spec.missing_rate and label_rng.random() < spec.missing_rate:
                del labels[name]
        attributes.append(labels)

    # artist pools (one per user, so planted tag edits never leak across users)
    pools: list[list[str]] = []
    artist_table: dict[str, ArtistRecord] = {}
    artist_tags: dict[str, list[str]] = {}
    canonical = list(lexicon.canonical)
    for u in range(spec.n_users):
        pool = []
        for a in range(spec.artists_per_user):
            artist_id = f"u{u:04d}-a{a}"
            n_tags = int(base_rng.integers(1, 4))
            tags = [canonical[i] for i in base_rng.choice(len(canonical), size=n_tags, replace=False)]
            if base_rng.random() < _LOCAL_TAG_P:
                tags.append(str(base_rng.choice(_LOCAL_MARKERS)))
            artist_tags[artist_id] = tags
            artist_table[artist_id] = ArtistRecord(
                artist_id=artist_id,
                popularity=int(base_rng.integers(0, 101)),
                followers=int(10 ** base_rng.uniform(2.0, 6.0)),
                genres=tuple(tags),
            )
            pool.append(artist_id)
        pools.append(pool)

    drafts: list[list[_DraftPlaylist]] = []
    for u in range(spec.n_users):
        n_playlists = int(spec.playlists_per_user.sample(base_rng))
        drafts.append(
            [
                _draw_playlist(f"u{u:04d}-p{j:03d}", base_rng, spec, len(pools[u]))
                for j in range(n_playlists)
            ]
        )

    # ---- planted effects ----
    shift_effects = [e for e in spec.effects if isinstance(e, MeanShiftEffect)]
    for effect in shift_effects:
        shifted_users = [
            u for u in range(spec.n_users)
            if attributes[u].get(effect.attribute) == effect.class_label
        ]
        affected: set[str] = set()
        for feature, delta in effect.features.items():
            kind, quantity = _classify_target(feature)
            for u in shifted_users:
                for draft in drafts[u]:
                    if kind == "explicit":
                        draft.explicit_p += delta
                    elif kind == "followers":
                        draft.followers += int(round(delta))
                    elif kind == "song_quantity":
                        draft.values[quantity] = draft.values[quantity] + delta
                    elif kind == "added_year":
                        draft.added_year = np.clip(
                            draft.added_year + round(delta), 1960, 2023
                        )
                if kind == "genre":
                    p0 = _genre_base_rate(quantity)
                    q = min(1.0, delta / max(1.0 - p0, 1e-9))
                    for artist_id in pools[u]:
                        if effect_rng.random() < q:
                            artist_tags[artist_id].append(quantity)
            if kind == "explicit":
                affected.add("songs_explicit_ratio")
            elif kind == "followers":
                affected.add("misc_followers")
            elif kind == "genre":
                affected.add(f"genre_{quantity}")
            elif kind == "song_quantity":
                affected.update(f"songs_{quantity}_{s}" for s in ("mean", "min", "max"))
            elif kind == "added_year":
                affected.update(f"misc_added_year_{s}" for s in ("mean", "min", "max"))
        truth.signal_pairs.extend((effect.attribute, f) for f in sorted(affected))
        truth.effects.append(
            {
                "kind": "mean_shift",
                "attribute": effect.attribute,
                "class": effect.class_label,
                "features": dict(effect.features),
            }
        )

    # rebuild the artist table where tags were injected
    for artist_id, tags in artist_tags.items():
        if tuple(t.lower() for t in tags) != artist_table[artist_id].genres:
            old = artist_table[artist_id]
            artist_table[artist_id] = ArtistRecord(artist_id, old.popularity, old.followers, tuple(tags))

    # pure-cluster injections: extra tight-recipe playlists for one class
    for effect in spec.effects:
        if not isinstance(effect, PureClusterEffect):
            continue
        owners = [
            u for u in range(spec.n_users)
            if attributes[u].get(effect.attribute) == effect.class_label
        ][: effect.n_owners]
        while len(owners) < effect.n_owners:
            extra = next(u for u in range(spec.n_users) if u not in owners)
            attributes[extra][effect.attribute] = effect.class_label
            owners.append(extra)
        blob_artists = []
        for j in range(3):
            artist_id = f"inj-{effect.attribute}-a{j}"
            artist_table[artist_id] = ArtistRecord(
                artist_id, popularity=92, followers=1_000_000, genres=("k-pop",)
            )
            blob_artists.append(artist_id)
        injected_ids = []
        for k in range(effect.n_playlists):
            owner = owners[k % len(owners)]
            pid = f"inj-{effect.attribute}-p{k:03d}"
            draft = _draw_playlist(pid, effect_rng, spec, len(blob_artists))
            draft.n_tracks = 12
            for quantity in draft.values:
                lo, hi = _QUANTITY_RANGES[quantity][2]
                tight = lo + 0.92 * (hi - lo)
                draft.values[quantity] = tight + effect_rng.uniform(-0.01, 0.01, 12) * (hi - lo)
            draft.explicit_u = effect_rng.random(12)
            draft.explicit_p = 0.1
            draft.added_year = np.full(12, 2023.0)
            draft.artist_pick = [
                (int(effect_rng.integers(0, len(blob_artists))),) for _ in range(12)
            ]
            draft.album_pick = effect_rng.integers(0, 2, size=12)
            draft.followers = 50
            draft.injected = True
            drafts[owner].append(draft)
            injected_ids.append(pid)
        truth.injected_playlists[effect.attribute] = injected_ids
        truth.effects.append(
            {
                "kind": "pure_cluster",
                "attribute": effect.attribute,
                "class": effect.class_label,
                "playlists": len(injected_ids),
                "owners": len(owners),
            }
        )

    # materialize raw records
    users = []
    n_tracks_total = 0
    artists_used: set[str] = set()
    playlists_by_user: list[list[PlaylistRecord]] = []
    for u in range(spec.n_users):
        records = []
        for draft in drafts[u]:
            if draft.injected:
                # injected drafts index into their own 3-artist blob pool
                attr = draft.playlist_id.split("-")[1]
                pool_ids = [f"inj-{attr}-a{j}" for j in range(3)]
            else:
                pool_ids = pools[u]
            record = _materialize_playlist(draft, f"u{u:04d}", pool_ids)
            records.append(record)
            n_tracks_total += len(record.tracks)
            for track in record.tracks:
                artists_used.update(track.artist_ids)
        playlists_by_user.append(records)

    # set-level max rules rewrite labels from the realized playlists
    for effect in spec.effects:
        if not isinstance(effect, MaxRuleEffect):
            continue
        col = schema.index(effect.feature)
        user_max = np.empty(spec.n_users)
        for u in range(spec.n_users):
            vals = [
                featurize_playlist(pl, artist_table, lexicon, schema).values[col]
                for pl in playlists_by_user[u]
            ]
            user_max[u] = max(vals)
        threshold = float(np.quantile(user_max, effect.quantile))
        task = tasks[effect.attribute]
        for u in range(spec.n_users):
            attributes[u][effect.attribute] = (
                task.classes[0] if user_max[u] > threshold else task.classes[1]
            )
        truth.max_rules[effect.attribute] = {
            "feature": effect.feature,
            "threshold": threshold,
            "quantile": effect.quantile,
        }
        truth.signal_pairs.append((effect.attribute, effect.feature))
        truth.effects.append(
            {
                "kind": "max_rule",
                "attribute": effect.attribute,
                "feature": effect.feature,
                "quantile": effect.quantile,
            }
        )

    for u in range(spec.n_users):
        users.append(
            UserRecord(f"u{u:04d}", attributes[u], tuple(playlists_by_user[u]))
        )
    corpus = Corpus(tuple(users), artist_table, provenance="synthetic")
    truth.totals = {
        "users": spec.n_users,
        "playlists": sum(len(p) for p in playlists_by_user),
        "tracks": n_tracks_total,
        "unique_tracks": n_tracks_total,  # track ids are unique by construction
        "unique_artists": len(artists_used),
    }
    return corpus, truth


def _genre_base_rate(genre: str) -> float:
    """Approximate share of songs matching a canonical genre in the base draw.

    Artists carry 1-3 uniformly drawn canonical tags, so a song (usually one
    artist) matches a given exact-name genre with probability about 2/30.
    """
    return 2.0 / 30.0
