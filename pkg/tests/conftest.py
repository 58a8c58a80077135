"""Shared corpus builders for the test suite."""
from __future__ import annotations

import pytest

from playlistmine.core import ArtistRecord, Corpus, PlaylistRecord, TrackRecord, UserRecord

AUDIO_KEYS = (
    "danceability", "energy", "loudness", "speechiness", "acousticness",
    "instrumentalness", "liveness", "valence", "tempo",
)


def make_audio(dance, energy, loud, speech, acoustic, instr, live, valence, tempo):
    return dict(zip(AUDIO_KEYS, (dance, energy, loud, speech, acoustic, instr, live, valence, tempo)))


def make_track(
    track_id,
    artist_ids,
    album_id="al1",
    popularity=50,
    explicit=False,
    release_year=2015,
    duration_ms=200_000,
    added_year=2020,
    audio="default",
):
    if audio == "default":
        audio = make_audio(0.5, 0.5, -10.0, 0.1, 0.3, 0.0, 0.2, 0.5, 120.0)
    return TrackRecord(
        track_id=track_id,
        title=f"title {track_id}",
        popularity=popularity,
        explicit=explicit,
        release_year=release_year,
        duration_ms=duration_ms,
        audio=audio,
        artist_ids=tuple(artist_ids),
        album_id=album_id,
        added_year=added_year,
    )


GOLDEN_ARTISTS = {
    "a1": ArtistRecord("a1", popularity=85, followers=1_000_000, genres=("k-pop", "pop dance")),
    "a2": ArtistRecord("a2", popularity=15, followers=2_000, genres=("italian pop",)),
    "a3": ArtistRecord("a3", popularity=40, followers=50_000, genres=()),
}


def golden_playlist():
    """Handcrafted five-track playlist used as the featurization fixture."""
    tracks = (
        make_track(
            "t1", ("a1",), "al1", popularity=80, explicit=True, release_year=2020,
            duration_ms=180_000, added_year=2021,
            audio=make_audio(0.8, 0.7, -5.2, 0.05, 0.1, 0.0, 0.15, 0.6, 120.0),
        ),
        make_track(
            "t2", ("a2",), "al1", popularity=20, explicit=False, release_year=1999,
            duration_ms=240_000, added_year=2019,
            audio=make_audio(0.3, 0.4, -12.5, 0.3, 0.7, 0.8, 0.4, 0.2, 80.0),
        ),
        make_track(
            "t3", ("a1", "a3"), "al2", popularity=55, explicit=True, release_year=2015,
            duration_ms=200_000, added_year=2021,
            audio=make_audio(0.55, 0.65, -7.1, 0.12, 0.33, 0.02, 0.2, 0.5, 95.5),
        ),
        make_track(
            "t4", ("a3",), "al2", popularity=0, explicit=False, release_year=1975,
            duration_ms=320_000, added_year=2023, audio=None,
        ),
        make_track(
            "t5", ("a2",), "al3", popularity=99, explicit=False, release_year=2023,
            duration_ms=150_000, added_year=2018,
            audio=make_audio(0.9, 0.95, -3.0, 0.4, 0.05, 0.6, 0.3, 0.85, 140.0),
        ),
    )
    return PlaylistRecord("golden", "u1", followers=7, tracks=tracks)


@pytest.fixture
def golden():
    return golden_playlist(), dict(GOLDEN_ARTISTS)


def tiny_corpus():
    """Two users, three playlists, fully handcrafted."""
    artists = dict(GOLDEN_ARTISTS)
    p1 = golden_playlist()
    p2 = PlaylistRecord(
        "p2", "u1", followers=0,
        tracks=(
            make_track("t6", ("a1",), "al1", popularity=40, explicit=True, added_year=2020),
            make_track("t7", ("a1",), "al1", popularity=60, added_year=2020),
        ),
    )
    p3 = PlaylistRecord(
        "p3", "u2", followers=3,
        tracks=(
            make_track("t8", ("a3",), "al2", popularity=30, added_year=2022),
            make_track("t9", ("a2", "a3"), "al3", popularity=70, added_year=2018),
            make_track("t10", ("a2",), "al3", popularity=50, added_year=2020),
        ),
    )
    users = (
        UserRecord("u1", {"gender": "female", "smoke": "no"}, (p1, p2)),
        UserRecord("u2", {"gender": "male", "smoke": "yes", "age": "18-24"}, (p3,)),
    )
    return Corpus(users, artists, provenance="fixture")


@pytest.fixture
def corpus():
    return tiny_corpus()
