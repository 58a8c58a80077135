"""Mine listener attributes from public playlists.

Pipeline: ingest (API or fixtures) -> featurization (111-entry playlist
descriptors) -> statistical association analysis -> cluster similarity
analysis -> supervised attribute inference with per-playlist baselines and a
set-level classifier.
"""

__version__ = "0.1.0"
