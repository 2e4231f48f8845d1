"""Multi-agent cooperative bidding laboratory for single-slot GSP auctions."""

from .datagen import GenConfig, generate, read_log, write_log
from .domain import AdProfile, AuctionEvent, EpisodeLog, FeatureVector, ObjectiveKind, objective_value
from .mechanism import AuctionOutcome, EpisodeResult, replay_episode, resolve_auction
from .policies import BidMode, MacgConfig, MacgPolicy, MkbPolicy, OcpcPolicy, Variant
from .scoring import ScoreReport, accumulate, combine, score_episode

__all__ = [
    "AdProfile", "AuctionEvent", "AuctionOutcome", "BidMode", "EpisodeLog", "EpisodeResult",
    "FeatureVector", "GenConfig", "MacgConfig", "MacgPolicy", "MkbPolicy", "ObjectiveKind",
    "OcpcPolicy", "ScoreReport", "Variant", "accumulate", "combine", "generate",
    "objective_value", "read_log", "replay_episode", "resolve_auction", "score_episode",
    "write_log",
]
