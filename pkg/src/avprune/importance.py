"""Query-guided token importance and the pruning selectors.

Importance of a surviving audiovisual token is the mean attention it receives
from the text-query rows of a head-averaged attention map. Selection removes
the k lowest-importance tokens, optionally rescoring a 2k candidate buffer
with a temporal-diversity bonus that protects tokens far from the chunk
holding the attention peak. All ties prune the lower token id first.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .numerics import Rng
from .sequence import Modality


class Selector(enum.Enum):
    PLAIN = "plain"
    TDS = "tds"
    RANDOM = "random"


@dataclass(frozen=True)
class AttentionMap:
    """Text rows of a head-averaged attention map, restricted to AV columns.

    Values are the original post-softmax probabilities: the row-sum-to-one
    invariant holds for full rows before restriction, so restricted rows sum
    to at most one. Column metadata travels with the matrix so scores can be
    tied back to token ids and chunks.
    """

    values: np.ndarray  # (text rows, surviving AV columns), float32
    col_ids: tuple[int, ...]
    col_chunks: tuple[int, ...]
    col_modalities: tuple[Modality, ...]
    row_is_system: tuple[bool, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        rows, cols = vals.shape
        if cols != len(self.col_ids) or cols != len(self.col_chunks) or cols != len(self.col_modalities):
            raise InvalidInput("column metadata must match the value matrix width")
        if rows != len(self.row_is_system):
            raise InvalidInput("row metadata must match the value matrix height")
        if vals.size and float(vals.min()) < 0.0:
            raise InvalidInput("attention values must be non-negative")


@dataclass(frozen=True)
class ImportanceScores:
    """Per surviving audiovisual token: importance score, id, chunk index."""

    ids: tuple[int, ...]
    scores: np.ndarray  # float64
    chunks: tuple[int, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        if len(self.ids) != scores.shape[0] or len(self.chunks) != scores.shape[0]:
            raise InvalidInput("ids, scores and chunks must be parallel")
        if scores.size and not np.all(np.isfinite(scores)):
            raise InvalidInput("importance scores must be finite")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TdsConfig:
    """Diversity weight and the layer from which the TDS selector kicks in."""

    lambda_div: float = 0.2
    start_layer: int = 14

    def __post_init__(self):
        if self.lambda_div < 0:
            raise InvalidInput("lambda_div must be non-negative")
        if self.start_layer < 0:
            raise InvalidInput("start_layer must be non-negative")


def query_importance(attn: AttentionMap) -> ImportanceScores:
    """Column mean of the attention map over its text rows."""
    if attn.values.shape[0] == 0:
        raise InvalidInput("attention map has no text rows")
    scores = attn.values.mean(axis=0, dtype=np.float64)
    return ImportanceScores(ids=attn.col_ids, scores=scores, chunks=attn.col_chunks)


def prune_count(n_audio: int, n_video: int, p_l: float) -> int:
    """Per-layer pruning budget: floor of the pooled AV count times p_l."""
    if not (0.0 <= p_l < 1.0):
        raise InvalidInput("p_l must lie in [0, 1)")
    return int(np.floor((n_audio + n_video) * p_l))


def _ascending(scores: ImportanceScores) -> list[int]:
    # Positions ordered by (score, id): the global lower-id-first tie rule.
    vals = scores.scores
    return sorted(range(len(scores)), key=lambda i: (vals[i], scores.ids[i]))


def plain_select(scores: ImportanceScores, k: int) -> set[int]:
    """Ids of the k lowest-importance tokens; ties prune the lower id first."""
    if k > len(scores):
        warnings.warn(
            f"pruning budget {k} exceeds the {len(scores)} surviving tokens; clamping",
            RuntimeWarning,
            stacklevel=2,
        )
        k = len(scores)
    if k <= 0:
        return set()
    return {scores.ids[i] for i in _ascending(scores)[:k]}


def tds_select(scores: ImportanceScores, k: int, cfg: TdsConfig, max_chunk: int) -> set[int]:
    """Diversity-aware selection over a 2k candidate buffer.

    The key chunk is the one holding the highest-importance token; buffer
    entries get a bonus of lambda_div times their normalized chunk distance
    from it, and the k lowest rescored candidates are pruned. ``max_chunk``
    is the maximum chunk index of the full sequence; a single-chunk sequence
    (max_chunk = 0) degenerates to plain selection.
    """
    k = min(k, len(scores))
    if k <= 0:
        return set()
    vals = scores.scores
    peak = min(range(len(scores)), key=lambda i: (-vals[i], scores.ids[i]))
    key_chunk = scores.chunks[peak]
    buffer = _ascending(scores)[: min(2 * k, len(scores))]
    rescored = []
    for i in buffer:
        distance = abs(key_chunk - scores.chunks[i]) / max_chunk if max_chunk > 0 else 0.0
        rescored.append((vals[i] + cfg.lambda_div * distance, scores.ids[i]))
    rescored.sort()
    return {token_id for _, token_id in rescored[:k]}


def random_select(ids, k: int, rng: Rng) -> set[int]:
    """Uniform sample of k ids without replacement; clamps oversized budgets."""
    pool = list(ids)
    k = min(max(k, 0), len(pool))
    for i in range(k):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return set(pool[:k])
