"""Deterministic toy decoder that drives the layer-wise pruning pipeline.

The decoder is a deliberately small stand-in for a real backbone: seeded
Gaussian projections, multi-head causal self-attention, a ReLU feed-forward
with expansion 4, sinusoidal positions, all float32. Its only job is to
produce reproducible attention maps; between layers the pipeline scores
surviving audiovisual tokens from those maps, prunes the scheduled budget,
and records everything in a trace. The same pipeline can replay attention
maps captured to files instead of running the forward pass.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, SchemaError
from .importance import (
    AttentionMap,
    Selector,
    TdsConfig,
    plain_select,
    prune_count,
    query_importance,
    random_select,
    tds_select,
)
from .intra import AudioSaliency, FrameGrid, apply_intra, grid_from_embeddings
from .numerics import Rng, derive_seed
from .schedule import PruneScheduleConfig, prune_ratio
from .sequence import InterleavedSequence, Modality, TokenMeta


@dataclass(frozen=True)
class _LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


class ToyDecoder:
    """Multi-head causal decoder with seeded Gaussian weights scaled 1/sqrt(d)."""

    def __init__(self, layers: int, heads: int, d: int, seed: int):
        if layers < 1 or heads < 1:
            raise InvalidInput("layers and heads must be positive")
        if d % heads != 0:
            raise InvalidInput(f"model dim {d} not divisible by {heads} heads")
        self.layers = layers
        self.heads = heads
        self.d = d
        self.seed = seed
        rng = Rng(seed)
        scale = 1.0 / math.sqrt(d)

        def draw(rows: int, cols: int) -> np.ndarray:
            w = (rng.gaussians(rows * cols) * scale).reshape(rows, cols).astype(np.float32)
            w.setflags(write=False)
            return w

        self.weights = tuple(
            _LayerWeights(
                wq=draw(d, d),
                wk=draw(d, d),
                wv=draw(d, d),
                wo=draw(d, d),
                w1=draw(d, 4 * d),
                w2=draw(4 * d, d),
            )
            for _ in range(layers)
        )


def sinusoidal_positions(positions, d: int) -> np.ndarray:
    """Standard sin/cos positional encoding rows for the given positions."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (idx - idx % 2) / d)
    pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(np.float32)


def _forward_layer(
    x: np.ndarray, w: _LayerWeights, heads: int
) -> tuple[np.ndarray, np.ndarray]:
    """One decoder layer; returns (new hidden states, head-averaged probs)."""
    n, d = x.shape
    head_dim = d // heads
    q = (x @ w.wq).reshape(n, heads, head_dim).transpose(1, 0, 2)
    k = (x @ w.wk).reshape(n, heads, head_dim).transpose(1, 0, 2)
    v = (x @ w.wv).reshape(n, heads, head_dim).transpose(1, 0, 2)

    scores = q @ k.transpose(0, 2, 1) / np.float32(math.sqrt(head_dim))
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    scores[:, mask] = -np.inf  # exp(-inf) = 0: causal entries are exact zeros
    probs = np.exp(scores - scores.max(axis=2, keepdims=True))
    probs /= probs.sum(axis=2, keepdims=True)

    context = (probs @ v).transpose(1, 0, 2).reshape(n, d)
    x = x + context @ w.wo
    x = x + np.maximum(x @ w.w1, np.float32(0.0)) @ w.w2
    return x, probs.mean(axis=0)


@dataclass(frozen=True)
class LayerRecord:
    """What happened at one layer: budget, pruned ids, entering counts."""

    layer: int
    p_l: float
    k_l: int
    pruned_ids: tuple[int, ...]
    n_audio: int
    n_video: int
    n_text: int
    selector: str

    def to_json_obj(self) -> dict:
        return {
            "layer": self.layer,
            "p_l": self.p_l,
            "k_l": self.k_l,
            "pruned_ids": list(self.pruned_ids),
            "n_audio": self.n_audio,
            "n_video": self.n_video,
            "n_text": self.n_text,
            "selector": self.selector,
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "LayerRecord":
        try:
            return LayerRecord(
                layer=obj["layer"],
                p_l=obj["p_l"],
                k_l=obj["k_l"],
                pruned_ids=tuple(obj["pruned_ids"]),
                n_audio=obj["n_audio"],
                n_video=obj["n_video"],
                n_text=obj["n_text"],
                selector=obj["selector"],
            )
        except KeyError as exc:
            raise SchemaError(f"layer record missing key {exc}") from None


@dataclass(frozen=True)
class PruneTrace:
    """Per-layer pruning record of one harness run.

    Counts are the tokens *entering* each layer, so consecutive records obey
    survivors(l+1) = survivors(l) - k_l and the pruned ids plus the final
    survivors partition the initial audiovisual population.
    """

    layers: tuple[LayerRecord, ...]

    def __post_init__(self):
        prev: LayerRecord | None = None
        for rec in self.layers:
            if prev is not None:
                if rec.n_text != prev.n_text:
                    raise InvalidInput("text count must stay constant across layers")
                if rec.n_audio + rec.n_video != prev.n_audio + prev.n_video - prev.k_l:
                    raise InvalidInput("entering counts must drop by exactly k_l")
            if len(rec.pruned_ids) != rec.k_l:
                raise InvalidInput("pruned id list must match k_l")
            prev = rec

    @property
    def initial_audio(self) -> int:
        return self.layers[0].n_audio

    @property
    def initial_video(self) -> int:
        return self.layers[0].n_video

    @property
    def final_survivors(self) -> int:
        last = self.layers[-1]
        return last.n_audio + last.n_video - last.k_l

    @property
    def total_pruned(self) -> int:
        return sum(rec.k_l for rec in self.layers)

    def canonical_lines(self) -> list[str]:
        return [
            json.dumps(rec.to_json_obj(), sort_keys=True, separators=(",", ":"))
            for rec in self.layers
        ]

    @property
    def digest(self) -> str:
        payload = "\n".join(self.canonical_lines()).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class AttentionRecord:
    """One layer's restricted text-to-audiovisual map, ready for dump/replay."""

    layer: int
    col_ids: tuple[int, ...]
    values: np.ndarray  # (text rows, AV cols) float32


@dataclass(frozen=True)
class IntraPlan:
    """Intra-pruning parameters plus the per-chunk inputs they consume."""

    audio_keep: float
    video_prune_rate: float
    scores: tuple[AudioSaliency | None, ...]
    grids: tuple[FrameGrid | None, ...]


def make_intra_plan(
    seq: InterleavedSequence,
    audio_keep: float,
    video_prune_rate: float,
    frames_per_chunk: int,
    seed: int,
) -> IntraPlan:
    """Synthesize intra-pruning inputs for a sequence.

    Audio saliency is seeded-uniform (the real audio encoder is out of
    scope); video grids are views of the sequence's own video embeddings.
    """
    rng = Rng(derive_seed(seed, 0x1A7D10))
    n_chunks = seq.max_chunk_index + 1
    scores: list[AudioSaliency | None] = []
    grids: list[FrameGrid | None] = []
    for c in range(n_chunks):
        audio_ids = [t.id for t in seq.tokens if t.chunk_index == c and t.modality is Modality.AUDIO]
        video_pos = [
            seq.position_of(t.id)
            for t in seq.tokens
            if t.chunk_index == c and t.modality is Modality.VIDEO
        ]
        scores.append(
            AudioSaliency(scores=tuple(rng.uniform() for _ in audio_ids)) if audio_ids else None
        )
        grids.append(
            grid_from_embeddings(seq.embeddings[video_pos], frames_per_chunk) if video_pos else None
        )
    return IntraPlan(
        audio_keep=audio_keep,
        video_prune_rate=video_prune_rate,
        scores=tuple(scores),
        grids=tuple(grids),
    )


class _TokenState:
    """Mutable view of the surviving tokens during one run."""

    def __init__(self, seq: InterleavedSequence, include_system_rows: bool):
        self.metas: list[TokenMeta] = list(seq.tokens)
        self.include_system_rows = include_system_rows

    def text_rows(self) -> tuple[list[int], list[bool]]:
        rows, is_system = [], []
        for pos, tok in enumerate(self.metas):
            if tok.modality is Modality.QUERY_TEXT or (
                self.include_system_rows and tok.modality is Modality.SYSTEM_TEXT
            ):
                rows.append(pos)
                is_system.append(tok.modality is Modality.SYSTEM_TEXT)
        return rows, is_system

    def av_columns(self) -> list[int]:
        return [pos for pos, tok in enumerate(self.metas) if tok.modality.is_audiovisual]

    def counts(self) -> tuple[int, int, int]:
        n_a = sum(1 for t in self.metas if t.modality is Modality.AUDIO)
        n_v = sum(1 for t in self.metas if t.modality is Modality.VIDEO)
        return n_a, n_v, len(self.metas) - n_a - n_v

    def drop_ids(self, ids: set[int]) -> list[int]:
        positions = [pos for pos, tok in enumerate(self.metas) if tok.id in ids]
        self.metas = [tok for tok in self.metas if tok.id not in ids]
        return positions


def _restricted_map(full: np.ndarray, state: _TokenState) -> AttentionMap:
    rows, is_system = state.text_rows()
    cols = state.av_columns()
    col_meta = [state.metas[c] for c in cols]
    values = full[np.ix_(rows, cols)] if rows and cols else np.zeros((len(rows), len(cols)), np.float32)
    return AttentionMap(
        values=values.astype(np.float32),
        col_ids=tuple(t.id for t in col_meta),
        col_chunks=tuple(t.chunk_index for t in col_meta),
        col_modalities=tuple(t.modality for t in col_meta),
        row_is_system=tuple(is_system),
    )


def _effective_selector(selector: Selector, layer: int, tds: TdsConfig) -> Selector:
    if selector is Selector.TDS and layer < tds.start_layer:
        return Selector.PLAIN
    return selector


def _select(
    attn: AttentionMap,
    effective: Selector,
    k_l: int,
    tds: TdsConfig,
    max_chunk: int,
    selector_rng: Rng,
) -> set[int]:
    if effective is Selector.RANDOM:
        return random_select(attn.col_ids, k_l, selector_rng)
    scores = query_importance(attn)
    if effective is Selector.TDS:
        return tds_select(scores, k_l, tds, max_chunk)
    return plain_select(scores, k_l)


def _pruning_loop(
    seq: InterleavedSequence,
    sched: PruneScheduleConfig,
    tds: TdsConfig,
    selector: Selector,
    layer_map,
    drop_rows,
    *,
    include_system_rows: bool,
    selector_seed: int,
    attention_out: list | None,
) -> PruneTrace:
    state = _TokenState(seq, include_system_rows)
    selector_rng = Rng(selector_seed)
    max_chunk = seq.max_chunk_index
    records = []
    for layer in range(sched.layers):
        attn = layer_map(layer, state)
        if attention_out is not None:
            attention_out.append(
                AttentionRecord(layer=layer, col_ids=attn.col_ids, values=attn.values)
            )
        n_audio, n_video, n_text = state.counts()
        p_l = prune_ratio(layer, sched)
        k_l = prune_count(n_audio, n_video, p_l)
        effective = _effective_selector(selector, layer, tds)
        pruned: set[int] = set()
        if k_l > 0:
            pruned = _select(attn, effective, k_l, tds, max_chunk, selector_rng)
            drop_rows(state.drop_ids(pruned))
        records.append(
            LayerRecord(
                layer=layer,
                p_l=p_l,
                k_l=k_l,
                pruned_ids=tuple(sorted(pruned)),
                n_audio=n_audio,
                n_video=n_video,
                n_text=n_text,
                selector=effective.value,
            )
        )
    return PruneTrace(layers=tuple(records))


def _apply_intra_plan(seq: InterleavedSequence, intra: IntraPlan | None) -> InterleavedSequence:
    if intra is None:
        return seq
    pruned, _ = apply_intra(
        seq, intra.audio_keep, intra.video_prune_rate, intra.scores, intra.grids
    )
    return pruned


def run_with_pruning(
    seq: InterleavedSequence,
    model: ToyDecoder,
    sched: PruneScheduleConfig,
    tds: TdsConfig,
    selector: Selector = Selector.TDS,
    intra: IntraPlan | None = None,
    *,
    include_system_rows: bool = False,
    selector_seed: int | None = None,
    attention_out: list | None = None,
    full_attention_out: list | None = None,
) -> PruneTrace:
    """Forward the toy decoder, pruning scheduled budgets between layers.

    Optional sinks: ``attention_out`` collects the restricted per-layer maps
    (the dump format), ``full_attention_out`` the full head-averaged maps.
    """
    if sched.layers != model.layers:
        raise InvalidInput("schedule and model layer counts differ")
    if seq.n == 0:
        raise InvalidInput("sequence is empty")
    if seq.d != model.d:
        raise InvalidInput(f"sequence dim {seq.d} does not match model dim {model.d}")

    working = _apply_intra_plan(seq, intra)
    positions = [t.original_position for t in working.tokens]
    x = working.embeddings.astype(np.float32) + sinusoidal_positions(positions, model.d)

    def layer_map(layer: int, state: _TokenState) -> AttentionMap:
        nonlocal x
        x, avg = _forward_layer(x, model.weights[layer], model.heads)
        if full_attention_out is not None:
            full_attention_out.append(avg)
        return _restricted_map(avg, state)

    def drop_rows(positions: list[int]):
        nonlocal x
        x = np.delete(x, positions, axis=0)

    return _pruning_loop(
        working,
        sched,
        tds,
        selector,
        layer_map,
        drop_rows,
        include_system_rows=include_system_rows,
        selector_seed=selector_seed if selector_seed is not None else derive_seed(model.seed, 0x5E1EC7),
        attention_out=attention_out,
    )


def run_with_injected_attention(
    seq: InterleavedSequence,
    maps,
    sched: PruneScheduleConfig,
    tds: TdsConfig,
    selector: Selector = Selector.TDS,
    intra: IntraPlan | None = None,
    *,
    include_system_rows: bool = False,
    selector_seed: int | None = None,
    replay_seed: int = 0,
) -> PruneTrace:
    """Replay externally captured attention maps through the same pipeline.

    ``maps`` holds one AttentionRecord per layer; columns are re-indexed by
    token id, so each record must cover every audiovisual survivor entering
    its layer (missing ids or a wrong row count raise SchemaError).
    ``replay_seed`` seeds the random selector when no explicit seed is given,
    standing in for the model seed of a forward run.
    """
    maps = list(maps)
    if len(maps) < sched.layers:
        raise InvalidInput(f"need {sched.layers} attention maps, got {len(maps)}")
    for layer, rec in enumerate(maps[: sched.layers]):
        if rec.layer != layer:
            raise InvalidInput(f"attention map {layer} labeled {rec.layer}")

    working = _apply_intra_plan(seq, intra)

    def layer_map(layer: int, state: _TokenState) -> AttentionMap:
        rec = maps[layer]
        by_id = {tid: col for col, tid in enumerate(rec.col_ids)}
        rows, is_system = state.text_rows()
        cols_meta = [state.metas[c] for c in state.av_columns()]
        try:
            col_sel = [by_id[t.id] for t in cols_meta]
        except KeyError as exc:
            raise SchemaError(f"layer {layer}: no attention column for token id {exc}") from None
        values = np.asarray(rec.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] != len(rows):
            raise SchemaError(
                f"layer {layer}: expected {len(rows)} text rows, got {values.shape[0]}"
            )
        return AttentionMap(
            values=values[:, col_sel] if col_sel else values[:, :0],
            col_ids=tuple(t.id for t in cols_meta),
            col_chunks=tuple(t.chunk_index for t in cols_meta),
            col_modalities=tuple(t.modality for t in cols_meta),
            row_is_system=tuple(is_system),
        )

    return _pruning_loop(
        working,
        sched,
        tds,
        selector,
        layer_map,
        lambda positions: None,
        include_system_rows=include_system_rows,
        selector_seed=selector_seed if selector_seed is not None else derive_seed(replay_seed, 0x5E1EC7),
        attention_out=None,
    )
