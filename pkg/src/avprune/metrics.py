"""Diagnostics over traces, attention maps, and embeddings.

Covers the top-20% attention-recall curve, per-modality retention series,
pairwise cosine-similarity histograms, and an analytic FLOPs / KV-memory
cost model driven by the survivor counts of a pruning trace.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidInput
from .harness import PruneTrace
from .importance import AttentionMap
from .numerics import Rng
from .sequence import Modality

HISTOGRAM_BIN_WIDTH = 0.05  # fixed so histograms are comparable across runs


def top20_recall(
    attn: AttentionMap | np.ndarray,
    modality: Modality | None = None,
    *,
    exclude_system: bool = True,
    per_row: bool = False,
) -> float:
    """Share of attention mass held by the top 20% largest entries.

    The submatrix (optionally restricted to one modality's columns, with
    system rows dropped) is flattened and the ceil(0.2 * E) largest of its E
    entries are summed against the total. ``per_row`` instead applies the
    rule within each row and averages the per-row shares.
    """
    if isinstance(attn, AttentionMap):
        values = np.asarray(attn.values, dtype=np.float64)
        if modality is not None:
            cols = [i for i, m in enumerate(attn.col_modalities) if m is modality]
            values = values[:, cols]
        if exclude_system and any(attn.row_is_system):
            rows = [i for i, s in enumerate(attn.row_is_system) if not s]
            values = values[rows]
    else:
        values = np.asarray(attn, dtype=np.float64)
    if values.size == 0:
        raise InvalidInput("empty attention submatrix")
    if not per_row:
        return _mass_share(values.ravel())
    return float(np.mean([_mass_share(row) for row in values]))


def _mass_share(flat: np.ndarray) -> float:
    total = float(flat.sum())
    if total <= 0.0:
        raise DegenerateInput("attention submatrix has no mass")
    top = math.ceil(0.2 * flat.size)
    largest = np.sort(flat)[::-1][:top]
    return float(largest.sum()) / total


def retention_per_modality(trace: PruneTrace) -> tuple[list[float], list[float]]:
    """Per-layer (audio, video) retention relative to the layer-0 counts."""
    a0 = trace.initial_audio
    v0 = trace.initial_video
    audio = [rec.n_audio / a0 if a0 else 1.0 for rec in trace.layers]
    video = [rec.n_video / v0 if v0 else 1.0 for rec in trace.layers]
    return audio, video


class PairKind(enum.Enum):
    AA = "AA"
    VV = "VV"
    AV = "AV"


@dataclass(frozen=True)
class CosineHistogram:
    """Fixed-width histogram of pairwise cosine similarities over [-1, 1]."""

    counts: tuple[int, ...]
    pairs_used: int

    @property
    def bin_edges(self) -> np.ndarray:
        n = len(self.counts)
        return -1.0 + HISTOGRAM_BIN_WIDTH * np.arange(n + 1)


def _bin_of(value: float) -> int:
    n_bins = round(2.0 / HISTOGRAM_BIN_WIDTH)
    return min(max(int((value + 1.0) // HISTOGRAM_BIN_WIDTH), 0), n_bins - 1)


def _sample_distinct(n_total: int, k: int, rng: Rng) -> list[int]:
    # Floyd's algorithm: k distinct uniform draws from range(n_total).
    chosen: set[int] = set()
    for j in range(n_total - k, n_total):
        t = rng.below(j + 1)
        chosen.add(j if t in chosen else t)
    return sorted(chosen)


def cosine_distribution(
    embeddings: np.ndarray,
    modalities,
    pair_kind: PairKind,
    sample_cap: int = 100_000,
    rng: Rng | None = None,
) -> CosineHistogram:
    """Histogram of pairwise cosines for one pair kind (AA, VV, or AV).

    All pairs are used when they fit under ``sample_cap``; otherwise a
    uniform sample of distinct pairs is drawn from ``rng``.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    modalities = list(modalities)
    audio = [i for i, m in enumerate(modalities) if m is Modality.AUDIO]
    video = [i for i, m in enumerate(modalities) if m is Modality.VIDEO]
    need = {PairKind.AA: (audio,), PairKind.VV: (video,), PairKind.AV: (audio, video)}[pair_kind]
    for group in need:
        if len(group) < 2:
            raise InvalidInput(f"{pair_kind.value} needs at least 2 tokens per modality")

    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)

    if pair_kind is PairKind.AV:
        n_pairs = len(audio) * len(video)

        def unrank(p: int) -> tuple[int, int]:
            return audio[p // len(video)], video[p % len(video)]

    else:
        group = need[0]
        n = len(group)
        n_pairs = n * (n - 1) // 2

        def unrank(p: int) -> tuple[int, int]:
            # Triangular unranking of pair p among i < j; the discriminant
            # is a perfect square at row boundaries, so floor is exact.
            i = int((2 * n - 1 - math.sqrt((2 * n - 1) ** 2 - 8 * p)) // 2)
            j = p - i * (2 * n - i - 1) // 2 + i + 1
            return group[i], group[j]

    if n_pairs <= sample_cap:
        picks = range(n_pairs)
    else:
        if rng is None:
            raise InvalidInput("sampling above the cap requires an rng")
        picks = _sample_distinct(n_pairs, sample_cap, rng)

    n_bins = round(2.0 / HISTOGRAM_BIN_WIDTH)
    counts = [0] * n_bins
    used = 0
    for p in picks:
        i, j = unrank(p)
        c = min(1.0, max(-1.0, float(unit[i] @ unit[j])))
        counts[_bin_of(c)] += 1
        used += 1
    return CosineHistogram(counts=tuple(counts), pairs_used=used)


@dataclass(frozen=True)
class LayerCost:
    """Analytic cost of one layer at its entering survivor count."""

    layer: int
    n: int
    attention_flops: int
    linear_flops: int

    @property
    def flops(self) -> int:
        return self.attention_flops + self.linear_flops


@dataclass(frozen=True)
class CostReport:
    """Prefill FLOPs and KV-memory of a trace versus a no-pruning baseline.

    Counts mul-add pairs as 2 operations and causal attention as a full
    n-squared pass; the baseline holds the layer-0 count at every layer.
    """

    per_layer: tuple[LayerCost, ...]
    baseline_per_layer: tuple[LayerCost, ...]
    kv_bytes: int
    baseline_kv_bytes: int

    @property
    def total_flops(self) -> int:
        return sum(c.flops for c in self.per_layer)

    @property
    def baseline_total_flops(self) -> int:
        return sum(c.flops for c in self.baseline_per_layer)

    @property
    def flops_ratio(self) -> float:
        return self.total_flops / self.baseline_total_flops

    @property
    def attention_flops_ratio(self) -> float:
        return sum(c.attention_flops for c in self.per_layer) / sum(
            c.attention_flops for c in self.baseline_per_layer
        )

    @property
    def linear_flops_ratio(self) -> float:
        return sum(c.linear_flops for c in self.per_layer) / sum(
            c.linear_flops for c in self.baseline_per_layer
        )

    @property
    def kv_ratio(self) -> float:
        return self.kv_bytes / self.baseline_kv_bytes

    def to_json_obj(self) -> dict:
        return {
            "note": "mul-add counted as 2 ops; causal attention counted as full n^2",
            "per_layer": [
                {
                    "layer": c.layer,
                    "n": c.n,
                    "flops": c.flops,
                    "attention_flops": c.attention_flops,
                    "linear_flops": c.linear_flops,
                    "baseline_n": b.n,
                    "baseline_flops": b.flops,
                    "baseline_attention_flops": b.attention_flops,
                    "baseline_linear_flops": b.linear_flops,
                }
                for c, b in zip(self.per_layer, self.baseline_per_layer)
            ],
            "total_flops": self.total_flops,
            "baseline_total_flops": self.baseline_total_flops,
            "kv_bytes": self.kv_bytes,
            "baseline_kv_bytes": self.baseline_kv_bytes,
            "flops_ratio": self.flops_ratio,
            "attention_flops_ratio": self.attention_flops_ratio,
            "linear_flops_ratio": self.linear_flops_ratio,
            "kv_ratio": self.kv_ratio,
        }


def _layer_cost(layer: int, n: int, d: int) -> LayerCost:
    # Projections + feed-forward scale as 24*n*d^2; QK^T and AV as 4*n^2*d.
    return LayerCost(
        layer=layer,
        n=n,
        attention_flops=4 * n * n * d,
        linear_flops=24 * n * d * d,
    )


def cost_model(trace: PruneTrace, d: int, bytes_per_element: int) -> CostReport:
    """Analytic prefill FLOPs and KV bytes for a trace's survivor counts."""
    if d < 1 or bytes_per_element < 1:
        raise InvalidInput("d and bytes_per_element must be positive")
    counts = [rec.n_audio + rec.n_video + rec.n_text for rec in trace.layers]
    n0 = counts[0]
    per_layer = tuple(_layer_cost(rec.layer, n, d) for rec, n in zip(trace.layers, counts))
    baseline = tuple(_layer_cost(rec.layer, n0, d) for rec in trace.layers)
    kv = sum(2 * n * d * bytes_per_element for n in counts)
    kv_base = 2 * n0 * d * bytes_per_element * len(counts)
    return CostReport(
        per_layer=per_layer,
        baseline_per_layer=baseline,
        kv_bytes=kv,
        baseline_kv_bytes=kv_base,
    )
