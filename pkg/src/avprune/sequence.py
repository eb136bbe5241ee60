"""Chunked audiovisual-plus-text token streams with synthetic embeddings.

A sequence is laid out as [system text, (video block, audio block) per chunk,
query text] with dense ids 0..n-1 in stream order. Original positions never
change, so later pruning stages can always refer back to the unpruned layout.
Embeddings are synthetic: each modality is a Gaussian cloud concentrated in
its own subspace, standing in for real encoder outputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateInput, InvalidInput, NotFound
from .numerics import Rng, derive_seed


class Modality(enum.Enum):
    SYSTEM_TEXT = "system_text"
    VIDEO = "video"
    AUDIO = "audio"
    QUERY_TEXT = "query_text"

    @property
    def is_text(self) -> bool:
        return self in (Modality.SYSTEM_TEXT, Modality.QUERY_TEXT)

    @property
    def is_audiovisual(self) -> bool:
        return self in (Modality.VIDEO, Modality.AUDIO)


@dataclass(frozen=True)
class TokenMeta:
    """Identity of one token; survives pruning unchanged."""

    id: int
    modality: Modality
    chunk_index: int | None
    original_position: int

    def __post_init__(self):
        if self.id < 0 or self.original_position < 0:
            raise InvalidInput("token id and position must be non-negative")
        if self.modality.is_audiovisual and self.chunk_index is None:
            raise InvalidInput(f"token {self.id}: audiovisual tokens need a chunk_index")
        if self.modality.is_text and self.chunk_index is not None:
            raise InvalidInput(f"token {self.id}: text tokens carry no chunk_index")


@dataclass(frozen=True)
class ChunkSpec:
    """Per-chunk token counts for one fixed temporal window."""

    index: int
    n_v: int
    n_a: int

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInput("chunk index must be non-negative")
        if self.n_v < 0 or self.n_a < 0 or self.n_v + self.n_a < 1:
            raise InvalidInput("chunk must hold at least one token")


@dataclass(frozen=True)
class InterleavedSequence:
    """Ordered token stream plus an aligned n x d embedding matrix.

    Immutable after construction; pruning produces a new instance via
    ``subsequence``. The stream pattern [sys, (video, audio) per chunk, query]
    is validated on every construction, also for pruned shapes.
    """

    tokens: tuple[TokenMeta, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        if emb.ndim != 2 or emb.shape[0] != len(self.tokens):
            raise InvalidInput("embeddings must have one row per token")
        self._check_layout()

    def _check_layout(self):
        seen_ids: set[int] = set()
        phase = 0  # 0 system, 1 audiovisual, 2 query
        last_pos = -1
        last_chunk = -1
        video_open = False  # inside current chunk's video block
        for tok in self.tokens:
            if tok.id in seen_ids:
                raise InvalidInput(f"duplicate token id {tok.id}")
            seen_ids.add(tok.id)
            if tok.original_position <= last_pos:
                raise InvalidInput("original positions must be strictly increasing")
            last_pos = tok.original_position
            if tok.modality is Modality.SYSTEM_TEXT:
                if phase != 0:
                    raise InvalidInput("system tokens must precede all others")
            elif tok.modality.is_audiovisual:
                if phase == 2:
                    raise InvalidInput("audiovisual tokens cannot follow query tokens")
                phase = 1
                assert tok.chunk_index is not None
                if tok.chunk_index < last_chunk:
                    raise InvalidInput("chunk indices must be non-decreasing")
                if tok.chunk_index > last_chunk:
                    last_chunk = tok.chunk_index
                    video_open = True
                if tok.modality is Modality.VIDEO:
                    if not video_open:
                        raise InvalidInput(
                            f"chunk {tok.chunk_index}: video tokens must precede audio tokens"
                        )
                else:
                    video_open = False
            else:  # query text
                phase = 2

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def d(self) -> int:
        return int(self.embeddings.shape[1])

    @cached_property
    def _by_id(self) -> dict[int, int]:
        return {tok.id: pos for pos, tok in enumerate(self.tokens)}

    def meta(self, token_id: int) -> TokenMeta:
        try:
            return self.tokens[self._by_id[token_id]]
        except KeyError:
            raise NotFound(f"unknown token id {token_id}") from None

    def position_of(self, token_id: int) -> int:
        try:
            return self._by_id[token_id]
        except KeyError:
            raise NotFound(f"unknown token id {token_id}") from None

    def ids_of(self, modality: Modality) -> tuple[int, ...]:
        return tuple(t.id for t in self.tokens if t.modality is modality)

    def count_of(self, modality: Modality) -> int:
        return sum(1 for t in self.tokens if t.modality is modality)

    @property
    def text_count(self) -> int:
        return sum(1 for t in self.tokens if t.modality.is_text)

    @property
    def audiovisual_count(self) -> int:
        return self.n - self.text_count

    @property
    def max_chunk_index(self) -> int:
        chunks = [t.chunk_index for t in self.tokens if t.chunk_index is not None]
        return max(chunks) if chunks else 0

    def subsequence(self, keep_ids) -> "InterleavedSequence":
        """New sequence retaining only the given ids, in original order."""
        keep = set(keep_ids)
        positions = [i for i, t in enumerate(self.tokens) if t.id in keep]
        return InterleavedSequence(
            tokens=tuple(self.tokens[i] for i in positions),
            embeddings=self.embeddings[positions],
        )

    def to_records(self) -> list[dict]:
        """Plain-dict token layout for JSONL serialization."""
        return [
            {
                "id": t.id,
                "modality": t.modality.value,
                "chunk_index": t.chunk_index,
                "original_position": t.original_position,
            }
            for t in self.tokens
        ]


def synth_embeddings(
    tokens,
    d: int,
    subspace_dim: int,
    noise_scale: float,
    seed: int,
    *,
    rotate: bool = False,
) -> np.ndarray:
    """Synthetic per-modality embeddings in disjoint subspaces.

    Video tokens occupy coordinate block [0, k), audio [k, 2k), text the
    remaining dims (full-space isotropic when 2k == d leaves no room). Each
    token is its modality's mean direction plus unit Gaussian spread within
    the block plus isotropic noise of scale ``noise_scale``, unit-normalized
    so cosine similarity is a plain dot product. The mean offset keeps
    intra-modal similarities broadly positive while cross-modal pairs sit
    near zero, matching how real encoder embeddings cluster by modality.

    With ``rotate=True`` a seeded orthogonal rotation is applied to every
    row; cosines are preserved, the subspaces just stop being axis-aligned.
    """
    if subspace_dim < 1:
        raise InvalidInput("subspace_dim must be >= 1")
    if 2 * subspace_dim > d:
        raise InvalidInput(f"subspace_dim {subspace_dim} exceeds d/2 = {d / 2:g}")
    if noise_scale < 0:
        raise InvalidInput("noise_scale must be non-negative")

    k = subspace_dim
    text_width = min(k, d - 2 * k)
    blocks = {
        Modality.VIDEO: (0, k),
        Modality.AUDIO: (k, 2 * k),
        Modality.SYSTEM_TEXT: (2 * k, 2 * k + text_width),
        Modality.QUERY_TEXT: (2 * k, 2 * k + text_width),
    }

    tokens = list(tokens)
    rng = Rng(seed)
    rows = np.zeros((len(tokens), d), dtype=np.float64)
    for i, tok in enumerate(tokens):
        lo, hi = blocks[tok.modality]
        if hi == lo:  # 2k == d: no disjoint room left, spread text everywhere
            lo, hi = 0, d
        rows[i, lo:hi] = 1.0 + rng.gaussians(hi - lo)
        rows[i] += noise_scale * rng.gaussians(d)

    if rotate:
        rows = rows @ _orthogonal_matrix(d, derive_seed(seed, 0x0707)).T

    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInput("zero-norm embedding row; increase noise_scale")
    return rows / norms[:, None]


def _orthogonal_matrix(d: int, seed: int) -> np.ndarray:
    # Gram-Schmidt on a seeded Gaussian matrix; rows are orthonormal.
    rng = Rng(seed)
    q = np.zeros((d, d))
    for i in range(d):
        v = rng.gaussians(d)
        for j in range(i):
            v -= (v @ q[j]) * q[j]
        n = float(np.linalg.norm(v))
        if n < 1e-12:  # essentially impossible; retry with fresh draws
            v = rng.gaussians(d)
            n = float(np.linalg.norm(v))
        q[i] = v / n
    return q


def default_subspace_dim(d: int) -> int:
    """Default modality-subspace width for a given model dimension."""
    return max(1, d // 8)


def build_sequence(
    sys_len: int,
    chunks,
    query_len: int,
    d: int,
    seed: int,
    *,
    subspace_dim: int | None = None,
    noise_scale: float = 0.3,
) -> InterleavedSequence:
    """Build the interleaved stream [sys, (video, audio) per chunk, query].

    Deterministic given the seed; embeddings come from ``synth_embeddings``.
    """
    chunks = list(chunks)
    if not chunks:
        raise InvalidInput("need at least one chunk")
    if sys_len < 0:
        raise InvalidInput("sys_len must be non-negative")
    if query_len < 1:
        raise InvalidInput("query_len must be at least 1")
    if d < 2:
        raise InvalidInput("embedding dimension must be at least 2")
    for i, spec in enumerate(chunks):
        if spec.index != i:
            raise InvalidInput(f"chunk specs must be ordered 0..m-1, got {spec.index} at {i}")

    metas: list[TokenMeta] = []

    def add(modality: Modality, chunk: int | None):
        pos = len(metas)
        metas.append(TokenMeta(id=pos, modality=modality, chunk_index=chunk, original_position=pos))

    for _ in range(sys_len):
        add(Modality.SYSTEM_TEXT, None)
    for spec in chunks:
        for _ in range(spec.n_v):
            add(Modality.VIDEO, spec.index)
        for _ in range(spec.n_a):
            add(Modality.AUDIO, spec.index)
    for _ in range(query_len):
        add(Modality.QUERY_TEXT, None)

    emb = synth_embeddings(
        metas,
        d,
        subspace_dim if subspace_dim is not None else default_subspace_dim(d),
        noise_scale,
        seed,
    )
    return InterleavedSequence(tokens=tuple(metas), embeddings=emb)


def chunk_index_of(seq: InterleavedSequence, token_id: int) -> int | None:
    """Chunk index of an audiovisual token, None for text tokens."""
    return seq.meta(token_id).chunk_index
