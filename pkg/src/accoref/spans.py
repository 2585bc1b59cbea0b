"""Candidate spans, span representations, mention scoring and pruning.

A span vector is the concatenation [start-token embedding; end-token
embedding; attention-weighted head vector; width-bucket embedding], so its
length is 3 * d_tok + feat_dim for every span of a document.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .corpus import Document
from .layers import Embedding

__all__ = [
    "CandidateSpan",
    "SpanRepr",
    "FeatureEmbedder",
    "SpanEncoder",
    "DISTANCE_BUCKET_NA",
    "SPEAKER_SAME",
    "SPEAKER_DIFF",
    "SPEAKER_NA",
    "distance_bucket",
    "genre_id",
    "enumerate_spans",
    "head_attention",
    "span_repr",
    "build_span_vectors",
    "detection_labels",
    "detection_loss",
    "prune",
]


@dataclass(frozen=True, order=True)
class CandidateSpan:
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span start {self.start} > end {self.end}")

    @property
    def width(self) -> int:
        return self.end - self.start + 1


@dataclass
class SpanRepr:
    span: CandidateSpan
    vector: Tensor
    mention_logit: float = 0.0


# Distance buckets for pair features: index 0 is reserved for "not
# applicable" (lone spans and the sentinel antecedent).
_DISTANCE_EDGES = (1, 2, 3, 4, 5, 8, 16, 32, 64)
DISTANCE_BUCKET_NA = 0
SPEAKER_DIFF = 0
SPEAKER_SAME = 1
SPEAKER_NA = 2
_N_GENRE_SLOTS = 16


def distance_bucket(distance: int) -> int:
    """Bucket a mention-index distance >= 1 into 1..9."""
    if distance < 1:
        raise ValueError(f"distance must be >= 1, got {distance}")
    for b in range(len(_DISTANCE_EDGES) - 1, -1, -1):
        if distance >= _DISTANCE_EDGES[b]:
            return b + 1
    raise AssertionError("unreachable")


def genre_id(genre: str) -> int:
    """Stable hash of the genre string into a fixed slot table."""
    digest = hashlib.blake2b(genre.encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little") % _N_GENRE_SLOTS


class FeatureEmbedder:
    """Learned 20-dim embeddings for width, distance, speaker match, genre."""

    def __init__(self, max_span_width: int, feat_dim: int, rng: np.random.Generator):
        self.feat_dim = feat_dim
        self.max_span_width = max_span_width
        self.width = Embedding(max_span_width, feat_dim, rng, "features.width")
        self.distance = Embedding(len(_DISTANCE_EDGES) + 1, feat_dim, rng, "features.distance")
        self.speaker = Embedding(3, feat_dim, rng, "features.speaker")
        self.genre = Embedding(_N_GENRE_SLOTS, feat_dim, rng, "features.genre")

    def width_rows(self, widths) -> Tensor:
        ids = np.asarray(widths, dtype=np.intp) - 1
        return self.width(ids)

    def pair_rows(self, dist_ids, speaker_ids, genre_ids) -> Tensor:
        """Concatenated (distance, speaker-match, genre) rows, (n, 3*feat_dim)."""
        return ad.concat(
            [self.distance(dist_ids), self.speaker(speaker_ids), self.genre(genre_ids)],
            axis=1,
        )

    def solo_rows(self, genre: int, n: int) -> Tensor:
        """Pair-feature block for lone spans: distance and speaker are n/a."""
        return self.pair_rows(
            np.zeros(n, dtype=np.intp) + DISTANCE_BUCKET_NA,
            np.zeros(n, dtype=np.intp) + SPEAKER_NA,
            np.zeros(n, dtype=np.intp) + genre,
        )

    @property
    def pair_dim(self) -> int:
        return 3 * self.feat_dim

    def parameters(self) -> list[Parameter]:
        return (
            self.width.parameters()
            + self.distance.parameters()
            + self.speaker.parameters()
            + self.genre.parameters()
        )


class SpanEncoder:
    """Head-finding attention projection over token embeddings."""

    def __init__(self, d_tok: int, rng: np.random.Generator):
        from .layers import glorot_uniform

        self.v_o = Parameter(glorot_uniform(rng, d_tok, 1), "encoder.v_o")
        self.d_tok = d_tok

    def parameters(self) -> list[Parameter]:
        return [self.v_o]


def enumerate_spans(doc: Document, max_width: int) -> list[CandidateSpan]:
    """All spans of width <= max_width inside a single sentence, by (start, end)."""
    if max_width < 1:
        raise ValueError(f"max_width must be >= 1, got {max_width}")
    spans = []
    for lo, hi in doc.sentence_bounds():
        for start in range(lo, hi + 1):
            for end in range(start, min(start + max_width - 1, hi) + 1):
                spans.append(CandidateSpan(start, end))
    spans.sort(key=lambda s: (s.start, s.end))
    return spans


def head_attention(token_embs: Tensor, v_o: Tensor) -> Tensor:
    """Attention-weighted sum over one span's token embeddings, (1, d)."""
    w, d = token_embs.shape
    logits = ad.reshape(ad.matmul(token_embs, v_o), (1, w))
    alpha = ad.softmax(logits, axis=-1)
    return ad.matmul(alpha, token_embs)


def span_repr(
    span: CandidateSpan,
    emb_matrix: np.ndarray,
    encoder: SpanEncoder,
    features: FeatureEmbedder,
) -> SpanRepr:
    """Single-span representation; the batched path is build_span_vectors."""
    toks = ad.const(emb_matrix[span.start : span.end + 1])
    head = head_attention(toks, encoder.v_o)
    start = ad.const(emb_matrix[span.start : span.start + 1])
    end = ad.const(emb_matrix[span.end : span.end + 1])
    width_emb = features.width_rows([span.width])
    vec = ad.concat([start, end, head, width_emb], axis=1)
    return SpanRepr(span=span, vector=vec)


def build_span_vectors(
    spans: list[CandidateSpan],
    emb_matrix: np.ndarray,
    encoder: SpanEncoder,
    features: FeatureEmbedder,
) -> Tensor:
    """Span vectors for a whole document, (n_spans, 3*d_tok + feat_dim).

    Spans are grouped by width so the attention softmax runs over fixed-size
    blocks; rows come back in the original span order.
    """
    n = len(spans)
    d = emb_matrix.shape[1]
    by_width: dict[int, list[int]] = {}
    for idx, s in enumerate(spans):
        by_width.setdefault(s.width, []).append(idx)

    parts: list[Tensor] = []
    order: list[int] = []
    for w, idxs in sorted(by_width.items()):
        rows = np.array(
            [np.arange(spans[i].start, spans[i].end + 1) for i in idxs], dtype=np.intp
        )
        toks = ad.const(emb_matrix[rows.ravel()])  # (m*w, d)
        logits = ad.reshape(ad.matmul(toks, encoder.v_o), (len(idxs), w))
        alpha = ad.softmax(logits, axis=-1)
        weighted = ad.mul(ad.reshape(alpha, (len(idxs), w, 1)), ad.reshape(toks, (len(idxs), w, d)))
        head = ad.tsum(weighted, axis=1)
        starts = ad.const(emb_matrix[[spans[i].start for i in idxs]])
        ends = ad.const(emb_matrix[[spans[i].end for i in idxs]])
        width_emb = features.width_rows([w] * len(idxs))
        parts.append(ad.concat([starts, ends, head, width_emb], axis=1))
        order.extend(idxs)

    stacked = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    inverse = np.empty(n, dtype=np.intp)
    inverse[np.array(order, dtype=np.intp)] = np.arange(n)
    return ad.gather_rows(stacked, inverse)


def detection_labels(spans: list[CandidateSpan], doc: Document) -> np.ndarray:
    gold = {span for cluster in doc.gold_clusters for span in cluster}
    return np.array([1.0 if (s.start, s.end) in gold else 0.0 for s in spans])


def detection_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over candidate spans."""
    if logits.data.size == 0:
        raise ValueError("detection_loss on an empty span set")
    targets = ad.const(labels.reshape(logits.shape))
    return ad.tmean(ad.bce_with_logits(logits, targets))


def prune(
    spans: list[CandidateSpan],
    logits: np.ndarray,
    ratio: float,
    n_tokens: int,
) -> tuple[list[CandidateSpan], np.ndarray]:
    """Keep the top ceil(ratio * n_tokens) spans by mention logit.

    Ties break toward earlier start, then shorter width; survivors are
    re-sorted by (start, end). Returns (spans, original indices).
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"prune ratio {ratio} outside (0, 1]")
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    keep = min(len(spans), math.ceil(ratio * n_tokens))
    ranked = sorted(
        range(len(spans)),
        key=lambda i: (-logits[i], spans[i].start, spans[i].width),
    )[:keep]
    ranked.sort(key=lambda i: (spans[i].start, spans[i].end))
    return [spans[i] for i in ranked], np.array(ranked, dtype=np.intp)
