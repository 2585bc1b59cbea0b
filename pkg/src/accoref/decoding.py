"""Greedy inference from a checkpoint plus detection diagnostics."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .corpus import Document
from .embeddings import EmbeddingTable
from .episodes import build_context, links_to_span_clusters, prepare_doc, run_episode
from .model import CorefModel
from .training import TrainConfig

__all__ = ["decode", "decode_corpus", "mention_detection_by_width", "WIDTH_BUCKETS"]


def decode(doc: Document, model: CorefModel, table: EmbeddingTable, cfg: TrainConfig
           ) -> list[frozenset]:
    """Greedy clusters for one document; singletons never arise from links."""
    prep = prepare_doc(doc, table, cfg.max_span_width)
    ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents, cfg.reward_mode)
    if ctx is None or ctx.n == 0:
        return []
    roll = run_episode(ctx, "greedy")
    return links_to_span_clusters(ctx, roll.links)


def decode_corpus(
    docs: list[Document],
    model: CorefModel,
    table: EmbeddingTable,
    cfg: TrainConfig,
    threads: int = 1,
) -> list[list[frozenset]]:
    """Decode documents independently; results do not depend on thread count."""
    if threads <= 1 or len(docs) <= 1:
        return [decode(d, model, table, cfg) for d in docs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda d: decode(d, model, table, cfg), docs))


WIDTH_BUCKETS = ((1, 2), (3, 4), (5, 7), (8, 10))


def mention_detection_by_width(
    docs: list[Document],
    model: CorefModel,
    table: EmbeddingTable,
    cfg: TrainConfig,
    buckets=WIDTH_BUCKETS,
) -> dict[tuple[int, int], float | None]:
    """Recall of gold mentions among spans with positive detection logit,
    grouped by span width; buckets with no gold mention report None."""
    hits = {b: 0 for b in buckets}
    totals = {b: 0 for b in buckets}
    for doc in docs:
        prep = prepare_doc(doc, table, cfg.max_span_width)
        ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents, cfg.reward_mode)
        if ctx is None:
            continue
        predicted = ctx.mention_logits > 0.0
        for k, span in enumerate(prep.spans):
            if prep.labels[k] != 1.0:
                continue
            for b in buckets:
                if b[0] <= span.width <= b[1]:
                    totals[b] += 1
                    if predicted[k]:
                        hits[b] += 1
                    break
    return {b: (hits[b] / totals[b] if totals[b] else None) for b in buckets}
