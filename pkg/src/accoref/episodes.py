"""Per-document episode plumbing shared by training and inference.

For one document we prune candidates, stack every reachable decision state
(i, j) into a matrix, precompute pair rewards and policy logits in batched
forward passes, and then run the cheap Python state machine over the
precomputed tables. Action probabilities depend only on the state vector,
so the batched precompute is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .corpus import Document
from .embeddings import EmbeddingTable
from .env import Action, CorefEnv, EnvState
from .model import CorefModel
from .spans import (
    DISTANCE_BUCKET_NA,
    SPEAKER_DIFF,
    SPEAKER_NA,
    SPEAKER_SAME,
    CandidateSpan,
    build_span_vectors,
    detection_labels,
    distance_bucket,
    enumerate_spans,
    genre_id,
    prune,
)

__all__ = ["DocPrep", "EpisodeContext", "Rollout", "prepare_doc", "build_context",
           "run_episode", "choose_action", "select_action", "links_to_span_clusters"]


@dataclass
class DocPrep:
    """Constant per-document inputs (independent of parameters)."""

    doc: Document
    spans: list[CandidateSpan]
    labels: np.ndarray
    genre: int
    span_speakers: list[str]
    emb: np.ndarray


def prepare_doc(doc: Document, table: EmbeddingTable, max_span_width: int) -> DocPrep:
    spans = enumerate_spans(doc, max_span_width)
    flat_speakers = doc.flat_speakers
    return DocPrep(
        doc=doc,
        spans=spans,
        labels=detection_labels(spans, doc),
        genre=genre_id(doc.genre),
        span_speakers=[flat_speakers[s.start] for s in spans],
        emb=table.doc_matrix(doc.doc_key, doc.n_tokens),
    )


@dataclass
class EpisodeContext:
    prep: DocPrep
    pruned: list[CandidateSpan]
    pruned_idx: np.ndarray
    n: int
    mention_logits: np.ndarray  # eval-mode logits for every candidate span
    states: np.ndarray  # (n + n_pairs, state_dim)
    rewards: np.ndarray  # decayed pair scores aligned with states rows
    policy_logits: np.ndarray  # (n + n_pairs, 3)
    pair_i: np.ndarray  # 1-based mention indices, pairs only
    pair_j: np.ndarray
    pair_dist_ids: np.ndarray
    pair_speaker_ids: np.ndarray
    env: CorefEnv
    _pair_row: dict

    def row_of(self, i: int, j: int) -> int:
        return i - 1 if j == 0 else self._pair_row[(i, j)]


def _pair_indices(n: int, max_antecedents: int) -> tuple[np.ndarray, np.ndarray]:
    ii: list[int] = []
    jj: list[int] = []
    for i in range(2, n + 1):
        lo = max(1, i - max_antecedents)
        for j in range(lo, i):
            ii.append(i)
            jj.append(j)
    return np.array(ii, dtype=np.intp), np.array(jj, dtype=np.intp)


def build_context(
    model: CorefModel,
    prep: DocPrep,
    prune_ratio: float,
    max_antecedents: int,
    reward_mode: str = "link_only",
    span_values: np.ndarray | None = None,
) -> EpisodeContext | None:
    """Precompute everything an episode needs; None for empty documents.

    ``span_values`` lets a caller that already built the span vectors (the
    training step does, with gradients) reuse the forward values.
    """
    if not prep.spans:
        return None
    feats = model.features
    with no_grad():
        if span_values is None:
            span_values = build_span_vectors(prep.spans, prep.emb, model.encoder, feats).data
        span_vecs = ad.const(span_values)
        logits = model.scorer.mention_logits(span_vecs, prep.genre).data.reshape(-1)
        kept, kept_idx = prune(prep.spans, logits, prune_ratio, prep.doc.n_tokens)
        n = len(kept)
        m = span_vecs.data[kept_idx]

        pair_i, pair_j = _pair_indices(n, max_antecedents)
        n_pairs = len(pair_i)
        dist = (pair_i - pair_j).astype(np.float64)
        dist_ids = np.array([distance_bucket(int(d)) for d in dist], dtype=np.intp)
        speakers = [prep.span_speakers[k] for k in kept_idx]
        spk_ids = np.array(
            [
                SPEAKER_SAME if speakers[i - 1] == speakers[j - 1] else SPEAKER_DIFF
                for i, j in zip(pair_i, pair_j)
            ],
            dtype=np.intp,
        )
        genre_ids = np.full(max(n_pairs, 1), prep.genre, dtype=np.intp)

        dist_tab = feats.distance.table.data
        spk_tab = feats.speaker.table.data
        genre_row = feats.genre.table.data[prep.genre]
        sentinel = model.sentinel.data[0]

        na_feats = np.concatenate(
            [dist_tab[DISTANCE_BUCKET_NA], spk_tab[SPEAKER_NA], genre_row]
        )
        sentinel_states = np.concatenate(
            [m, np.tile(sentinel, (n, 1)), np.tile(na_feats, (n, 1))], axis=1
        )
        sentinel_dist = np.arange(1, n + 1, dtype=np.float64)
        sent_rewards = model.scorer.reward(
            ad.const(m),
            ad.const(np.tile(sentinel, (n, 1))),
            sentinel_dist,
            np.full(n, DISTANCE_BUCKET_NA, dtype=np.intp),
            np.full(n, SPEAKER_NA, dtype=np.intp),
            np.full(n, prep.genre, dtype=np.intp),
        ).data.reshape(-1)

        if n_pairs:
            mi = m[pair_i - 1]
            mj = m[pair_j - 1]
            pair_feats = np.concatenate(
                [dist_tab[dist_ids], spk_tab[spk_ids], np.tile(genre_row, (n_pairs, 1))],
                axis=1,
            )
            pair_states = np.concatenate([mi, mj, pair_feats], axis=1)
            pair_rewards = model.scorer.reward(
                ad.const(mi), ad.const(mj), dist, dist_ids, spk_ids, genre_ids[:n_pairs]
            ).data.reshape(-1)
            states = np.concatenate([sentinel_states, pair_states], axis=0)
            rewards = np.concatenate([sent_rewards, pair_rewards])
        else:
            states = sentinel_states
            rewards = sent_rewards

        policy_logits = model.policy(ad.const(states)).data

    pair_row = {(int(i), int(j)): n + k for k, (i, j) in enumerate(zip(pair_i, pair_j))}
    ctx = EpisodeContext(
        prep=prep,
        pruned=kept,
        pruned_idx=kept_idx,
        n=n,
        mention_logits=logits,
        states=states,
        rewards=rewards,
        policy_logits=policy_logits,
        pair_i=pair_i,
        pair_j=pair_j,
        pair_dist_ids=dist_ids,
        pair_speaker_ids=spk_ids,
        env=None,  # set below
        _pair_row=pair_row,
    )
    ctx.env = CorefEnv(
        n,
        lambda i, j: ctx.rewards[ctx.row_of(i, j)],
        max_antecedents=max_antecedents,
        reward_mode=reward_mode,
    )
    return ctx


_ACTIONS = (Action.LINK_AND_ADVANCE, Action.ADVANCE_ANTECEDENT, Action.NO_ANTECEDENT_ADVANCE)


def choose_action(
    logits_row: np.ndarray,
    legal: set[Action],
    mode: str,
    rng: np.random.Generator | None = None,
) -> tuple[Action, float]:
    """Pick an action from one masked logits row; returns (action, log prob).

    Greedy ties break by action order LINK < ADVANCE < NO_ANTECEDENT.
    """
    if not legal:
        raise ValueError("no legal action to choose from")
    idx = [a for a in _ACTIONS if a in legal]
    z = np.array([logits_row[a] for a in idx])
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    if mode == "greedy":
        k = int(np.argmax(p))  # first maximum, so the action-order tie-break
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling mode needs a Generator")
        k = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        k = min(k, len(idx) - 1)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return idx[k], float(np.log(p[k]))


def select_action(
    policy,
    state_vec: np.ndarray,
    legal: set[Action],
    mode: str,
    rng: np.random.Generator | None = None,
) -> tuple[Action, float]:
    """One-off action selection from a raw state vector."""
    with no_grad():
        logits = policy(ad.const(state_vec.reshape(1, -1))).data[0]
    return choose_action(logits, legal, mode, rng)


@dataclass
class Rollout:
    rows: np.ndarray  # state row per transition
    actions: np.ndarray
    rewards: np.ndarray
    masks: np.ndarray  # (T, 3) legality
    links: tuple[tuple[int, int], ...]
    log_probs: np.ndarray


def run_episode(ctx: EpisodeContext, mode: str, rng: np.random.Generator | None = None) -> Rollout:
    env = ctx.env
    state = env.initial_state()
    rows: list[int] = []
    acts: list[int] = []
    rewards: list[float] = []
    masks: list[list[bool]] = []
    lps: list[float] = []
    limit = env.max_steps()
    while not env.is_terminal(state):
        if len(rows) > limit:
            raise RuntimeError("episode exceeded its step bound")
        legal = env.legal_actions(state)
        row = ctx.row_of(state.i, state.j)
        action, lp = choose_action(ctx.policy_logits[row], legal, mode, rng)
        nxt, reward = env.step(state, action)
        rows.append(row)
        acts.append(int(action))
        rewards.append(reward)
        masks.append([a in legal for a in _ACTIONS])
        lps.append(lp)
        state = nxt
    return Rollout(
        rows=np.array(rows, dtype=np.intp),
        actions=np.array(acts, dtype=np.intp),
        rewards=np.array(rewards, dtype=np.float64),
        masks=np.array(masks, dtype=bool),
        links=state.links,
        log_probs=np.array(lps, dtype=np.float64),
    )


def links_to_span_clusters(ctx: EpisodeContext, links) -> list[frozenset]:
    """Map linked mention indices back to (start, end) span clusters."""
    from .env import links_to_clusters

    clusters = links_to_clusters(links)
    out = []
    for group in clusters:
        spans = frozenset((ctx.pruned[k - 1].start, ctx.pruned[k - 1].end) for k in group)
        out.append(spans)
    return out
