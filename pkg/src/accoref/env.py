"""Mention-pair decision process: states, actions, transitions and rewards.

A state is (i, j): the current mention index i (1-based over the pruned
spans) and the antecedent candidate index j, with j = 0 standing for the
learned sentinel "no candidate yet". Candidates are scanned left to right
within a bounded window ending at j = i - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import FeedForward, glorot_uniform
from .spans import (
    DISTANCE_BUCKET_NA,
    SPEAKER_NA,
    FeatureEmbedder,
    distance_bucket,
)

__all__ = [
    "Action",
    "EnvState",
    "Transition",
    "EpisodeRecord",
    "RewardScorer",
    "CorefEnv",
    "IllegalActionError",
    "window_start",
    "legal_actions",
    "links_to_clusters",
    "UnionFind",
]


class Action(IntEnum):
    # Numeric order doubles as the greedy tie-break order.
    LINK_AND_ADVANCE = 0
    ADVANCE_ANTECEDENT = 1
    NO_ANTECEDENT_ADVANCE = 2


@dataclass(frozen=True)
class EnvState:
    i: int
    j: int
    links: tuple[tuple[int, int], ...] = ()


@dataclass
class Transition:
    state: tuple[int, int]
    action: Action
    reward: float
    next_state: tuple[int, int] | None  # None once terminal
    log_prob: float = 0.0
    value: float = 0.0
    next_value: float = 0.0

    @property
    def terminal(self) -> bool:
        return self.next_state is None


@dataclass
class EpisodeRecord:
    transitions: list[Transition] = field(default_factory=list)
    terminal: bool = False

    def validate_chain(self) -> None:
        for a, b in zip(self.transitions, self.transitions[1:]):
            if a.next_state != b.state:
                raise ValueError(f"broken transition chain at {a} -> {b}")
        if self.transitions and self.terminal and self.transitions[-1].next_state is not None:
            raise ValueError("terminal episode whose last transition has a successor")


class IllegalActionError(RuntimeError):
    def __init__(self, state: EnvState, action: Action, n: int):
        super().__init__(f"action {action.name} illegal in state (i={state.i}, j={state.j}, n={n})")


def window_start(i: int, max_antecedents: int) -> int:
    """Leftmost candidate index for mention i."""
    return max(1, i - max_antecedents)


def _next_j(j: int, i: int, max_antecedents: int) -> int:
    return window_start(i, max_antecedents) if j == 0 else j + 1


def legal_actions(state: EnvState, n: int, max_antecedents: int = 250) -> set[Action]:
    """Action legality for (i, j).

    LINK needs a real candidate (j >= 1); ADVANCE needs another candidate to
    the right; NO_ANTECEDENT is allowed exactly when j is the last candidate
    (j = i - 1), which for i = 1 is the sentinel j = 0 itself.
    """
    i, j = state.i, state.j
    out: set[Action] = set()
    if j >= 1:
        out.add(Action.LINK_AND_ADVANCE)
    if _next_j(j, i, max_antecedents) <= i - 1:
        out.add(Action.ADVANCE_ANTECEDENT)
    if j == i - 1:
        out.add(Action.NO_ANTECEDENT_ADVANCE)
    return out


class UnionFind:
    """Union-find with path compression over integer ids."""

    def __init__(self):
        self._parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        parent = self._parent.setdefault(x, x)
        while parent != x:
            self._parent[x] = self._parent.setdefault(parent, parent)
            x = self._parent[x]
            parent = self._parent.setdefault(x, x)
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self._parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[frozenset[int]]:
        buckets: dict[int, set[int]] = {}
        for x in self._parent:
            buckets.setdefault(self.find(x), set()).add(x)
        return [frozenset(v) for v in buckets.values()]


def links_to_clusters(links) -> list[frozenset[int]]:
    """Connected components of the link graph; unlinked spans are omitted."""
    uf = UnionFind()
    for i, j in links:
        if not 1 <= j < i:
            raise ValueError(f"invalid link ({i}, {j}): need 1 <= j < i")
        uf.union(i, j)
    return sorted(uf.groups(), key=min)


class RewardScorer:
    """Distance-decayed biaffine compatibility scorer for mention pairs.

    The undecayed score of a pair is
        v_m . f1(m_i) + v_m . f1(m_j) + f2(m_j)^T U f2(m_i) + v_bi . f3(m_i)
    where each f block is a two-layer ReLU stack whose input is the span
    vector concatenated with the pair features (distance bucket, speaker
    match, genre). The emitted reward multiplies by exp(-decay * distance).
    """

    def __init__(
        self,
        span_dim: int,
        features: FeatureEmbedder,
        rng: np.random.Generator,
        hidden: int = 150,
        dropout: float = 0.5,
        gamma_decay: float = 0.5,
    ):
        if not 0.0 < gamma_decay < 1.0:
            raise ValueError(f"gamma_decay {gamma_decay} outside (0, 1)")
        in_dim = span_dim + features.pair_dim
        self.features = features
        self.span_dim = span_dim
        self.gamma_decay = gamma_decay
        self.f1 = FeedForward(in_dim, hidden, 2, rng, "scorer.f1", dropout=dropout)
        self.f2 = FeedForward(in_dim, hidden, 2, rng, "scorer.f2", dropout=dropout)
        self.f3 = FeedForward(in_dim, hidden, 2, rng, "scorer.f3", dropout=dropout)
        self.v_m = Parameter(glorot_uniform(rng, hidden, 1), "scorer.v_m")
        self.u_bi = Parameter(glorot_uniform(rng, hidden, hidden), "scorer.u_bi")
        self.v_bi = Parameter(glorot_uniform(rng, hidden, 1), "scorer.v_bi")

    def parameters(self) -> list[Parameter]:
        return (
            self.f1.parameters()
            + self.f2.parameters()
            + self.f3.parameters()
            + [self.v_m, self.u_bi, self.v_bi]
        )

    def augment(self, span_vecs: Tensor, dist_ids, speaker_ids, genre_ids) -> Tensor:
        feats = self.features.pair_rows(dist_ids, speaker_ids, genre_ids)
        return ad.concat([span_vecs, feats], axis=1)

    def mention_logits(
        self,
        span_vecs: Tensor,
        genre: int,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> Tensor:
        """Detection logits v_m . f1(m) for lone spans, (n, 1)."""
        n = span_vecs.shape[0]
        x = ad.concat([span_vecs, self.features.solo_rows(genre, n)], axis=1)
        return ad.matmul(self.f1(x, rng, training), self.v_m)

    def undecayed_scores(
        self,
        mi_aug: Tensor,
        mj_aug: Tensor,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> Tensor:
        """Biaffine pair scores without the distance decay, (n, 1)."""
        f1_i = self.f1(mi_aug, rng, training)
        f1_j = self.f1(mj_aug, rng, training)
        f2_i = self.f2(mi_aug, rng, training)
        f2_j = self.f2(mj_aug, rng, training)
        f3_i = self.f3(mi_aug, rng, training)
        return (
            ad.matmul(f1_i, self.v_m)
            + ad.matmul(f1_j, self.v_m)
            + ad.bilinear_rowwise(f2_j, self.u_bi, f2_i)
            + ad.matmul(f3_i, self.v_bi)
        )

    def reward(
        self,
        mi_vec: Tensor,
        mj_vec: Tensor,
        distance,
        dist_ids,
        speaker_ids,
        genre_ids,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> Tensor:
        """Decayed pair rewards, (n, 1); distance is the mention-index gap."""
        mi_aug = self.augment(mi_vec, dist_ids, speaker_ids, genre_ids)
        mj_aug = self.augment(mj_vec, dist_ids, speaker_ids, genre_ids)
        raw = self.undecayed_scores(mi_aug, mj_aug, rng, training)
        decay = np.exp(-self.gamma_decay * np.asarray(distance, dtype=np.float64))
        return ad.mul(raw, ad.const(decay.reshape(-1, 1)))


class CorefEnv:
    """Episode runner over n pruned spans with a per-pair reward table.

    ``reward_fn(i, j)`` returns the Eq-style decayed score for the pair; how
    emitted step rewards use it depends on ``reward_mode``:

    * ``"link_only"`` (default): the pair reward is emitted on LINK steps
      and the other actions emit 0. Under the alternative every action
      emits the same state reward, which makes LINK indistinguishable from
      NO_ANTECEDENT at the window edge (identical reward and successor), so
      linking behaviour would be untrainable.
    * ``"always"``: every step emits the current pair's reward.
    """

    def __init__(
        self,
        n: int,
        reward_fn,
        max_antecedents: int = 250,
        reward_mode: str = "link_only",
    ):
        if reward_mode not in ("link_only", "always"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        self.n = n
        self.reward_fn = reward_fn
        self.max_antecedents = max_antecedents
        self.reward_mode = reward_mode

    def initial_state(self) -> EnvState:
        return EnvState(i=1, j=0)

    def is_terminal(self, state: EnvState) -> bool:
        return state.i > self.n

    def legal_actions(self, state: EnvState) -> set[Action]:
        return legal_actions(state, self.n, self.max_antecedents)

    def step(self, state: EnvState, action: Action) -> tuple[EnvState, float]:
        if action not in self.legal_actions(state):
            raise IllegalActionError(state, action, self.n)
        i, j = state.i, state.j
        if self.reward_mode == "always" or action is Action.LINK_AND_ADVANCE:
            reward = float(self.reward_fn(i, j))
        else:
            reward = 0.0
        if action is Action.LINK_AND_ADVANCE:
            nxt = EnvState(i + 1, 0, state.links + ((i, j),))
        elif action is Action.ADVANCE_ANTECEDENT:
            nxt = EnvState(i, _next_j(j, i, self.max_antecedents), state.links)
        else:
            nxt = EnvState(i + 1, 0, state.links)
        return nxt, reward

    def max_steps(self) -> int:
        """Upper bound on episode length: each mention consumes its window
        plus one advancing action."""
        return self.n + sum(
            min(i - 1, self.max_antecedents) for i in range(2, self.n + 1)
        )
