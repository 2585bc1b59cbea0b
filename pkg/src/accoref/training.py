"""Actor-critic training: losses, the per-document update loop, ablation.

Per document and epoch: build span vectors, prune, roll out one sampled
episode against precomputed rewards, then take a single optimizer step on

    L = L'_actor + L'_critic + aux_weight * L_aux

where L'_actor = L_actor + L_detect and L'_critic = L_critic + L_detect
(the detection term drops out when the joint toggle is off). Rewards enter
the actor/critic losses as detached constants; the scorer itself trains
through the detection loss and the supervised pair loss, never through the
RL losses, because a critic allowed to shape its own reward target would
simply shrink it.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document
from .embeddings import EmbeddingTable
from .env import Action, Transition
from .episodes import (
    DocPrep,
    EpisodeContext,
    Rollout,
    build_context,
    links_to_span_clusters,
    prepare_doc,
    run_episode,
)
from .layers import Adam
from .metrics import MetricReport, corpus_report
from .model import CorefModel, ModelConfig
from .spans import build_span_vectors, detection_loss

__all__ = [
    "TrainConfig",
    "TrainResult",
    "actor_critic_losses",
    "episode_losses",
    "joint_losses",
    "scorer_auxiliary_loss",
    "train",
    "ablation_run",
    "evaluate",
    "mention_detection_recall",
]


@dataclass
class TrainConfig:
    gamma_rl: float = 0.3
    gamma_decay: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 20
    max_span_width: int = 10
    max_antecedents: int = 250
    prune_ratio: float = 0.4
    dropout: float = 0.5
    feat_dim: int = 20
    lstm_hidden: int = 200
    ff_hidden: int = 150
    detection_loss: bool = True
    entropy_weight: float = 0.4
    aux_weight: float = 4.0
    episodes_per_doc: int = 4
    dev_fraction: float = 0.2
    reward_mode: str = "link_only"
    seed: int = 0

    def __post_init__(self):
        checks = [
            (0.0 < self.gamma_rl <= 1.0, "gamma_rl in (0, 1]"),
            (0.0 < self.gamma_decay < 1.0, "gamma_decay in (0, 1)"),
            (self.learning_rate > 0.0, "learning_rate > 0"),
            (self.epochs >= 1, "epochs >= 1"),
            (self.max_span_width >= 1, "max_span_width >= 1"),
            (self.max_antecedents >= 1, "max_antecedents >= 1"),
            (0.0 < self.prune_ratio <= 1.0, "prune_ratio in (0, 1]"),
            (0.0 <= self.dropout < 1.0, "dropout in [0, 1)"),
            (self.feat_dim >= 1, "feat_dim >= 1"),
            (self.lstm_hidden >= 1 and self.ff_hidden >= 1, "hidden sizes >= 1"),
            (self.entropy_weight >= 0.0, "entropy_weight >= 0"),
            (self.aux_weight >= 0.0, "aux_weight >= 0"),
            (self.episodes_per_doc >= 1, "episodes_per_doc >= 1"),
            (0.0 <= self.dev_fraction < 1.0, "dev_fraction in [0, 1)"),
            (self.reward_mode in ("link_only", "always"), "reward_mode unknown"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid TrainConfig: {msg}")

    def model_config(self, d_tok: int) -> ModelConfig:
        return ModelConfig(
            d_tok=d_tok,
            feat_dim=self.feat_dim,
            ff_hidden=self.ff_hidden,
            lstm_hidden=self.lstm_hidden,
            max_span_width=self.max_span_width,
            dropout=self.dropout,
            gamma_decay=self.gamma_decay,
            init_seed=self.seed,
        )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def episode_losses(
    log_probs: Tensor,
    values: Tensor,
    next_values: Tensor,
    rewards: np.ndarray,
    gamma_rl: float,
) -> tuple[Tensor, Tensor]:
    """Mean actor and critic losses over an episode's transitions.

    The advantage r + gamma * V(s') - V(s) backs the critic loss directly
    and enters the actor loss as a detached constant, so actor gradients
    never reach the value network and neither loss reaches the rewards.
    """
    r = ad.const(np.asarray(rewards, dtype=np.float64).reshape(-1, 1))
    adv = ad.sub(ad.add(r, ad.scale(next_values, gamma_rl)), values)
    critic = ad.tmean(ad.mul(adv, adv))
    adv_const = ad.const(adv.data)
    actor = ad.tmean(ad.mul(ad.neg(log_probs), adv_const))
    return actor, critic


def actor_critic_losses(t: Transition, gamma_rl: float, log_prob: Tensor | None = None,
                        value: Tensor | None = None, next_value: Tensor | None = None
                        ) -> tuple[Tensor, Tensor]:
    """Single-transition losses; tensors may be given to keep gradients."""
    lp = log_prob if log_prob is not None else ad.const([[t.log_prob]])
    v = value if value is not None else ad.const([[t.value]])
    nv = next_value if next_value is not None else ad.const([[0.0 if t.terminal else t.next_value]])
    return episode_losses(lp, v, nv, np.array([t.reward]), gamma_rl)


def joint_losses(actor: Tensor, critic: Tensor, detect: Tensor, enabled: bool = True
                 ) -> tuple[Tensor, Tensor]:
    """Augment both losses with the detection loss; identity when disabled."""
    if not enabled:
        return actor, critic
    return ad.add(actor, detect), ad.add(critic, detect)


def _pair_cluster_labels(ctx: EpisodeContext) -> np.ndarray:
    gold_of: dict[tuple[int, int], int] = {}
    for cid, cluster in enumerate(ctx.prep.doc.gold_clusters):
        for span in cluster:
            gold_of[span] = cid
    span_cluster = [gold_of.get((s.start, s.end)) for s in ctx.pruned]
    labels = np.zeros(len(ctx.pair_i))
    for k, (i, j) in enumerate(zip(ctx.pair_i, ctx.pair_j)):
        ci = span_cluster[i - 1]
        if ci is not None and ci == span_cluster[j - 1]:
            labels[k] = 1.0
    return labels


# Negatives kept when a batch has no positives at all.
_AUX_NEG_FLOOR = 8


def scorer_auxiliary_loss(
    model: CorefModel,
    ctx: EpisodeContext,
    span_vecs: Tensor,
    rng: np.random.Generator,
    training: bool = True,
) -> Tensor | None:
    """Supervised pair loss: BCE on sigmoid(undecayed score) with label 1
    iff both spans share a gold cluster; negatives capped at 3 per positive.
    """
    if len(ctx.pair_i) == 0:
        return None
    labels = _pair_cluster_labels(ctx)
    pos = np.flatnonzero(labels == 1.0)
    neg = np.flatnonzero(labels == 0.0)
    n_neg = min(len(neg), max(3 * len(pos), _AUX_NEG_FLOOR))
    if n_neg < len(neg):
        neg = rng.choice(neg, size=n_neg, replace=False)
    sel = np.sort(np.concatenate([pos, neg])).astype(np.intp)
    if sel.size == 0:
        return None

    rows_i = ctx.pruned_idx[ctx.pair_i[sel] - 1]
    rows_j = ctx.pruned_idx[ctx.pair_j[sel] - 1]
    genre_ids = np.full(sel.size, ctx.prep.genre, dtype=np.intp)
    mi = ad.gather_rows(span_vecs, rows_i)
    mj = ad.gather_rows(span_vecs, rows_j)
    mi_aug = model.scorer.augment(mi, ctx.pair_dist_ids[sel], ctx.pair_speaker_ids[sel], genre_ids)
    mj_aug = model.scorer.augment(mj, ctx.pair_dist_ids[sel], ctx.pair_speaker_ids[sel], genre_ids)
    scores = model.scorer.undecayed_scores(mi_aug, mj_aug, rng, training)
    targets = ad.const(labels[sel].reshape(-1, 1))
    return ad.tmean(ad.bce_with_logits(scores, targets))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: CorefModel
    history: list[dict]
    doc_losses: list[dict]
    train_docs: list[Document]
    dev_docs: list[Document]
    wall_seconds: float = 0.0


def _split(docs: list[Document], dev_fraction: float) -> tuple[list[Document], list[Document]]:
    n_dev = int(round(len(docs) * dev_fraction))
    if n_dev == 0:
        return list(docs), list(docs)
    return list(docs[:-n_dev]), list(docs[-n_dev:])


def _train_doc(
    model: CorefModel,
    prep: DocPrep,
    cfg: TrainConfig,
    opt: Adam,
    rng: np.random.Generator,
) -> dict:
    span_vecs = build_span_vectors(prep.spans, prep.emb, model.encoder, model.features)
    ctx = build_context(
        model, prep, cfg.prune_ratio, cfg.max_antecedents, cfg.reward_mode,
        span_values=span_vecs.data,
    )
    if ctx is None:
        return {}
    # Several sampled episodes sharpen the Monte-Carlo estimate of the same
    # per-document update; all of them feed the one optimizer step.
    rolls = [run_episode(ctx, "sample", rng) for _ in range(cfg.episodes_per_doc)]

    det_logits = model.scorer.mention_logits(span_vecs, prep.genre, rng, training=True)
    l_detect = detection_loss(det_logits, prep.labels)

    rows = np.concatenate([r.rows for r in rolls])
    actions = np.concatenate([r.actions for r in rolls])
    masks = np.concatenate([r.masks for r in rolls], axis=0)
    rewards = np.concatenate([r.rewards for r in rolls])
    total_steps = len(rows)
    # Bootstrap indices: V(s') is the next transition's V within the same
    # episode and exactly zero at each episode's terminal step.
    next_idx = np.arange(total_steps) + 1
    nonterminal = np.ones((total_steps, 1))
    offset = 0
    for r in rolls:
        last = offset + len(r.rows) - 1
        next_idx[last] = last
        nonterminal[last, 0] = 0.0
        offset += len(r.rows)

    states = ad.const(ctx.states[rows])
    log_probs_all = ad.masked_log_softmax(model.policy(states), masks)
    chosen = ad.gather_rc(log_probs_all, np.arange(total_steps), actions)
    values = model.value(states)
    next_values = ad.mul(ad.gather_rows(values, next_idx), ad.const(nonterminal))
    l_actor, l_critic = episode_losses(chosen, values, next_values, rewards, cfg.gamma_rl)
    if cfg.entropy_weight > 0.0:
        ent = ad.tmean(ad.masked_entropy(log_probs_all, masks))
        l_actor = ad.sub(l_actor, ad.scale(ent, cfg.entropy_weight))

    l_actor_j, l_critic_j = joint_losses(l_actor, l_critic, l_detect, cfg.detection_loss)
    total = ad.add(l_actor_j, l_critic_j)
    l_aux = scorer_auxiliary_loss(model, ctx, span_vecs, rng, training=True)
    if l_aux is not None and cfg.aux_weight > 0.0:
        total = ad.add(total, ad.scale(l_aux, cfg.aux_weight))

    ad.backward(total)
    opt.step()
    opt.zero_grad()
    return {
        "doc_key": prep.doc.doc_key,
        "actor": l_actor.item(),
        "critic": l_critic.item(),
        "detect": l_detect.item(),
        "aux": l_aux.item() if l_aux is not None else 0.0,
        "total": total.item(),
    }


def decode_with_context(
    model: CorefModel, prep: DocPrep, cfg: TrainConfig
) -> tuple[list[frozenset], EpisodeContext | None]:
    ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents, cfg.reward_mode)
    if ctx is None or ctx.n == 0:
        return [], ctx
    roll = run_episode(ctx, "greedy")
    return links_to_span_clusters(ctx, roll.links), ctx


def mention_detection_recall(preps: list[DocPrep], contexts: list[EpisodeContext | None]) -> float:
    hit = total = 0
    for prep, ctx in zip(preps, contexts):
        if ctx is None:
            continue
        gold = prep.labels == 1.0
        total += int(gold.sum())
        hit += int((gold & (ctx.mention_logits > 0.0)).sum())
    return hit / total if total else 0.0


def evaluate(model: CorefModel, preps: list[DocPrep], cfg: TrainConfig) -> tuple[MetricReport, float]:
    preds = []
    contexts = []
    for prep in preps:
        clusters, ctx = decode_with_context(model, prep, cfg)
        preds.append(clusters)
        contexts.append(ctx)
    gold = [[frozenset(c) for c in prep.doc.gold_clusters] for prep in preps]
    return corpus_report(gold, preds), mention_detection_recall(preps, contexts)


def train(
    docs: list[Document],
    table: EmbeddingTable,
    cfg: TrainConfig,
    log=None,
) -> TrainResult:
    """Run the full loop; deterministic for a fixed seed and corpus."""
    if not docs:
        raise ValueError("empty corpus")
    started = time.time()
    train_docs, dev_docs = _split(docs, cfg.dev_fraction)
    model = CorefModel(cfg.model_config(table.dimension))
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    train_preps = [prepare_doc(d, table, cfg.max_span_width) for d in train_docs]
    dev_preps = [prepare_doc(d, table, cfg.max_span_width) for d in dev_docs]

    history: list[dict] = []
    doc_losses: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_preps))
        for k in order:
            record = _train_doc(model, train_preps[k], cfg, opt, rng)
            if record:
                record["epoch"] = epoch
                doc_losses.append(record)
        report, det = evaluate(model, dev_preps, cfg)
        entry = {
            "epoch": epoch,
            "muc_f1": report.muc[2],
            "b3_f1": report.b3[2],
            "ceaf_f1": report.ceaf[2],
            "avg_f1": report.avg_f1,
            "mention_det_acc": det,
        }
        history.append(entry)
        if log:
            log(entry)
    return TrainResult(
        model=model,
        history=history,
        doc_losses=doc_losses,
        train_docs=train_docs,
        dev_docs=dev_docs,
        wall_seconds=time.time() - started,
    )


def save_run(result: TrainResult, cfg: TrainConfig, out_dir, embedding_info: dict) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.acnc"
    result.model.save(
        ckpt,
        extra={"train_config": asdict(cfg), "embedding": embedding_info},
    )
    hist_path = out_dir / "metrics_history.jsonl"
    with open(hist_path, "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return {"checkpoint": str(ckpt), "history": str(hist_path)}


def ablation_run(
    docs: list[Document],
    table: EmbeddingTable,
    cfg: TrainConfig,
    seeds: list[int],
    log=None,
) -> dict:
    """Train with and without the detection term, matched per seed."""
    runs = []
    for seed in seeds:
        per_seed = {"seed": seed}
        for toggle in (True, False):
            run_cfg = replace(cfg, seed=seed, detection_loss=toggle)
            result = train(docs, table, run_cfg, log=log)
            key = "joint" if toggle else "no_detection"
            per_seed[key] = result.history[-1]["avg_f1"]
        per_seed["difference"] = per_seed["joint"] - per_seed["no_detection"]
        runs.append(per_seed)
    joint = sorted(r["joint"] for r in runs)
    bare = sorted(r["no_detection"] for r in runs)
    mid = len(runs) // 2
    return {
        "runs": runs,
        "median_joint": joint[mid],
        "median_no_detection": bare[mid],
    }
