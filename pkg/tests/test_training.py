"""Loss definitions, action selection, gradient isolation, training loop."""

import numpy as np
import pytest

import accoref.autodiff as ad
from accoref.corpus import SynthConfig, generate_synthetic
from accoref.embeddings import hash_embeddings
from accoref.env import Action, Transition
from accoref.episodes import (
    build_context,
    choose_action,
    prepare_doc,
    run_episode,
    select_action,
)
from accoref.model import CorefModel, ModelConfig
from accoref.training import (
    TrainConfig,
    actor_critic_losses,
    episode_losses,
    joint_losses,
    scorer_auxiliary_loss,
    train,
)

from conftest import directional_grad_check

LINK = Action.LINK_AND_ADVANCE
ADV = Action.ADVANCE_ANTECEDENT
NOA = Action.NO_ANTECEDENT_ADVANCE


def tiny_cfg(**kw):
    base = dict(
        epochs=2,
        seed=0,
        feat_dim=4,
        ff_hidden=8,
        lstm_hidden=8,
        dropout=0.0,
        aux_weight=1.0,
        entropy_weight=0.0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestSelectAction:
    def _policy(self):
        model = CorefModel(ModelConfig(d_tok=4, feat_dim=4, ff_hidden=8, lstm_hidden=8))
        return model.policy, model.config.state_dim

    def test_single_legal_action_is_forced_with_zero_log_prob(self, rng):
        policy, dim = self._policy()
        action, lp = select_action(policy, rng.uniform(-1, 1, dim), {NOA}, "greedy")
        assert action is NOA
        assert lp == 0.0

    def test_uniform_logits_sample_about_half_each(self):
        rng = np.random.default_rng(0)
        logits = np.zeros(3)
        counts = {LINK: 0, ADV: 0}
        for _ in range(10_000):
            a, _ = choose_action(logits, {LINK, ADV}, "sample", rng)
            counts[a] += 1
        assert abs(counts[LINK] / 10_000 - 0.5) < 0.02

    def test_greedy_tie_breaks_by_action_order(self):
        action, _ = choose_action(np.array([2.0, 2.0, -1.0]), {LINK, ADV}, "greedy")
        assert action is LINK
        action, _ = choose_action(np.array([-1.0, 2.0, 2.0]), {ADV, NOA}, "greedy")
        assert action is ADV

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            choose_action(np.zeros(3), set(), "greedy")

    def test_sampled_log_prob_matches_masked_softmax(self, rng):
        logits = np.array([0.3, -1.2, 0.8])
        legal = {LINK, NOA}
        z = np.array([logits[0], logits[2]])
        p = np.exp(z - z.max())
        p /= p.sum()
        for _ in range(20):
            a, lp = choose_action(logits, legal, "sample", rng)
            expected = p[0] if a is LINK else p[1]
            assert lp == pytest.approx(np.log(expected), abs=1e-12)


class TestActorCriticLosses:
    def test_reward_one_zero_values_gives_unit_critic_loss(self):
        t = Transition(state=(2, 1), action=LINK, reward=1.0, next_state=(3, 0),
                       log_prob=-0.5, value=0.0, next_value=0.0)
        _, critic = actor_critic_losses(t, gamma_rl=0.9)
        assert critic.item() == pytest.approx(1.0, abs=1e-12)

    def test_certain_policy_zeroes_actor_loss(self):
        t = Transition(state=(2, 1), action=LINK, reward=3.0, next_state=(3, 0),
                       log_prob=0.0, value=0.2, next_value=0.1)
        actor, _ = actor_critic_losses(t, gamma_rl=0.9)
        assert actor.item() == 0.0

    def test_actor_sign_follows_advantage_for_uncertain_policy(self):
        # -log pi > 0 whenever pi < 1, so the actor loss carries the
        # advantage's sign
        for reward, sign in ((2.0, 1.0), (-2.0, -1.0)):
            t = Transition(state=(2, 1), action=LINK, reward=reward, next_state=(3, 0),
                           log_prob=np.log(0.5), value=0.0, next_value=0.0)
            actor, critic = actor_critic_losses(t, gamma_rl=0.9)
            assert np.sign(actor.item()) == sign
            assert critic.item() >= 0.0

    def test_terminal_transition_uses_zero_bootstrap(self):
        t = Transition(state=(5, 4), action=NOA, reward=0.5, next_state=None,
                       log_prob=-0.1, value=0.3, next_value=99.0)
        _, critic = actor_critic_losses(t, gamma_rl=0.9)
        assert critic.item() == pytest.approx((0.5 - 0.3) ** 2, abs=1e-12)

    def test_critic_gradients_match_finite_differences(self, rng):
        lp = ad.Parameter(np.array([[-0.7]]), "lp")
        v = ad.Parameter(np.array([[0.4]]), "v")
        nv = ad.Parameter(np.array([[0.1]]), "nv")

        def loss():
            _, critic = episode_losses(lp, v, nv, np.array([1.3]), 0.9)
            return critic

        directional_grad_check(loss, [v, nv], rng, trials=40)

    def test_actor_gradient_matches_finite_differences(self, rng):
        # the advantage is a constant inside the actor loss, so only the
        # log-probability carries gradient
        lp = ad.Parameter(np.array([[-0.7]]), "lp")
        v = ad.const(np.array([[0.4]]))
        nv = ad.const(np.array([[0.1]]))

        def loss():
            actor, _ = episode_losses(lp, v, nv, np.array([1.3]), 0.9)
            return actor

        directional_grad_check(loss, [lp], rng, trials=40)

    def test_advantage_is_constant_for_actor(self):
        lp = ad.Parameter(np.array([[-0.7]]), "lp")
        v = ad.Parameter(np.array([[0.4]]), "v")
        nv = ad.Parameter(np.array([[0.1]]), "nv")
        actor, _ = episode_losses(lp, v, nv, np.array([1.0]), 0.9)
        ad.backward(actor)
        assert np.all(v.grad == 0.0)
        assert np.all(nv.grad == 0.0)
        assert np.any(lp.grad != 0.0)


class TestJointLosses:
    def test_zero_detection_is_identity(self):
        a, c = joint_losses(ad.const([[0.5]]), ad.const([[0.25]]), ad.const([[0.0]]))
        assert (a.item(), c.item()) == (0.5, 0.25)

    def test_addition(self):
        a, c = joint_losses(ad.const([[0.5]]), ad.const([[0.25]]), ad.const([[0.7]]))
        assert a.item() == pytest.approx(1.2, abs=1e-12)
        assert c.item() == pytest.approx(0.95, abs=1e-12)

    def test_toggle_off_returns_raw(self):
        a, c = joint_losses(
            ad.const([[0.5]]), ad.const([[0.25]]), ad.const([[0.7]]), enabled=False
        )
        assert (a.item(), c.item()) == (0.5, 0.25)


class TestAuxiliaryLoss:
    def _context(self, cfg, seed=0):
        docs = generate_synthetic(SynthConfig(n_docs=3, seed=seed))
        table = hash_embeddings(docs, 4, 0)
        model = CorefModel(cfg.model_config(4))
        prep = prepare_doc(docs[0], table, cfg.max_span_width)
        ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents)
        from accoref.spans import build_span_vectors

        vecs = build_span_vectors(prep.spans, prep.emb, model.encoder, model.features)
        return model, ctx, vecs

    def test_all_predictions_at_half_give_ln2(self):
        cfg = tiny_cfg()
        model, ctx, vecs = self._context(cfg)
        for p in model.scorer.parameters():
            if p.name in ("scorer.v_m", "scorer.u_bi", "scorer.v_bi"):
                p.data[...] = 0.0
        loss = scorer_auxiliary_loss(model, ctx, vecs, np.random.default_rng(0), training=False)
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_no_positive_pairs_still_finite(self):
        cfg = tiny_cfg()
        docs = generate_synthetic(
            SynthConfig(n_docs=2, entities_per_doc=1, mentions_per_entity=1, seed=1)
        )
        table = hash_embeddings(docs, 4, 0)
        model = CorefModel(cfg.model_config(4))
        prep = prepare_doc(docs[0], table, cfg.max_span_width)
        ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents)
        from accoref.spans import build_span_vectors

        vecs = build_span_vectors(prep.spans, prep.emb, model.encoder, model.features)
        loss = scorer_auxiliary_loss(model, ctx, vecs, np.random.default_rng(0), training=False)
        if loss is not None:
            assert np.isfinite(loss.item())

    def test_matches_per_pair_summation_oracle(self):
        cfg = tiny_cfg()
        model, ctx, vecs = self._context(cfg)
        from accoref.training import _pair_cluster_labels, _AUX_NEG_FLOOR

        rng_pick = np.random.default_rng(7)
        loss = scorer_auxiliary_loss(model, ctx, vecs, rng_pick, training=False)
        labels = _pair_cluster_labels(ctx)
        pos = np.flatnonzero(labels == 1.0)
        neg = np.flatnonzero(labels == 0.0)
        n_neg = min(len(neg), max(3 * len(pos), _AUX_NEG_FLOOR))
        rng_same = np.random.default_rng(7)
        if n_neg < len(neg):
            neg = rng_same.choice(neg, size=n_neg, replace=False)
        sel = np.sort(np.concatenate([pos, neg])).astype(int)
        genre_ids = np.full(sel.size, ctx.prep.genre, dtype=np.intp)
        mi = ad.const(vecs.data[ctx.pruned_idx[ctx.pair_i[sel] - 1]])
        mj = ad.const(vecs.data[ctx.pruned_idx[ctx.pair_j[sel] - 1]])
        scores = model.scorer.undecayed_scores(
            model.scorer.augment(mi, ctx.pair_dist_ids[sel], ctx.pair_speaker_ids[sel], genre_ids),
            model.scorer.augment(mj, ctx.pair_dist_ids[sel], ctx.pair_speaker_ids[sel], genre_ids),
        ).data.reshape(-1)
        p = 1 / (1 + np.exp(-scores))
        y = labels[sel]
        expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert loss.item() == pytest.approx(expected, abs=1e-12)


class TestGradientIsolation:
    def _episode_parts(self):
        cfg = tiny_cfg()
        docs = generate_synthetic(SynthConfig(n_docs=2, seed=3))
        table = hash_embeddings(docs, 4, 0)
        model = CorefModel(cfg.model_config(4))
        prep = prepare_doc(docs[0], table, cfg.max_span_width)
        ctx = build_context(model, prep, cfg.prune_ratio, cfg.max_antecedents)
        roll = run_episode(ctx, "sample", np.random.default_rng(0))
        states = ad.const(ctx.states[roll.rows])
        lp_all = ad.masked_log_softmax(model.policy(states), roll.masks)
        chosen = ad.gather_rc(lp_all, np.arange(len(roll.rows)), roll.actions)
        values = model.value(states)
        nv = ad.shift_up_zero(values)
        actor, critic = episode_losses(chosen, values, nv, roll.rewards, cfg.gamma_rl)
        return model, actor, critic

    @staticmethod
    def _grad_norm(params):
        return sum(float(np.abs(p.grad).sum()) for p in params)

    def test_actor_loss_reaches_no_value_parameters(self):
        model, actor, _ = self._episode_parts()
        ad.backward(actor)
        assert self._grad_norm(model.value.parameters()) == 0.0
        assert self._grad_norm(model.policy.parameters()) > 0.0

    def test_critic_loss_reaches_no_policy_parameters(self):
        model, _, critic = self._episode_parts()
        ad.backward(critic)
        assert self._grad_norm(model.policy.parameters()) == 0.0
        assert self._grad_norm(model.value.parameters()) > 0.0

    def test_rl_losses_never_reach_scorer_or_encoder(self):
        model, actor, critic = self._episode_parts()
        ad.backward(ad.add(actor, critic))
        assert self._grad_norm(model.scorer.parameters()) == 0.0
        assert self._grad_norm(model.encoder.parameters()) == 0.0
        assert self._grad_norm([model.sentinel]) == 0.0


class TestTrainLoop:
    def test_bookkeeping_after_one_epoch(self, tmp_path):
        docs = generate_synthetic(SynthConfig(n_docs=5, seed=1))
        table = hash_embeddings(docs, 4, 0)
        cfg = tiny_cfg(epochs=1, dev_fraction=0.0)
        result = train(docs, table, cfg)
        assert len(result.history) == 1
        assert len(result.doc_losses) == 5
        from accoref.training import save_run

        paths = save_run(result, cfg, tmp_path, {"kind": "hash", "dim": 4, "seed": 0})
        assert (tmp_path / "model.acnc").exists()
        assert (tmp_path / "metrics_history.jsonl").exists()

    def test_same_seed_identical_losses(self):
        docs = generate_synthetic(SynthConfig(n_docs=4, seed=2))
        table = hash_embeddings(docs, 4, 0)
        r1 = train(docs, table, tiny_cfg())
        r2 = train(docs, table, tiny_cfg())
        assert len(r1.doc_losses) == len(r2.doc_losses)
        for a, b in zip(r1.doc_losses, r2.doc_losses):
            assert abs(a["total"] - b["total"]) < 1e-12

    def test_file_embeddings_never_mutated(self):
        docs = generate_synthetic(SynthConfig(n_docs=3, seed=4))
        table = hash_embeddings(docs, 4, 0)
        frozen = {k: v.copy() for k, v in table.items()}
        train(docs, table, tiny_cfg(epochs=1))
        for key, vec in table.items():
            np.testing.assert_array_equal(vec, frozen[key])

    def test_one_step_changes_only_trainable_parameters(self):
        docs = generate_synthetic(SynthConfig(n_docs=2, seed=5))
        table = hash_embeddings(docs, 4, 0)
        cfg = tiny_cfg(epochs=1)
        model = CorefModel(cfg.model_config(4))
        frozen_names = {"sentinel"}
        for p in model.parameters():
            p.trainable = p.name not in frozen_names
        from accoref.layers import Adam
        from accoref.training import _train_doc

        opt = Adam(model.parameters(), lr=cfg.learning_rate)
        prep = prepare_doc(docs[0], table, cfg.max_span_width)
        before = {p.name: p.data.copy() for p in model.parameters()}
        _train_doc(model, prep, cfg, opt, np.random.default_rng(0))
        for p in model.parameters():
            if not p.trainable:
                np.testing.assert_array_equal(p.data, before[p.name])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train([], hash_embeddings([], 4, 0), tiny_cfg())

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(gamma_rl=0.0)
        with pytest.raises(ValueError):
            TrainConfig(prune_ratio=0.0)
        with pytest.raises(ValueError):
            TrainConfig(reward_mode="bogus")
