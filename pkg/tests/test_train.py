import numpy as np
import pytest

from cltrsim.click_sim import SimParams, generate_log
from cltrsim.letor import subsample_labeled
from cltrsim.losses import loss_click_softmax
from cltrsim.mlp import init_params
from cltrsim.propensity import PropensityTable
from cltrsim.train import (
    ALL_KINDS,
    ConfigurationError,
    DlaState,
    LossKind,
    SessionData,
    TrainConfig,
    dla_contexts,
    dla_losses,
    dla_step,
    dla_weights,
    train_cltr,
    train_ranker,
    with_kind,
)
from oracles import central_difference, relative_error, spearman

SMALL = (16, 8, 4)


@pytest.fixture(scope="module")
def weak_ranker(toy):
    labeled = subsample_labeled(toy.train, 0.01, seed=0)
    cfg = TrainConfig(learning_rate=0.1, batch_size=8, steps=200, hidden=SMALL, eval_every=50)
    return train_ranker(labeled, toy.valid, cfg).params


@pytest.fixture(scope="module")
def pbm_log(toy, weak_ranker):
    return generate_log(toy.train, weak_ranker, 100, SimParams.pbm(), seed=0)


def config(kind, **kw):
    base = dict(learning_rate=0.1, batch_size=64, steps=60, hidden=SMALL, eval_every=20, loss_kind=kind)
    return TrainConfig(**{**base, **kw})


class TestLossKind:
    def test_eleven_kinds(self):
        assert len(ALL_KINDS) == 11

    @pytest.mark.parametrize(
        "kind, source",
        [("ClickSoftmax", None), ("IPS_PBM_EM", "em"), ("PRS_PBM_Reg", "reg"), ("IPS_DCM", "mle"), ("DLA_DCM", None)],
    )
    def test_propensity_source(self, kind, source):
        assert LossKind(kind).propensity_source == source

    def test_with_kind(self):
        assert with_kind(TrainConfig(), "DLA_PBM").loss_kind is LossKind.DLA_PBM

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)


class TestTrainRanker:
    def test_improves_on_initial(self, toy):
        cfg = TrainConfig(learning_rate=0.1, batch_size=16, steps=150, hidden=SMALL, eval_every=50)
        res = train_ranker(toy.train, toy.valid, cfg)
        assert res.history[0][0] == 0
        assert res.best_valid_ndcg5 > res.history[0][2]

    def test_zero_steps_returns_initial(self, toy):
        cfg = TrainConfig(steps=0, hidden=SMALL)
        res = train_ranker(toy.train[:5], toy.valid, cfg)
        assert res.params.equals(init_params(toy.feature_dim, cfg.seed, SMALL))


class TestTrainCltr:
    def test_zero_steps_returns_initial(self, toy, pbm_log):
        res = train_cltr(config("ClickSoftmax", steps=0), pbm_log, toy.train, toy.valid)
        assert res.params.equals(init_params(toy.feature_dim, 0, SMALL))
        assert res.best_step == 0

    @pytest.mark.parametrize("kind", [k.value for k in ALL_KINDS])
    def test_every_kind_runs_and_is_deterministic(self, kind, toy, pbm_log):
        k = LossKind(kind)
        table = {
            None: None,
            "em": PropensityTable.pbm_oracle(),
            "reg": PropensityTable.pbm_oracle(),
            "mle": PropensityTable.dcm_oracle(),
        }[k.propensity_source]
        a = train_cltr(config(k, steps=40), pbm_log, toy.train, toy.valid, table)
        b = train_cltr(config(k, steps=40), pbm_log, toy.train, toy.valid, table)
        assert a.params.equals(b.params)
        assert a.metrics_csv() == b.metrics_csv()
        assert all(np.isfinite(loss) for step, loss, _ in a.history if step > 0)

    @pytest.mark.parametrize("kind", ["IPS_PBM_EM", "PRS_DCM"])
    def test_missing_table(self, kind, toy, pbm_log):
        with pytest.raises(ConfigurationError, match="propensity table"):
            train_cltr(config(kind), pbm_log, toy.train, toy.valid)

    def test_missing_kind(self, toy, pbm_log):
        with pytest.raises(ConfigurationError):
            train_cltr(TrainConfig(hidden=SMALL), pbm_log, toy.train, toy.valid)

    def test_unresolvable_queries(self, toy, pbm_log):
        with pytest.raises(ConfigurationError, match="no feature data"):
            train_cltr(config("ClickSoftmax"), pbm_log, toy.train[:3], toy.valid)

    def test_selection_keeps_best_checkpoint(self, toy, pbm_log):
        res = train_cltr(config("ClickSoftmax", steps=100, eval_every=10), pbm_log, toy.train, toy.valid)
        evaluated = [nd for _, _, nd in res.history]
        assert res.best_valid_ndcg5 == max(evaluated)
        assert [s for s, _, _ in res.history] == list(range(0, 101, 10))
        first_best = next(s for s, _, nd in res.history if nd == max(evaluated))
        assert res.best_step == first_best

    def test_metrics_csv(self, toy, pbm_log):
        res = train_cltr(config("ClickPoint", steps=20, eval_every=10), pbm_log, toy.train, toy.valid)
        lines = res.metrics_csv().splitlines()
        assert lines[0] == "step,train_loss,valid_ndcg5"
        assert len(lines) == 4


def dla_batch(rng, b=6, n=10, d=16):
    clicks = (rng.random((b, n)) < 0.3).astype(float)
    mask = np.ones((b, n), dtype=bool)
    mask[0, 7:] = False
    clicks *= mask
    return rng.random((b, n, d)), clicks, mask


class TestDla:
    def test_contexts(self):
        clicks = np.array([[0, 1, 0, 1, 0]], dtype=float)
        mask = np.ones_like(clicks, dtype=bool)
        assert dla_contexts(clicks, mask, LossKind.DLA_PBM).tolist() == [[0, 1, 2, 3, 4]]
        assert dla_contexts(clicks, mask, LossKind.DLA_DCM).tolist() == [[0, 0, 2, 2, 4]]

    def test_weights_normalized_to_reference(self, rng):
        scores, logits = rng.normal(size=(3, 10)), rng.normal(size=(3, 10))
        mask = np.ones((3, 10), dtype=bool)
        inv_prop, inv_rel = dla_weights(scores, logits, mask)
        assert np.all(inv_prop[:, 0] == 1.0)
        assert np.allclose(inv_rel.min(axis=1), 1.0)

    def test_weights_capped(self):
        logits = np.array([[10.0, -10.0]])
        inv_prop, _ = dla_weights(np.zeros((1, 2)), logits, np.ones((1, 2), dtype=bool), max_weight=20.0)
        assert inv_prop[0, 1] == 20.0

    def test_uniform_logits_reduce_to_click_softmax(self, rng):
        for _ in range(20):
            scores = rng.normal(size=(5, 10))
            clicks = (rng.random((5, 10)) < 0.3).astype(float)
            mask = np.ones_like(clicks, dtype=bool)
            ctx = np.broadcast_to(np.arange(10), (5, 10))
            loss, g, _, _ = dla_losses(scores, np.full(10, 0.37), ctx, clicks, mask)
            ref_loss, ref_g = loss_click_softmax(scores, clicks, mask)
            assert abs(loss - ref_loss) <= 1e-10
            assert np.abs(g - ref_g).max() <= 1e-10

    def test_logit_gradient_with_frozen_weights(self, rng):
        scores = rng.normal(size=(4, 10))
        clicks = (rng.random((4, 10)) < 0.4).astype(float)
        mask = np.ones_like(clicks, dtype=bool)
        ctx = np.broadcast_to(np.arange(10), (4, 10))
        logits = rng.normal(size=10)
        _, inv_rel = dla_weights(scores, logits[ctx], mask)
        _, _, _, g = dla_losses(scores, logits, ctx, clicks, mask)
        from cltrsim.losses import weighted_softmax_loss

        numeric = central_difference(lambda z: weighted_softmax_loss(z[ctx], clicks * inv_rel, mask)[0], logits, h=1e-6)
        assert relative_error(g, numeric, floor=1e-3).max() < 1e-4

    def test_zero_clicks_leave_state_unchanged(self, rng, toy):
        x, _, mask = dla_batch(rng)
        clicks = np.zeros(mask.shape)
        state = DlaState(init_params(16, 0, SMALL), rng.normal(size=10))
        ctx = dla_contexts(clicks, mask, LossKind.DLA_PBM)
        new, rank_loss, exam_loss = dla_step(state, x, clicks, mask, ctx, 0.5)
        assert new.ranker.equals(state.ranker)
        assert np.array_equal(new.propensity_logits, state.propensity_logits)
        assert rank_loss == 0.0 and exam_loss == 0.0

    def test_step_returns_new_state(self, rng):
        x, clicks, mask = dla_batch(rng)
        state = DlaState(init_params(16, 0, SMALL), np.zeros(11))
        ctx = dla_contexts(clicks, mask, LossKind.DLA_DCM)
        new, _, _ = dla_step(state, x, clicks, mask, ctx, 0.1)
        assert not new.ranker.equals(state.ranker)
        assert np.all(state.propensity_logits == 0)

    def test_learned_position_weights_follow_true_bias(self, toy, pbm_log):
        res = train_cltr(config("DLA_PBM", steps=1500, eval_every=500), pbm_log, toy.train, toy.valid)
        logits = res.propensity_logits
        inv_weights = np.exp(logits[0] - logits)
        assert spearman(inv_weights, np.arange(1, 11)) > 0.9


def test_session_data_rows_match_orderings(toy, pbm_log):
    data = SessionData.from_log(pbm_log, toy.train)
    g = next(g for g in toy.train if g.query_id == pbm_log.query_ids[0])
    order = pbm_log.orderings[0][pbm_log.mask[0]]
    assert np.array_equal(data.features[data.rows[0][data.mask[0]]], g.features[order])
