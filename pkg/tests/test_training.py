import numpy as np
import pytest

from mbrec.dataio import InteractionDataset, Role, SplitSpec, split
from mbrec.errors import ConfigError, NumericalError
from mbrec.graph import build_graph
from mbrec.model import ModelConfig, compute_factors, forward, init_params
from mbrec.objective import LossReport
from mbrec.synth import planted_dataset
from mbrec.training import (OptimizerState, TrainConfig, TripletSampler,
                            adam_step, load_checkpoint, sample_triplets,
                            save_checkpoint, train_config_from_dict,
                            train_config_to_dict, train_loop)


def toy_setup(seed=0, epochs=3, **train_kw):
    ds = split(planted_dataset(seed=seed), SplitSpec(seed=seed))
    graph = build_graph(ds)
    mc = ModelConfig(embed_dim=8, num_layers=2, rank=3, seed=seed)
    factors = compute_factors(graph, mc)
    defaults = dict(learning_rate=0.02, batch_size=128, lambda_=0.1,
                    beta=0.01, tau=0.2, epochs=epochs, patience=epochs,
                    seed=seed)
    defaults.update(train_kw)
    return ds, graph, mc, factors, TrainConfig(**defaults)


def manual_dataset(users, items, behaviors, roles, num_users, num_items,
                   num_behaviors=1, names=("buy",), target=0):
    return InteractionDataset(
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        behaviors=np.asarray(behaviors, dtype=np.int64),
        roles=np.asarray(roles, dtype=np.int64),
        num_users=num_users, num_items=num_items,
        num_behaviors=num_behaviors, behavior_names=list(names),
        target_behavior=target,
        user_raw_ids=np.arange(num_users),
        item_raw_ids=np.arange(num_items))


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.lambda_ == 0.2 and cfg.tau == 0.2

    @pytest.mark.parametrize("kw", [
        dict(learning_rate=0.0), dict(tau=0.0), dict(patience=0),
        dict(epochs=0), dict(batch_size=0), dict(adam_beta1=1.0),
        dict(infonce_mode="weird"), dict(lambda_=-0.1),
        dict(infonce_batch_nodes=0)])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_dict_round_trip_uses_lambda_key(self):
        cfg = TrainConfig(lambda_=0.5)
        raw = train_config_to_dict(cfg)
        assert raw["lambda"] == 0.5 and "lambda_" not in raw
        assert train_config_from_dict(raw) == cfg

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="learning_rte"):
            train_config_from_dict({"learning_rte": 0.1})


class TestTripletSampler:
    def test_forced_negative(self):
        # one user, two items, single target edge -> negative is item 1
        ds = manual_dataset([0], [0], [0], [int(Role.TRAIN)], 1, 2)
        batch = sample_triplets(ds, 32, np.random.default_rng(0))
        assert (batch.users == 0).all()
        assert (batch.pos_items == 0).all()
        assert (batch.neg_items == 1).all()

    def test_negatives_never_observed(self):
        ds = split(planted_dataset(seed=1), SplitSpec(seed=1))
        sampler = TripletSampler(ds)
        rng = np.random.default_rng(2)
        target = ds.behaviors == ds.target_behavior
        observed = set(zip(ds.users[target].tolist(),
                           ds.items[target].tolist()))
        for _ in range(10):
            batch = sampler.sample(1000, rng)
            pairs = set(zip(batch.users.tolist(), batch.neg_items.tolist()))
            assert not pairs & observed

    def test_fixed_rng_reproduces_batches(self):
        ds = split(planted_dataset(seed=1), SplitSpec(seed=1))
        a = sample_triplets(ds, 64, np.random.default_rng(7))
        b = sample_triplets(ds, 64, np.random.default_rng(7))
        np.testing.assert_array_equal(a.users, b.users)
        np.testing.assert_array_equal(a.pos_items, b.pos_items)
        np.testing.assert_array_equal(a.neg_items, b.neg_items)

    def test_saturated_user_dropped_with_counter(self):
        # the user interacted with every item: no negative exists
        ds = manual_dataset([0, 0], [0, 1], [0, 0],
                            [int(Role.TRAIN)] * 2, 1, 2)
        sampler = TripletSampler(ds)
        batch = sampler.sample(16, np.random.default_rng(0))
        assert len(batch) == 0
        assert sampler.dropped == 16

    def test_requires_target_edges(self):
        ds = manual_dataset([0], [0], [0], [int(Role.VALID)], 1, 2)
        with pytest.raises(ConfigError):
            TripletSampler(ds)


class TestAdamStep:
    def make(self, dim=1):
        mc = ModelConfig(embed_dim=dim, num_layers=1, rank=1, seed=0)
        params = init_params(mc, 1, 1, 1)
        for t in params.tensors().values():
            t[...] = 0.0
        return params

    def test_first_step_hand_value(self):
        params = self.make()
        grads = params.zeros_like()
        for t in grads.tensors().values():
            t[...] = 0.5
        state = OptimizerState.zeros(params)
        cfg = TrainConfig(learning_rate=0.1)
        adam_step(params, grads, state, cfg)
        assert state.step_count == 1
        # -lr * g/(|g| + eps) = -0.1 * 0.5/0.50000001
        for t in params.tensors().values():
            np.testing.assert_allclose(t, -0.099999998, rtol=0, atol=1e-12)

    def test_zero_gradients_leave_params(self):
        params = self.make()
        for t in params.tensors().values():
            t[...] = 1.5
        state = OptimizerState.zeros(params)
        adam_step(params, params.zeros_like(), state, TrainConfig())
        for t in params.tensors().values():
            np.testing.assert_allclose(t, 1.5)

    def test_moments_decay_on_zero_gradient(self):
        params = self.make()
        grads = params.zeros_like()
        grads.behavior_w[0] = 0.5
        state = OptimizerState.zeros(params)
        adam_step(params, grads, state, TrainConfig())
        m1 = state.first_moment.behavior_w[0]
        adam_step(params, params.zeros_like(), state, TrainConfig())
        assert state.first_moment.behavior_w[0] == pytest.approx(0.9 * m1)
        assert state.step_count == 2

    def test_identical_grads_identical_updates(self):
        params = self.make(dim=3)
        grads = params.zeros_like()
        grads.fuse_user_weight[...] = 0.25
        grads.fuse_item_weight[...] = 0.25
        state = OptimizerState.zeros(params)
        adam_step(params, grads, state, TrainConfig(learning_rate=0.01))
        np.testing.assert_array_equal(params.fuse_user_weight,
                                      params.fuse_item_weight)

    def test_nonfinite_gradient_names_tensor(self):
        params = self.make()
        grads = params.zeros_like()
        grads.behavior_w[0] = np.nan
        with pytest.raises(NumericalError, match="behavior_w"):
            adam_step(params, grads, OptimizerState.zeros(params),
                      TrainConfig())


class TestTrainLoop:
    def test_history_one_line_per_epoch(self):
        ds, graph, mc, factors, tc = toy_setup(epochs=3)
        lines = []
        result = train_loop(ds, graph, factors, tc, mc,
                            history_sink=lines.append)
        assert len(result.history) == 3 and len(lines) == 3
        keys = {"epoch", "mean_total", "mean_l_r", "mean_l_us", "mean_l_vs",
                "val_recall@10", "val_ndcg@10", "elapsed_ms"}
        assert set(result.history[0]) == keys

    def test_patience_one_constant_objective_stops_after_two(self):
        ds, graph, mc, factors, tc = toy_setup(epochs=50, patience=1)

        def stub(graph_, factors_, params, config_, batch, users, items,
                 **kwargs):
            report = LossReport(l_r=1.0, l_us=0.0, l_vs=0.0, l_reg=0.0,
                                total=1.0, lambda_=0.0, beta=0.0, tau=1.0)
            return report, params.zeros_like()

        result = train_loop(ds, graph, factors, tc, mc, objective_fn=stub)
        assert result.epochs_run == 2
        assert result.stopped_early

    def test_disable_cl_zeroes_contrastive_terms(self):
        ds, graph, mc, factors, tc = toy_setup(epochs=2)
        steps = []
        result = train_loop(ds, graph, factors, tc, mc, disable_cl=True,
                            step_sink=steps.append)
        assert all(s["l_us"] == 0.0 and s["l_vs"] == 0.0 for s in steps)
        assert all(h["mean_l_us"] == 0.0 for h in result.history)

    def test_divergence_keeps_last_good_checkpoint(self):
        ds, graph, mc, factors, tc = toy_setup(epochs=10)
        calls = {"n": 0}
        from mbrec.objective import total_loss_and_grads

        def exploding(*args, **kwargs):
            calls["n"] += 1
            report, grads = total_loss_and_grads(*args, **kwargs)
            if calls["n"] >= 4:
                grads.behavior_w[0] = np.inf
            return report, grads

        result = train_loop(ds, graph, factors, tc, mc,
                            objective_fn=exploding)
        assert result.diverged
        assert "behavior_w" in result.divergence_error
        assert result.best_epoch >= 1  # epoch-1 checkpoint retained
        assert np.isfinite(result.best_params.behavior_w).all()

    def test_bit_reproducible(self):
        import json

        def strip(history):
            return json.dumps([{k: v for k, v in h.items()
                                if k != "elapsed_ms"} for h in history])

        runs = []
        for _ in range(2):
            ds, graph, mc, factors, tc = toy_setup(epochs=3)
            runs.append(train_loop(ds, graph, factors, tc, mc))
        assert strip(runs[0].history) == strip(runs[1].history)
        for name, t in runs[0].best_params.tensors().items():
            np.testing.assert_array_equal(
                t, runs[1].best_params.tensors()[name])

    def test_loss_decreases_on_planted_data(self):
        ds, graph, mc, factors, tc = toy_setup(epochs=50, seed=0)
        result = train_loop(ds, graph, factors, tc, mc)
        assert (result.history[-1]["mean_total"]
                < result.history[0]["mean_total"])


class TestCheckpoint:
    def test_round_trip_identical(self, tmp_path):
        ds, graph, mc, factors, tc = toy_setup(epochs=2)
        result = train_loop(ds, graph, factors, tc, mc)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, result.best_params, result.optimizer_state,
                        tc, mc, result.rng_state)
        params, state, tc2, mc2, rng_state = load_checkpoint(path)
        assert tc2 == tc and mc2 == mc
        assert state.step_count == result.optimizer_state.step_count
        assert rng_state == result.rng_state
        for name, t in result.best_params.tensors().items():
            np.testing.assert_array_equal(t, params.tensors()[name])
        assert not path.with_suffix(".npz.tmp").exists()

    def test_round_trip_evaluation_identical(self, tmp_path):
        ds, graph, mc, factors, tc = toy_setup(epochs=2)
        result = train_loop(ds, graph, factors, tc, mc)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, result.best_params, result.optimizer_state,
                        tc, mc)
        params, *_ = load_checkpoint(path)
        from mbrec.evaluation import evaluate_split
        before = evaluate_split(
            forward(graph, factors, result.best_params, mc), ds, "valid")
        after = evaluate_split(
            forward(graph, factors, params, mc), ds, "valid")
        assert before.to_dict() == after.to_dict()

    def test_corrupt_checkpoint_raises_config_error(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ConfigError):
            load_checkpoint(path)
