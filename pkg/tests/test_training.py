import math
from dataclasses import replace

import numpy as np
import pytest

from skyfuse.errors import ContractError, InputError, NonFiniteError, ParameterError
from skyfuse.metrics import macro_metrics
from skyfuse.model import TINY, ModelConfig, forward, init_params
from skyfuse.pipeline import Dataset
from skyfuse.tensorkit import Tensor, grad_check
from skyfuse.training import (AdamState, EarlyStopState, OptimizerConfig, SchedulerState, adamw_step, cross_entropy,
                              decayed_names, early_stop_step, evaluate, plateau_step, predict, read_history, train,
                              write_history)


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, dtype=np.float64)


class TestCrossEntropy:
    def test_uniform(self):
        assert float(cross_entropy(t(np.zeros((3, 5))), [0, 2, 4]).data) == pytest.approx(math.log(5), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((2, 5))
        logits[0, 1] = logits[1, 3] = 20.0
        loss = float(cross_entropy(t(logits + 0), [1, 3]).data)
        assert loss < 1e-8

    def test_hand_case(self):
        want = -math.log(math.exp(2) / (math.exp(1) + math.exp(2)))
        got = float(cross_entropy(t([[1.0, 2.0]]), [1]).data)
        assert got == pytest.approx(want, abs=1e-12) and round(got, 4) == 0.3133

    def test_gradient(self, rng):
        labels = [0, 3, 1]
        assert grad_check(lambda x: cross_entropy(x, labels), rng.normal(size=(3, 4))).passed

    @pytest.mark.parametrize("labels", [[0, 5], [-1, 0], [0]])
    def test_bad_labels(self, labels):
        with pytest.raises(InputError):
            cross_entropy(t(np.zeros((2, 5))), labels)


class TestAdamW:
    def _step(self, theta, g, **cfg):
        opt = OptimizerConfig(**cfg)
        new, _ = adamw_step({"w.weight": np.array([theta], dtype=np.float64)},
                            {"w.weight": np.array([g], dtype=np.float64)}, AdamState(), opt, 1)
        return float(new["w.weight"][0])

    def test_decay_only(self):
        assert self._step(1.0, 0.0) == pytest.approx(1 - 1e-4 * 1e-2, abs=1e-15)
        assert abs(self._step(1.0, 0.0) - 0.999999) <= 1e-9

    def test_unit_gradient(self):
        got = self._step(0.0, 1.0, weight_decay=0.0)
        assert got == pytest.approx(-1e-4 / (1 + 1e-8), abs=1e-15)
        assert abs(got - (-1e-4)) <= 1e-9

    def test_zero_grad_zero_decay_is_identity(self, rng):
        theta = {"a.weight": rng.normal(size=(3, 2)), "a.bias": rng.normal(size=2)}
        grads = {k: np.zeros_like(v) for k, v in theta.items()}
        new, _ = adamw_step(theta, grads, AdamState(), OptimizerConfig(weight_decay=0.0), 1)
        assert all((new[k] == theta[k]).all() for k in theta)

    def test_deterministic(self, rng):
        theta = {"a.weight": rng.normal(size=(3, 2))}
        grads = [{"a.weight": rng.normal(size=(3, 2))} for _ in range(5)]

        def run():
            p, s = dict(theta), AdamState()
            for i, g in enumerate(grads, 1):
                p, s = adamw_step(p, g, s, OptimizerConfig(), i)
            return p["a.weight"]

        assert run().tobytes() == run().tobytes()

    def test_decay_set(self):
        names = {"x.weight": 0, "x.bias": 0, "n.gain": 0}
        assert decayed_names(names) == {"x.weight"}
        theta = {k: np.ones(1) for k in names}
        new, _ = adamw_step(theta, {k: np.zeros(1) for k in names}, AdamState(), OptimizerConfig(), 1,
                            decay=decayed_names(names))
        assert new["x.bias"][0] == 1.0 and new["n.gain"][0] == 1.0 and new["x.weight"][0] < 1.0

    def test_validation(self):
        with pytest.raises(ParameterError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ParameterError):
            OptimizerConfig(beta1=1.0)
        with pytest.raises(ParameterError):
            adamw_step({}, {}, AdamState(), OptimizerConfig(), 0)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            adamw_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, AdamState(), OptimizerConfig(), 1)


class TestPlateau:
    def test_six_bad_epochs_halve(self):
        s = plateau_step(SchedulerState(lr=1e-4), 0.5)
        lrs = []
        for _ in range(6):
            s = plateau_step(s, 0.5)
            lrs.append(s.lr)
        assert lrs[:5] == [1e-4] * 5 and lrs[5] == 5e-5

    def test_improving_keeps_lr(self):
        s = SchedulerState(lr=1e-4)
        for acc in np.linspace(0.1, 0.9, 30):
            s = plateau_step(s, float(acc))
        assert s.lr == 1e-4

    def test_two_reductions_and_monotone(self):
        s = plateau_step(SchedulerState(lr=1e-4), 0.5)
        seen = [s.lr]
        for _ in range(12):
            s = plateau_step(s, 0.5)
            seen.append(s.lr)
        assert s.lr == pytest.approx(2.5e-5)
        assert all(b <= a for a, b in zip(seen, seen[1:]))

    def test_tie_is_not_improvement(self):
        s = plateau_step(SchedulerState(lr=1e-4), 0.7)
        s = plateau_step(s, 0.7)
        assert s.num_bad == 1

    def test_bad_factor(self):
        with pytest.raises(ParameterError):
            SchedulerState(factor=1.0)


def _params(value):
    return {"w.weight": Tensor(np.full(2, float(value)), requires_grad=True)}


class TestEarlyStop:
    def test_monotone_never_stops(self):
        s = EarlyStopState(patience=20)
        for e in range(1, 101):
            s, stop = early_stop_step(s, e / 100, _params(e), e)
            assert not stop

    def test_flat_stops_at_best_plus_patience(self):
        s = EarlyStopState(patience=20)
        stopped_at = None
        for e in range(1, 101):
            s, stop = early_stop_step(s, 0.5, _params(e), e)
            if stop:
                stopped_at = e
                break
        assert s.best_epoch == 1 and stopped_at == 1 + 20

    def test_snapshot_is_best_epoch(self):
        s = EarlyStopState(patience=3)
        for e, acc in enumerate([0.2, 0.9, 0.4, 0.3, 0.1], 1):
            s, stop = early_stop_step(s, acc, _params(e), e)
        assert stop and s.best_epoch == 2 and (s.snapshot["w.weight"] == 2.0).all()


def _toy_dataset(cfg, n=30, seed=0):
    r = np.random.default_rng(seed)
    y = np.arange(n) % cfg.num_classes
    x = r.normal(scale=0.3, size=(n, cfg.target_seq_len, cfg.feature_dim)).astype(np.float32)
    x[np.arange(n), :, y % cfg.feature_dim] += 2.0
    return Dataset(x, y, tuple(f"c{i}" for i in range(cfg.num_classes)))


class TestEvaluate:
    def test_constant_logits_pick_class_zero(self, micro_cfg):
        params = init_params(micro_cfg, 0)
        for k, v in params.items():
            if k.startswith("head.2"):
                v.data[...] = 0.0
        ds = _toy_dataset(micro_cfg, 9)
        cm = evaluate(params, ds, micro_cfg)
        assert cm.counts[:, 1:].sum() == 0 and cm.counts[:, 0].sum() == 9

    def test_total_matches_samples(self, micro_cfg):
        ds = _toy_dataset(micro_cfg, 160)
        assert evaluate(init_params(micro_cfg, 0), ds, micro_cfg, batch_size=7).total == 160

    def test_empty(self, micro_cfg):
        with pytest.raises(InputError):
            evaluate(init_params(micro_cfg, 0), _toy_dataset(micro_cfg).subset([]), micro_cfg)


class TestTrainLoop:
    def test_epochs_zero(self, micro_cfg):
        ds = _toy_dataset(micro_cfg)
        init = init_params(micro_cfg, 0)
        res = train(micro_cfg, ds, ds, epochs=0, params=init)
        assert res.history == [] and res.params is init

    def test_identical_seeds_identical_history(self, micro_cfg):
        ds = _toy_dataset(micro_cfg)
        kw = dict(opt=OptimizerConfig(learning_rate=1e-2), epochs=4, batch_size=8, seed=3)
        a = train(replace(micro_cfg, dropout=0.2), ds, ds, **kw)
        b = train(replace(micro_cfg, dropout=0.2), ds, ds, **kw)
        assert a.history == b.history
        assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)

    def test_returns_best_epoch_params(self, micro_cfg):
        tr, va = _toy_dataset(micro_cfg, 30, 0), _toy_dataset(micro_cfg, 15, 1)
        res = train(micro_cfg, tr, va, OptimizerConfig(learning_rate=3e-2), epochs=12, batch_size=8, seed=1)
        best = max(h["val_acc"] for h in res.history)
        assert res.history[res.best_epoch - 1]["val_acc"] == best
        assert macro_metrics(evaluate(res.params, va, micro_cfg))["accuracy"] == pytest.approx(best)
        assert best >= res.history[-1]["val_acc"]

    def test_early_stop_exact(self, micro_cfg):
        ds = _toy_dataset(micro_cfg)
        # a learning rate this small leaves validation accuracy flat
        res = train(micro_cfg, ds, ds, OptimizerConfig(learning_rate=1e-12, weight_decay=0.0), stop_patience=3,
                    epochs=50, batch_size=30)
        assert res.stopped_early and len(res.history) == res.best_epoch + 3

    def test_max_steps(self, micro_cfg):
        ds = _toy_dataset(micro_cfg)
        res = train(micro_cfg, ds, ds, epochs=50, batch_size=8, max_steps=10)
        assert res.steps == 10 and len(res.history) == 3

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_reported(self, micro_cfg):
        ds = _toy_dataset(micro_cfg)
        params = init_params(micro_cfg, 0)
        params["input_proj.weight"].data[...] = 1e38
        with pytest.raises(NonFiniteError, match="epoch 1"):
            train(micro_cfg, ds, ds, epochs=1, params=params)

    def test_history_round_trip(self, micro_cfg, tmp_path):
        ds = _toy_dataset(micro_cfg)
        res = train(micro_cfg, ds, ds, epochs=2, batch_size=10)
        write_history(tmp_path / "h.tsv", res.history)
        assert read_history(tmp_path / "h.tsv") == res.history
        assert (tmp_path / "h.tsv").read_text().splitlines()[0].split("\t")[:4] == ["epoch", "lr", "train_loss",
                                                                                     "train_acc"]


@pytest.mark.slow
class TestOverfitSmoke:
    def test_tiny_model_fits_synthetic_training_set(self, synthetic_splits):
        train_ds = synthetic_splits[0]
        # validating on the training data makes the returned snapshot the best fit
        res = train(TINY, train_ds, train_ds, OptimizerConfig(learning_rate=5e-3), epochs=1000, batch_size=16,
                    seed=0, max_steps=200, stop_patience=1000)
        acc = macro_metrics(evaluate(res.params, train_ds, TINY))["accuracy"]
        assert res.steps == 200
        assert acc >= 0.95
        assert res.history[-1]["train_loss"] < 0.1 * res.history[0]["train_loss"]
