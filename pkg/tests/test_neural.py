import numpy as np
import pytest

from stacktext import neural
from stacktext.neural import TransformerConfig

SMALL = TransformerConfig(layers=2, hidden=16, heads=2, max_len=8,
                          vocab_size=30, num_classes=3, dropout=0.0)


def make_batch(cfg, n=6, seed=0, pad_tail=2):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, cfg.vocab_size, size=(n, cfg.max_len))
    ids[:, 0] = 2  # start marker
    mask = np.ones((n, cfg.max_len))
    if pad_tail:
        ids[:, -pad_tail:] = 0
        mask[:, -pad_tail:] = 0
    labels = rng.integers(0, cfg.num_classes, size=n)
    return ids, mask, labels


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(neural.NeuralError):
            TransformerConfig(hidden=10, heads=4)

    def test_presets(self):
        bert = neural.preset("bert-like", "desk")
        distil = neural.preset("distil-like", "desk")
        assert (bert.layers, bert.hidden, bert.heads) == (4, 64, 4)
        assert distil.layers * 2 == bert.layers
        paper = neural.preset("bert-like", "paper")
        assert (paper.layers, paper.hidden, paper.heads) == (12, 768, 12)
        assert neural.preset("distil-like", "paper").layers * 2 == paper.layers

    def test_tokenizer_mode_by_lineage(self):
        assert neural.preset("roberta-like").tokenizer_mode == "byte"
        assert neural.preset("bert-like").tokenizer_mode == "char"

    def test_unknown_lineage_and_scale(self):
        with pytest.raises(neural.NeuralError):
            neural.preset("gpt-like")
        with pytest.raises(neural.NeuralError):
            neural.preset("bert-like", "mega")


class TestInit:
    def test_param_shapes(self):
        model = neural.init_transformer(SMALL, seed=0)
        p = model.params
        assert p["tok_emb"].shape == (30, 16)
        assert p["pos_emb"].shape == (8, 16)
        assert p["l0.wq"].shape == (16, 16)
        assert p["l0.w1"].shape == (16, 64)
        assert p["head.w"].shape == (16, 3)
        assert np.all(p["l1.ln1.g"] == 1.0) and np.all(p["l1.ln1.b"] == 0.0)

    def test_deterministic_init(self):
        m1 = neural.init_transformer(SMALL, seed=4)
        m2 = neural.init_transformer(SMALL, seed=4)
        for k in m1.params:
            assert np.array_equal(m1.params[k], m2.params[k])

    def test_clone_is_deep(self):
        model = neural.init_transformer(SMALL)
        other = model.clone()
        other.params["head.b"] += 1.0
        assert not np.array_equal(model.params["head.b"], other.params["head.b"])


class TestForward:
    def test_logit_shape_and_finiteness(self):
        model = neural.init_transformer(SMALL, seed=1)
        ids, mask, _ = make_batch(SMALL)
        logits, pooled = neural.forward(model, ids, mask)
        assert logits.shape == (6, 3) and pooled.shape == (6, 16)
        assert np.all(np.isfinite(logits))

    def test_wrong_length_rejected(self):
        model = neural.init_transformer(SMALL)
        ids = np.zeros((2, 5), dtype=np.int64)
        with pytest.raises(neural.NeuralError):
            neural.forward(model, ids, np.ones((2, 5)))

    def test_padding_invariance(self):
        """Changing token ids at masked positions must not change logits."""
        model = neural.init_transformer(SMALL, seed=2)
        ids, mask, _ = make_batch(SMALL, pad_tail=3)
        logits1, _ = neural.forward(model, ids, mask)
        ids2 = ids.copy()
        ids2[:, -3:] = 7  # arbitrary junk behind the mask
        logits2, _ = neural.forward(model, ids2, mask)
        assert np.allclose(logits1, logits2, atol=1e-10)

    def test_proba_rows_stochastic(self):
        model = neural.init_transformer(SMALL, seed=3)
        ids, mask, _ = make_batch(SMALL)
        P = neural.nn_predict_proba(model, ids, mask)
        assert np.allclose(P.sum(axis=1), 1.0) and np.all(P >= 0)

    def test_eval_mode_is_deterministic(self):
        model = neural.init_transformer(SMALL, seed=5)
        ids, mask, _ = make_batch(SMALL)
        l1, _ = neural.forward(model, ids, mask)
        l2, _ = neural.forward(model, ids, mask)
        assert np.array_equal(l1, l2)


class TestGradients:
    def test_grad_check_small_model(self):
        model = neural.init_transformer(SMALL, seed=0)
        ids, mask, labels = make_batch(SMALL, n=4, seed=1)
        err = neural.grad_check(model, ids, mask, labels, n_coords=200)
        assert err < 1e-4

    def test_grad_check_single_layer_no_padding(self):
        cfg = TransformerConfig(layers=1, hidden=8, heads=2, max_len=4,
                                vocab_size=12, num_classes=2, dropout=0.0)
        model = neural.init_transformer(cfg, seed=7)
        ids, mask, labels = make_batch(cfg, n=3, seed=2, pad_tail=0)
        assert neural.grad_check(model, ids, mask, labels, n_coords=120) < 1e-4

    def test_grads_cover_every_parameter(self):
        model = neural.init_transformer(SMALL, seed=0)
        ids, mask, labels = make_batch(SMALL, n=4)
        _, grads = neural.classifier_loss_and_grads(model, ids, mask, labels)
        assert set(grads) == set(model.params)
        for k in grads:
            if k == "tok_emb":
                continue  # only used rows receive gradient
            assert np.any(grads[k] != 0.0), k

    def test_unused_token_rows_get_zero_gradient(self):
        model = neural.init_transformer(SMALL, seed=0)
        ids, mask, labels = make_batch(SMALL, n=4)
        _, grads = neural.classifier_loss_and_grads(model, ids, mask, labels)
        unused = sorted(set(range(SMALL.vocab_size)) - set(np.unique(ids)))
        assert unused and np.all(grads["tok_emb"][unused] == 0.0)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = {"w": np.array([1.0, 2.0])}
        opt = neural.Adam(params, lr=0.1)
        opt.step(params, {"w": np.array([0.5, -3.0])})
        # bias-corrected first step is lr * sign(g) up to eps
        assert np.allclose(params["w"], [1.0 - 0.1, 2.0 + 0.1], atol=1e-6)

    def test_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([4.0])}
        opt = neural.Adam(params, lr=0.1)
        opt.step(params, {"w": np.array([0.0])})
        assert params["w"][0] == pytest.approx(4.0)


class TestTraining:
    def _toy_task(self, cfg, n=40, seed=0):
        """Label = whether trigger token 9 appears anywhere in the body."""
        rng = np.random.default_rng(seed)
        ids = rng.integers(5, cfg.vocab_size, size=(n, cfg.max_len))
        ids[:, 0] = 2
        ids[ids == 9] = 10
        labels = rng.integers(0, 2, size=n)
        for i in range(n):
            if labels[i] == 1:
                ids[i, int(rng.integers(1, cfg.max_len))] = 9
        return ids, np.ones((n, cfg.max_len)), labels

    def test_loss_decreases_on_trigger_task(self):
        cfg = TransformerConfig(layers=2, hidden=16, heads=2, max_len=8,
                                vocab_size=20, num_classes=2, dropout=0.0)
        model = neural.init_transformer(cfg, seed=0)
        data = self._toy_task(cfg, n=48)
        trained, curve = neural.train_classifier(model, data, data,
                                                 epochs=20, lr=3e-3, seed=0)
        train_losses = [tr for tr, _ in curve.entries]
        assert train_losses[-1] < train_losses[0] * 0.6
        _, acc = neural.evaluate_classifier(trained, *data)
        assert acc >= 0.9

    def test_training_does_not_mutate_input_model(self):
        model = neural.init_transformer(SMALL, seed=0)
        before = model.params["head.w"].copy()
        data = make_batch(SMALL, n=8)
        neural.train_classifier(model, data, data, epochs=1, lr=1e-3)
        assert np.array_equal(model.params["head.w"], before)

    def test_deterministic_training(self):
        data = make_batch(SMALL, n=10, seed=3)
        runs = []
        for _ in range(2):
            model = neural.init_transformer(SMALL, seed=1)
            trained, curve = neural.train_classifier(model, data, data,
                                                     epochs=3, lr=1e-3, seed=9)
            runs.append((trained, curve.entries))
        assert runs[0][1] == runs[1][1]
        for k in runs[0][0].params:
            assert np.array_equal(runs[0][0].params[k], runs[1][0].params[k])

    def test_label_out_of_range_rejected(self):
        model = neural.init_transformer(SMALL)
        ids, mask, _ = make_batch(SMALL, n=4)
        bad = np.array([0, 1, 2, 3])
        with pytest.raises(neural.NeuralError):
            neural.train_classifier(model, (ids, mask, bad), (ids, mask, bad),
                                    epochs=1)


class TestLossCurve:
    def test_csv_round_trips_floats_exactly(self):
        curve = neural.LossCurve()
        curve.append(0.1 + 0.2, 1.0 / 3.0)
        curve.append(0.5, 0.25)
        lines = curve.to_csv().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        e, tr, va = lines[1].split(",")
        assert (int(e), float(tr), float(va)) == (0, 0.1 + 0.2, 1.0 / 3.0)

    def test_non_finite_rejected(self):
        curve = neural.LossCurve()
        with pytest.raises(neural.NeuralError):
            curve.append(float("nan"), 0.0)


class TestCheckpoints:
    def test_save_load_round_trip(self, tmp_path):
        model = neural.init_transformer(SMALL, seed=11)
        path = tmp_path / "model.npz"
        neural.save_transformer(model, path, phase="pretrained")
        loaded = neural.load_transformer(path)
        assert loaded.config == SMALL
        ids, mask, _ = make_batch(SMALL)
        assert np.array_equal(neural.nn_predict_proba(loaded, ids, mask),
                              neural.nn_predict_proba(model, ids, mask))

    def test_foreign_npz_rejected(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, __header__='{"format": "something-else"}')
        with pytest.raises(neural.NeuralError):
            neural.load_transformer(path)
