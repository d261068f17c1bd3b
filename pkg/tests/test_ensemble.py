import numpy as np
import pytest

from stacktext import classical, ensemble, neural
from stacktext.classical import TrainSpec
from stacktext.corpus import Dataset, LabeledDocument
from stacktext.ensemble import (ClassicalBaseSpec, MetaSpec, StackSpec,
                                TransformerBaseSpec)
from stacktext.textprep import CleanConfig

MARKERS = {"red": "crimson scarlet ruby", "blue": "azure cobalt navy",
           "green": "emerald jade olive"}
NOISE = ["the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
         "some", "words", "appear", "everywhere"]

PLAIN = CleanConfig(stopword_list=frozenset())


def make_text_dataset(n_per_class=20, seed=0, noise_words=4, name="toy"):
    rng = np.random.default_rng(seed)
    docs = []
    for label, markers in MARKERS.items():
        marker_words = markers.split()
        for _ in range(n_per_class):
            words = [str(rng.choice(marker_words))]
            words += [str(rng.choice(NOISE)) for _ in range(noise_words)]
            rng.shuffle(words)
            docs.append(LabeledDocument(text=" ".join(words), label=label))
    order = rng.permutation(len(docs))
    return Dataset(documents=tuple(docs[i] for i in order), name=name)


def fast_classical(kind):
    return ClassicalBaseSpec(kind=kind, clean_config=PLAIN,
                             train_spec=TrainSpec(epochs=20, tree_count=15))


class TestMetaFeatures:
    def test_hstack_order_and_shape(self):
        a = np.array([[0.9, 0.1], [0.2, 0.8]])
        b = np.array([[0.6, 0.4], [0.3, 0.7]])
        M = ensemble.meta_features([a, b])
        assert M.shape == (2, 4)
        assert np.array_equal(M[:, :2], a) and np.array_equal(M[:, 2:], b)

    def test_shape_mismatch_rejected(self):
        a = np.zeros((3, 2))
        b = np.zeros((3, 3))
        with pytest.raises(ensemble.EnsembleError):
            ensemble.meta_features([a, b])

    def test_empty_rejected(self):
        with pytest.raises(ensemble.EnsembleError):
            ensemble.meta_features([])


class TestStackSpecValidation:
    def test_needs_two_bases(self):
        with pytest.raises(ensemble.EnsembleError):
            StackSpec(base_specs=[fast_classical("LR")])

    def test_needs_two_folds(self):
        with pytest.raises(ensemble.EnsembleError):
            StackSpec(base_specs=[fast_classical("LR"), fast_classical("LSVM")],
                      folds=1)


class TestStratifiedFolds:
    def test_balanced_coverage(self):
        y = np.array([0] * 25 + [1] * 25)
        folds = ensemble._stratified_folds(y, 5, np.random.default_rng(0))
        for f in range(5):
            sel = folds == f
            assert sel.sum() == 10
            assert (y[sel] == 0).sum() == 5

    def test_every_row_assigned(self):
        y = np.array([0, 1, 2] * 7)
        folds = ensemble._stratified_folds(y, 3, np.random.default_rng(1))
        assert set(np.unique(folds)) <= {0, 1, 2}
        assert folds.shape == y.shape


class TestLeakAudit:
    def _clean_audit(self, n, k, n_bases):
        y = np.arange(n) % 2
        folds = ensemble._stratified_folds(y, k, np.random.default_rng(0))
        audit = []
        for b in range(n_bases):
            for f in range(k):
                audit.append({"base": b, "fold": f,
                              "trained_on": np.flatnonzero(folds != f),
                              "predicted": np.flatnonzero(folds == f)})
        return audit

    def test_clean_audit_passes(self):
        ensemble.assert_leak_free(self._clean_audit(20, 4, 2), 20, 2)

    def test_overlap_detected(self):
        audit = self._clean_audit(20, 4, 1)
        # corrupt: one base predicts a row it trained on
        audit[0]["predicted"] = np.append(audit[0]["predicted"],
                                          audit[0]["trained_on"][0])
        with pytest.raises(ensemble.EnsembleError, match="leak"):
            ensemble.assert_leak_free(audit, 20, 1)

    def test_missing_coverage_detected(self):
        audit = self._clean_audit(20, 4, 1)
        audit[0]["predicted"] = audit[0]["predicted"][:-1]
        with pytest.raises(ensemble.EnsembleError, match="coverage"):
            ensemble.assert_leak_free(audit, 20, 1)


class TestBuildMeta:
    def _meta_matrix(self, n=120, c=3, seed=0):
        """Base 0 is informative (noisy one-hot), base 1 is pure noise."""
        rng = np.random.default_rng(seed)
        y = rng.integers(0, c, size=n)
        good = rng.dirichlet(np.ones(c) * 0.4, size=n)
        boost = np.zeros((n, c))
        boost[np.arange(n), y] = 2.0
        good = good + boost
        good /= good.sum(axis=1, keepdims=True)
        noise = rng.dirichlet(np.ones(c), size=n)
        return np.hstack([good, noise]), y

    @pytest.mark.parametrize("kind", ["logistic", "transformer-head"])
    def test_learns_informative_base(self, kind):
        M, y = self._meta_matrix()
        spec = MetaSpec(kind=kind, epochs=40)
        meta, curve = ensemble.build_meta(spec, M, y, num_bases=2,
                                          num_classes=3, seed=0)
        acc = float(np.mean(np.argmax(meta.predict_proba(M), axis=1) == y))
        assert acc >= 0.85
        assert len(curve.entries) == 40

    def test_logistic_weight_norms_favor_informative_base(self):
        M, y = self._meta_matrix()
        meta, _ = ensemble.build_meta(MetaSpec(kind="logistic", epochs=60),
                                      M, y, num_bases=2, num_classes=3)
        norms = meta.block_weight_norms()
        assert norms.shape == (2,)
        assert norms[0] > norms[1]

    def test_block_norms_undefined_for_transformer_head(self):
        M, y = self._meta_matrix(n=30)
        meta, _ = ensemble.build_meta(MetaSpec(epochs=3), M, y, 2, 3)
        with pytest.raises(ensemble.EnsembleError):
            meta.block_weight_norms()

    def test_shape_disagreement_rejected(self):
        M = np.zeros((10, 5))
        with pytest.raises(ensemble.EnsembleError):
            ensemble.build_meta(MetaSpec(), M, np.zeros(10, dtype=int), 2, 3)

    def test_unknown_meta_kind(self):
        M, y = self._meta_matrix(n=20)
        with pytest.raises(ensemble.EnsembleError):
            ensemble.build_meta(MetaSpec(kind="mlp"), M, y, 2, 3)


class TestClassicalBase:
    def test_fit_and_predict_shapes(self):
        ds = make_text_dataset(n_per_class=12)
        y = np.array([{"blue": 0, "green": 1, "red": 2}[d.label]
                      for d in ds.documents])
        pred = fast_classical("LR").fit(ds.texts(), y, 3, seed=0)
        P = pred.predict_proba(ds.texts())
        assert P.shape == (len(ds), 3)
        assert np.allclose(P.sum(axis=1), 1.0)

    def test_missing_trailing_class_padded(self):
        texts = ["crimson ruby", "azure navy"] * 6
        y = np.array([0, 1] * 6)
        pred = fast_classical("LR").fit(texts, y, 4, seed=0)
        P = pred.predict_proba(texts[:3])
        assert P.shape == (3, 4)
        assert np.all(P[:, 2:] == 0.0)


class TestTransformerBase:
    def test_fit_and_predict(self):
        ds = make_text_dataset(n_per_class=8, noise_words=2)
        y = np.array([{"blue": 0, "green": 1, "red": 2}[d.label]
                      for d in ds.documents])
        spec = TransformerBaseSpec(lineage="bert-like", max_len=16,
                                   vocab_size=80, epochs=2, lr=1e-3)
        pred = spec.fit(ds.texts(), y, 3, seed=0)
        P = pred.predict_proba(ds.texts()[:5])
        assert P.shape == (5, 3)
        assert np.allclose(P.sum(axis=1), 1.0)
        assert len(pred.curve.entries) == 2

    def test_lineage_pretraining_paths_run(self):
        ds = make_text_dataset(n_per_class=6, noise_words=2)
        y = np.array([{"blue": 0, "green": 1, "red": 2}[d.label]
                      for d in ds.documents])
        for lineage in ("bert-like", "roberta-like", "electra-like",
                        "distil-like"):
            spec = TransformerBaseSpec(lineage=lineage, max_len=16,
                                       vocab_size=280, epochs=1,
                                       do_pretrain=True, pretrain_epochs=1)
            pred = spec.fit(ds.texts(), y, 3, seed=1)
            assert pred.model.config.lineage == lineage


class TestStackTrain:
    def _split(self, seed=0):
        train = make_text_dataset(n_per_class=16, seed=seed, name="train")
        val = make_text_dataset(n_per_class=4, seed=seed + 100, name="val")
        return train, val

    def _spec(self, seed=0, **kw):
        defaults = dict(
            base_specs=[fast_classical("LR"), fast_classical("LSVM")],
            meta_spec=MetaSpec(kind="logistic", epochs=30),
            folds=3, seed=seed)
        defaults.update(kw)
        return StackSpec(**defaults)

    def test_stack_beats_chance_and_is_coherent(self):
        train, val = self._split()
        model, curve = ensemble.stack_train(self._spec(), train, val)
        preds = ensemble.stack_predict_labels(model, val.texts())
        acc = float(np.mean([p == d.label
                             for p, d in zip(preds, val.documents)]))
        assert acc >= 0.8
        assert model.provenance["loss_kind"] == "cce"
        assert model.provenance["bases"] == ["classical:LR", "classical:LSVM"]
        assert len(curve.entries) == 30
        assert model.fold_assignment.shape == (len(train),)

    def test_deterministic_given_seed(self):
        train, val = self._split()
        p1 = ensemble.stack_predict(
            ensemble.stack_train(self._spec(seed=5), train, val)[0], val.texts())
        p2 = ensemble.stack_predict(
            ensemble.stack_train(self._spec(seed=5), train, val)[0], val.texts())
        assert np.array_equal(p1, p2)

    def test_unseen_validation_label_rejected(self):
        train, _ = self._split()
        bad_val = Dataset(documents=(LabeledDocument(text="x", label="purple"),))
        with pytest.raises(ensemble.EnsembleError, match="purple"):
            ensemble.stack_train(self._spec(), train, bad_val)

    def test_leaky_mode_differs_from_leak_free(self):
        train, val = self._split()
        leak_free, _ = ensemble.stack_train(self._spec(), train, val)
        leaky, _ = ensemble.stack_train(self._spec(leak_free=False), train, val)
        assert leaky.provenance["leak_free"] is False
        M_free = ensemble.meta_features(
            [p.predict_proba(train.texts()) for p in leak_free.base_predictors])
        assert M_free.shape == (len(train), 6)

    def test_binary_provenance_uses_bce(self):
        docs = [LabeledDocument(text=t, label=l) for t, l in
                [("crimson ruby scarlet", "red"), ("azure navy cobalt", "blue")] * 10]
        train = Dataset(documents=tuple(docs))
        val = Dataset(documents=tuple(docs[:4]))
        model, _ = ensemble.stack_train(self._spec(folds=2), train, val)
        assert model.provenance["loss_kind"] == "bce"


class TestPersistence:
    def _trained(self, meta_kind):
        train = make_text_dataset(n_per_class=10, name="train")
        val = make_text_dataset(n_per_class=3, seed=7, name="val")
        spec = StackSpec(
            base_specs=[fast_classical("LR"), fast_classical("PAC")],
            meta_spec=MetaSpec(kind=meta_kind, epochs=10), folds=2, seed=0)
        model, _ = ensemble.stack_train(spec, train, val)
        return model, val

    @pytest.mark.parametrize("meta_kind", ["logistic", "transformer-head"])
    def test_round_trip_preserves_predictions(self, tmp_path, meta_kind):
        model, val = self._trained(meta_kind)
        out = tmp_path / "stacked"
        ensemble.save_stacked(model, out)
        loaded = ensemble.load_stacked(out)
        assert loaded.label_map.names() == model.label_map.names()
        assert np.allclose(ensemble.stack_predict(loaded, val.texts()),
                           ensemble.stack_predict(model, val.texts()),
                           atol=1e-12)

    def test_foreign_directory_rejected(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"format": "nope"}',
                                                encoding="utf-8")
        with pytest.raises(ensemble.EnsembleError):
            ensemble.load_stacked(tmp_path)
