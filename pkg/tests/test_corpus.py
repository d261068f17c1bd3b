import pytest

from stacktext import corpus


def write_csv(tmp_path, rows, header="text,label"):
    path = tmp_path / "data.csv"
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


class TestLoadCsv:
    def test_basic_load(self, tmp_path):
        path = write_csv(tmp_path, ['"good stuff",pos', '"bad stuff",neg'])
        ds, dropped = corpus.load_csv(path)
        assert len(ds) == 2 and dropped == 0
        assert ds.documents[0].text == "good stuff"

    def test_header_only_is_error(self, tmp_path):
        path = write_csv(tmp_path, [])
        with pytest.raises(corpus.CorpusError, match="zero usable rows"):
            corpus.load_csv(path)

    def test_blank_text_row_dropped_and_counted(self, tmp_path):
        path = write_csv(tmp_path, ['"a",x', '"",y', '"b",z'])
        ds, dropped = corpus.load_csv(path)
        assert len(ds) == 2 and dropped == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(corpus.CorpusError, match="no such file"):
            corpus.load_csv(tmp_path / "nope.csv")

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, ['"a",x'], header="body,label")
        with pytest.raises(corpus.CorpusError, match="missing column"):
            corpus.load_csv(path)

    def test_idempotent_load(self, tmp_path):
        path = write_csv(tmp_path, ['"a",x', '"b,with comma",y'])
        ds1, _ = corpus.load_csv(path)
        ds2, _ = corpus.load_csv(path)
        assert ds1.documents == ds2.documents

    def test_quoted_comma_preserved(self, tmp_path):
        path = write_csv(tmp_path, ['"hello, world",x', '"plain",y'])
        ds, _ = corpus.load_csv(path)
        assert ds.documents[0].text == "hello, world"


class TestEncodeLabels:
    def _ds(self, labels):
        docs = tuple(corpus.LabeledDocument(text=f"t{i}", label=l)
                     for i, l in enumerate(labels))
        return corpus.Dataset(documents=docs)

    def test_lexicographic_ids(self):
        lm, ids = corpus.encode_labels(self._ds(["pos", "neg", "neu"]))
        assert lm.name_to_id == {"neg": 0, "neu": 1, "pos": 2}
        assert ids == [2, 0, 1]

    def test_single_label_rejected(self):
        with pytest.raises(corpus.CorpusError):
            corpus.encode_labels(self._ds(["only", "only"]))

    def test_binary_label_order(self):
        lm, _ = corpus.encode_labels(self._ds(["truthful", "deceptive"]))
        assert lm.num_classes == 2
        assert lm.id_of("deceptive") == 0


class TestSplit:
    def _ds(self, n, labels):
        docs = tuple(corpus.LabeledDocument(text=f"doc {i}", label=labels[i % len(labels)])
                     for i in range(n))
        return corpus.Dataset(documents=docs)

    def test_exact_ratio_sizes(self):
        ds = self._ds(100, ["a", "b"])
        train, val, test = corpus.split(ds, (0.8, 0.1, 0.1), seed=3)
        assert (len(train), len(val), len(test)) == (80, 10, 10)

    def test_same_seed_same_partition(self):
        ds = self._ds(60, ["a", "b", "c"])
        p1 = corpus.split(ds, seed=7)
        p2 = corpus.split(ds, seed=7)
        for a, b in zip(p1, p2):
            assert a.documents == b.documents

    def test_stratification_within_one(self):
        ds = self._ds(200, ["a", "b"])  # 50/50
        for part in corpus.split(ds, (0.8, 0.1, 0.1), seed=1):
            dist = corpus.class_distribution(part)
            assert abs(dist["a"] - dist["b"]) <= 1

    def test_partition_is_disjoint_and_exhaustive(self):
        ds = self._ds(50, ["a", "b"])
        parts = corpus.split(ds, seed=9)
        seen = [d.text for p in parts for d in p.documents]
        assert sorted(seen) == sorted(d.text for d in ds.documents)
        assert len(set(seen)) == len(seen)

    def test_ratios_must_sum_to_one(self):
        ds = self._ds(30, ["a", "b"])
        with pytest.raises(corpus.CorpusError):
            corpus.split(ds, (0.5, 0.2, 0.2), seed=0)

    def test_tiny_class_rejected(self):
        docs = tuple(corpus.LabeledDocument(text=f"t{i}", label="big")
                     for i in range(10))
        docs += (corpus.LabeledDocument(text="x", label="rare"),)
        with pytest.raises(corpus.CorpusError, match="rare"):
            corpus.split(corpus.Dataset(documents=docs), seed=0)


class TestClassDistribution:
    def test_counts(self):
        docs = tuple(corpus.LabeledDocument(text=t, label=l)
                     for t, l in [("1", "a"), ("2", "a"), ("3", "b")])
        dist = corpus.class_distribution(corpus.Dataset(documents=docs))
        assert dist == {"a": 2, "b": 1}
        assert sum(dist.values()) == 3
