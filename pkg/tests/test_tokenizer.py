import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stacktext import tokenizer
from stacktext.tokenizer import NUM_SPECIALS, PAD, SOS, UNK


class TestTrainBpe:
    def test_first_merge_is_lo(self):
        model = tokenizer.train_bpe(["low", "low", "lower"], vocab_size=100)
        assert model.merges[0] == ("l", "o")

    def test_no_budget_means_no_merges(self):
        corpus = ["ab", "ab"]
        alphabet = len(set("".join(corpus)))
        model = tokenizer.train_bpe(corpus, vocab_size=alphabet + NUM_SPECIALS)
        assert model.merges == []

    def test_deterministic_retraining(self):
        corpus = ["the app is great", "the app crashed", "great app"]
        m1 = tokenizer.train_bpe(corpus, vocab_size=60)
        m2 = tokenizer.train_bpe(corpus, vocab_size=60)
        assert m1.merges == m2.merges and m1.vocab == m2.vocab

    def test_empty_corpus_rejected(self):
        with pytest.raises(tokenizer.TokenizerError):
            tokenizer.train_bpe([], vocab_size=50)

    def test_vocab_size_too_small(self):
        with pytest.raises(tokenizer.TokenizerError):
            tokenizer.train_bpe(["abcdef"], vocab_size=4)

    def test_tie_break_lexicographic(self):
        # pairs (a,b) and (c,d) both occur twice; (a,b) sorts first
        model = tokenizer.train_bpe(["ab", "cd", "ab", "cd"],
                                    vocab_size=NUM_SPECIALS + 4 + 1)
        assert model.merges == [("a", "b")]

    def test_vocab_never_exceeds_budget(self):
        model = tokenizer.train_bpe(["aaa bbb ccc"] * 3, vocab_size=12)
        assert model.vocab_size <= 12


class TestEncode:
    def test_empty_text(self):
        model = tokenizer.train_bpe(["abc"], vocab_size=50)
        seq = tokenizer.encode(model, "", 6)
        assert seq.ids == [SOS, PAD, PAD, PAD, PAD, PAD]
        assert seq.attention_mask == [1, 0, 0, 0, 0, 0]

    def test_merge_applied(self):
        model = tokenizer.train_bpe(["low", "low", "lower"],
                                    vocab_size=NUM_SPECIALS + 5 + 1)  # one merge
        assert model.merges == [("l", "o")]
        seq = tokenizer.encode(model, "lowlow", 8)
        lo, w = model.vocab["lo"], model.vocab["w"]
        assert seq.ids == [SOS, lo, w, lo, w, PAD, PAD, PAD]

    def test_byte_mode_has_no_unknowns(self):
        model = tokenizer.train_bpe(["hello"], vocab_size=300, mode="byte")
        seq = tokenizer.encode(model, "añ€x", 32)
        assert UNK not in seq.ids

    def test_char_mode_oov_maps_to_unk(self):
        model = tokenizer.train_bpe(["abc"], vocab_size=50, mode="char")
        seq = tokenizer.encode(model, "axb", 8)
        assert seq.ids[2] == UNK

    def test_truncation_to_length(self):
        model = tokenizer.train_bpe(["abcdefgh"], vocab_size=50)
        seq = tokenizer.encode(model, "abcdefgh" * 4, 5)
        assert len(seq.ids) == 5 and all(m == 1 for m in seq.attention_mask)

    def test_mask_is_prefix_of_ones(self):
        model = tokenizer.train_bpe(["some text"], vocab_size=60)
        seq = tokenizer.encode(model, "some", 10)
        mask = seq.attention_mask
        assert mask == sorted(mask, reverse=True)
        for tid, m in zip(seq.ids, mask):
            assert (tid == PAD) == (m == 0)


class TestDecode:
    def test_all_pad_sequence(self):
        model = tokenizer.train_bpe(["abc"], vocab_size=50)
        seq = tokenizer.TokenSequence(ids=[PAD] * 4, attention_mask=[0] * 4)
        assert tokenizer.decode(model, seq) == ""

    def test_byte_round_trip(self):
        model = tokenizer.train_bpe(["hello world"], vocab_size=300, mode="byte")
        for text in ["hello", "unseen chars: ñ€", "a b c"]:
            seq = tokenizer.encode(model, text, 64)
            assert tokenizer.decode(model, seq) == text

    def test_char_oov_replacement_marker(self):
        model = tokenizer.train_bpe(["abc"], vocab_size=50, mode="char")
        seq = tokenizer.encode(model, "aXc", 8)
        assert tokenizer.decode(model, seq) == "a" + tokenizer.REPLACEMENT + "c"

    def test_invalid_id_rejected(self):
        model = tokenizer.train_bpe(["ab"], vocab_size=50)
        seq = tokenizer.TokenSequence(ids=[SOS, 999], attention_mask=[1, 1])
        with pytest.raises(tokenizer.TokenizerError):
            tokenizer.decode(model, seq)

    @settings(max_examples=60)
    @given(st.text(min_size=0, max_size=15))
    def test_byte_round_trip_property(self, text):
        model = tokenizer.train_bpe(["training text"], vocab_size=300, mode="byte")
        seq = tokenizer.encode(model, text, 64)
        if sum(seq.attention_mask) < 64:  # untruncated
            assert tokenizer.decode(model, seq) == text


class TestSpecials:
    def test_specials_never_in_body(self):
        corpus = ["repeated text to merge", "more text here to merge"]
        model = tokenizer.train_bpe(corpus, vocab_size=80)
        seq = tokenizer.encode(model, corpus[0], 32)
        body_end = sum(seq.attention_mask)
        assert seq.ids[0] == SOS
        for tid in seq.ids[1:body_end]:
            assert tid >= NUM_SPECIALS or tid == UNK
        assert all(t == PAD for t in seq.ids[body_end:])


class TestSerialization:
    @pytest.mark.parametrize("mode,vocab_size", [("char", 80), ("byte", 300)])
    def test_save_load_round_trip(self, tmp_path, mode, vocab_size):
        model = tokenizer.train_bpe(["low lower lowest", "slow slower"],
                                    vocab_size=vocab_size, mode=mode)
        path = tmp_path / "bpe.tsv"
        tokenizer.save_bpe(model, path)
        loaded = tokenizer.load_bpe(path)
        assert loaded.mode == model.mode
        assert loaded.merges == model.merges
        assert loaded.vocab == model.vocab
        text = "slow low"
        assert tokenizer.encode(loaded, text, 32).ids == \
            tokenizer.encode(model, text, 32).ids

    def test_escaped_symbols_survive(self, tmp_path):
        model = tokenizer.train_bpe(["a\tb\nc a\tb\nc"], vocab_size=60, mode="char")
        path = tmp_path / "bpe.tsv"
        tokenizer.save_bpe(model, path)
        assert tokenizer.load_bpe(path).vocab == model.vocab
