import pytest
from hypothesis import given
from hypothesis import strategies as st

from evcap.errors import FormatError, InvalidArgument
from evcap.text_prep import (EOS, PAD, SOS, UNK, Vocabulary, build_vocab, normalize_caption,
                             partial_caption_pairs, strip_markers, strip_punctuation)


class TestNormalize:
    def test_basic(self):
        assert normalize_caption("A Dog barks!") == [SOS, "a", "dog", "barks", EOS]

    def test_empty_caption(self):
        assert normalize_caption("") == [SOS, EOS]
        assert normalize_caption("?!...") == [SOS, EOS]

    def test_collapses_whitespace(self):
        assert normalize_caption("  rain \t on\n  roof ") == [SOS, "rain", "on", "roof", EOS]

    def test_unicode_punctuation(self):
        assert normalize_caption("«Birds» sing¿loudly…") == [SOS, "birds", "singloudly", EOS]

    def test_apostrophe_joins(self):
        assert normalize_caption("The dog's bark") == [SOS, "the", "dogs", "bark", EOS]

    @given(st.text())
    def test_idempotent_on_words(self, text):
        toks = normalize_caption(text)
        assert toks[0] == SOS and toks[-1] == EOS
        again = normalize_caption(" ".join(toks[1:-1]))
        assert again == toks

    @given(st.text())
    def test_no_punctuation_survives(self, text):
        body = "".join(normalize_caption(text)[1:-1])
        assert strip_punctuation(body) == body


class TestVocabulary:
    def test_reserved_ids_and_order(self):
        v = build_vocab([[SOS, "b", "a", EOS], [SOS, "a", "c", EOS]])
        assert v.tokens == [PAD, SOS, EOS, UNK, "b", "a", "c"]
        assert [v.id(t) for t in (PAD, SOS, EOS, UNK)] == [0, 1, 2, 3]

    def test_unknown_maps_to_unk(self):
        v = build_vocab([[SOS, "a", EOS]])
        assert v.encode(["a", "zebra"]) == [4, 3]

    def test_encode_decode_roundtrip(self):
        caps = [normalize_caption("rain falls on a roof"), normalize_caption("a dog barks")]
        v = build_vocab(caps)
        for c in caps:
            assert v.decode(v.encode(c)) == c

    def test_empty_corpus(self):
        with pytest.raises(InvalidArgument):
            build_vocab([])

    def test_save_load(self, tmp_path):
        v = build_vocab([normalize_caption("water drips slowly")])
        v.save(tmp_path / "v.txt")
        assert (tmp_path / "v.txt").read_bytes().count(b"\r") == 0
        assert Vocabulary.load(tmp_path / "v.txt") == v

    def test_load_rejects_bad_header(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n")
        with pytest.raises(FormatError):
            Vocabulary.load(tmp_path / "v.txt")

    def test_duplicates_rejected(self):
        with pytest.raises(InvalidArgument):
            Vocabulary([PAD, SOS, EOS, UNK, "x", "x"])


class TestPairs:
    def test_pairs_of_five_tokens(self):
        seq = [SOS, "a", "dog", "barks", EOS]
        pairs = partial_caption_pairs(seq)
        assert len(pairs) == 4
        assert pairs[0] == ([SOS], "a")
        assert pairs[-1] == ([SOS, "a", "dog", "barks"], EOS)

    def test_minimal_caption(self):
        assert partial_caption_pairs([SOS, EOS]) == [([SOS], EOS)]

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            partial_caption_pairs([SOS])

    def test_strip_markers(self):
        assert strip_markers([SOS, "a", PAD, EOS]) == ["a"]
