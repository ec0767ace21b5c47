import json
import struct

import numpy as np
import pytest

from evcap.errors import FormatError, ValidationError
from evcap.features_io import (SYNTH_SILENCE, ClipRecord, Manifest, decode_features, encode_features,
                               load_event_probs, load_features, load_manifest, oversample,
                               save_features, save_manifest, synth_clip, synthetic_caption,
                               synthetic_vocabulary, write_synthetic_split)


def write_clip(tmp_path, cid, n_caps=5, probs=True):
    save_features(tmp_path / f"{cid}.afc", np.ones((2, 3), dtype=np.float32))
    obj = {"clip_id": cid, "feature_path": f"{cid}.afc", "captions": [f"caption {i}" for i in range(n_caps)]}
    if probs:
        obj["event_probs"] = [0.0] * 527
    return json.dumps(obj) + "\n"


class TestFeatureFile:
    def test_tiny_roundtrip(self, tmp_path):
        m = np.array([[1.0, 2.0]], dtype=np.float32)
        save_features(tmp_path / "f.afc", m)
        raw = (tmp_path / "f.afc").read_bytes()
        assert raw == b"AFC1" + struct.pack("<II", 1, 2) + struct.pack("<ff", 1.0, 2.0)
        back = load_features(tmp_path / "f.afc")
        assert back.dtype == np.float32 and back.tobytes() == m.tobytes()

    def test_truncated_names_byte_counts(self):
        data = encode_features(np.ones((3, 4)))[:-3]
        with pytest.raises(FormatError) as err:
            decode_features(data)
        assert "expected 60 bytes" in str(err.value) and "found 57" in str(err.value)
        assert err.value.offset == 57

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            decode_features(encode_features(np.ones((1, 1))) + b"\0")

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            decode_features(b"AFC2" + encode_features(np.ones((1, 1)))[4:])
        assert err.value.offset == 0

    def test_zero_dims(self):
        with pytest.raises(FormatError):
            decode_features(b"AFC1" + struct.pack("<II", 0, 4))

    def test_dim_overflow(self):
        with pytest.raises(FormatError):
            decode_features(b"AFC1" + struct.pack("<II", 2**32 - 1, 2**32 - 1) + b"\0" * 8)

    def test_nan_payload(self):
        data = bytearray(encode_features(np.ones((1, 2))))
        data[16:20] = struct.pack("<f", float("nan"))
        with pytest.raises(FormatError) as err:
            decode_features(bytes(data))
        assert err.value.offset == 16

    def test_fuzz_roundtrip(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            t, d = rng.integers(1, 20, size=2)
            m = (rng.normal(size=(t, d)) * 10.0 ** rng.integers(-30, 30)).astype(np.float32)
            back = decode_features(encode_features(m))
            assert back.tobytes() == m.tobytes()


class TestManifest:
    def test_three_clip_fixture(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("".join(write_clip(tmp_path, c) for c in ("a", "b", "c")))
        m = load_manifest(tmp_path / "m.jsonl")
        assert [r.clip_id for r in m] == ["a", "b", "c"]
        assert m.records[0].features().shape == (2, 3)

    def test_four_captions_cites_clip(self, tmp_path):
        (tmp_path / "m.jsonl").write_text(write_clip(tmp_path, "ok") + write_clip(tmp_path, "short", 4))
        with pytest.raises(ValidationError) as err:
            load_manifest(tmp_path / "m.jsonl")
        assert err.value.offenders == ["short"] and "short" in str(err.value)

    def test_all_problems_reported(self, tmp_path):
        lines = write_clip(tmp_path, "dup") + write_clip(tmp_path, "dup") + write_clip(tmp_path, "x", 6)
        lines += json.dumps({"clip_id": "gone", "feature_path": "nope.afc", "captions": ["c"] * 5,
                             "event_probs": [0.0] * 527}) + "\n"
        (tmp_path / "m.jsonl").write_text(lines)
        with pytest.raises(ValidationError) as err:
            load_manifest(tmp_path / "m.jsonl")
        assert set(err.value.offenders) == {"dup", "x", "gone"}

    def test_missing_probs(self, tmp_path):
        (tmp_path / "m.jsonl").write_text(write_clip(tmp_path, "a", probs=False))
        with pytest.raises(ValidationError):
            load_manifest(tmp_path / "m.jsonl")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("{not json\n")
        with pytest.raises(FormatError):
            load_manifest(tmp_path / "m.jsonl")

    def test_empty(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("\n")
        with pytest.raises(ValidationError):
            load_manifest(tmp_path / "m.jsonl")

    def test_probs_file_forms(self, tmp_path):
        probs = np.linspace(0, 1, 527)
        (tmp_path / "p.json").write_text(json.dumps(probs.tolist()))
        save_features(tmp_path / "p.afc", probs[None, :])
        np.testing.assert_array_equal(load_event_probs(tmp_path / "p.json"), probs)
        np.testing.assert_array_equal(load_event_probs(tmp_path / "p.afc"), probs.astype(np.float32))

    def test_save_load_roundtrip(self, tmp_path):
        path = write_synthetic_split(tmp_path, "train", [(0,), (1, 2), ()], seed=4)
        m = load_manifest(path)
        sub = tmp_path / "copy"
        sub.mkdir()
        save_manifest(m, sub / "m.jsonl")
        again = load_manifest(sub / "m.jsonl")
        for a, b in zip(m, again):
            assert a.clip_id == b.clip_id and a.captions == b.captions
            assert a.features().tobytes() == b.features().tobytes()
            assert a.probs().tobytes() == b.probs().tobytes()

    def test_probs_path_roundtrip(self, tmp_path):
        save_features(tmp_path / "f.afc", np.ones((1, 1)))
        (tmp_path / "p.json").write_text(json.dumps([0.5] * 527))
        rec = ClipRecord("c", tmp_path / "f.afc", ["x"] * 5, event_probs_path=tmp_path / "p.json")
        save_manifest(Manifest("s", [rec]), tmp_path / "m.jsonl")
        assert "event_probs_path" in (tmp_path / "m.jsonl").read_text()
        assert load_manifest(tmp_path / "m.jsonl").records[0].probs()[0] == 0.5


class TestOversample:
    def test_one_clip(self, tmp_path):
        (tmp_path / "m.jsonl").write_text(write_clip(tmp_path, "a"))
        assert oversample(load_manifest(tmp_path / "m.jsonl")) == [("a", k) for k in range(5)]

    def test_clip_major_order(self):
        recs = [ClipRecord(f"c{i}", None, ["x"] * 5) for i in range(3840)]
        items = oversample(Manifest("dev", recs))
        assert len(items) == 19200
        assert items[:6] == [("c0", 0), ("c0", 1), ("c0", 2), ("c0", 3), ("c0", 4), ("c1", 0)]


class TestSynthetic:
    def test_same_seed_identical(self):
        a, b = synth_clip(5, 4, 3), synth_clip(5, 4, 3)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes() and a[2] == b[2]

    def test_different_seeds_differ(self):
        assert np.any(synth_clip(1, 4, 3)[0] != synth_clip(2, 4, 3)[0])

    def test_ranges_and_template(self):
        vocab = synthetic_vocabulary()
        for seed in range(50):
            feats, probs, caps = synth_clip(seed, 6, 5)
            assert feats.dtype == np.float32 and np.all(np.abs(feats) <= 1)
            assert np.all((probs >= 0) & (probs <= 1))
            assert len(caps) == 5 and set(caps[0].split()) <= vocab

    def test_caption_is_function_of_events(self):
        for active in [(0,), (1, 3), ()]:
            _, probs, caps = synth_clip(9, 2, 2, active=active)
            assert set(np.flatnonzero(probs > 0.1)) == set(active)
            assert caps[0] == synthetic_caption(active)
        assert synthetic_caption(()) == SYNTH_SILENCE
        assert synthetic_caption((3, 1)) == "heavy rain with piano music"
