"""File format round-trips, uniform sampling and the synthetic generator."""

import dataclasses
import json

import numpy as np
import pytest

from scgebd import data
from scgebd.data import FeatureSequence, SyntheticSpec
from scgebd.errors import ConfigError, InputError


def make_seq(t=10, c=4, fps=2.0, seed=0, vid="clip"):
    rng = np.random.default_rng(seed)
    return FeatureSequence(video_id=vid,
                           features=rng.normal(0, 1, (t, c)).astype(np.float32),
                           timestamps=data.default_timestamps(t, fps), fps=fps)


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        seq = make_seq()
        path = str(tmp_path / "clip.scxf")
        data.write_features(path, seq)
        back = data.read_features(path)
        assert back.video_id == "clip"
        assert back.fps == 2.0
        assert back.features.tobytes() == seq.features.tobytes()
        np.testing.assert_allclose(back.timestamps, seq.timestamps)

    def test_truncated_payload(self, tmp_path):
        path = str(tmp_path / "clip.scxf")
        data.write_features(path, make_seq())
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-8])
        with pytest.raises(InputError, match="truncated"):
            data.read_features(path)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.scxf")
        open(path, "wb").write(b"WHAT" + b"\0" * 40)
        with pytest.raises(InputError, match="magic"):
            data.read_features(path)

    def test_trailing_bytes(self, tmp_path):
        path = str(tmp_path / "clip.scxf")
        data.write_features(path, make_seq())
        with open(path, "ab") as fh:
            fh.write(b"zz")
        with pytest.raises(InputError, match="trailing"):
            data.read_features(path)


class TestAnnotationJson:
    def test_round_trip(self, tmp_path):
        _, annots = data.generate_dataset(SyntheticSpec(seed=3, num_videos=3))
        path = str(tmp_path / "annots.json")
        data.write_annotations(path, annots)
        back = data.read_annotations(path)
        assert set(back) == set(annots)
        for vid in annots:
            assert back[vid].duration == annots[vid].duration
            assert back[vid].raters == annots[vid].raters

    def test_timestamp_beyond_duration_names_rater(self, tmp_path):
        path = str(tmp_path / "annots.json")
        doc = {"v": {"duration": 5.0, "raters": {"rater_1": [6.0]}}}
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(InputError, match="rater_1"):
            data.read_annotations(path)

    def test_malformed_json_has_location(self, tmp_path):
        path = str(tmp_path / "annots.json")
        open(path, "w").write('{"v": {"duration": 5.0,\n  "raters": }}')
        with pytest.raises(InputError, match="line 2"):
            data.read_annotations(path)

    def test_missing_fields(self, tmp_path):
        path = str(tmp_path / "annots.json")
        open(path, "w").write('{"v": {"duration": 5.0}}')
        with pytest.raises(InputError, match="raters"):
            data.read_annotations(path)


class TestPredictionJson:
    def test_round_trip(self, tmp_path):
        preds = {"a": [1.0, 2.5], "b": []}
        path = str(tmp_path / "preds.json")
        data.write_predictions(path, preds)
        assert data.read_predictions(path) == preds

    def test_unsorted_rejected(self, tmp_path):
        path = str(tmp_path / "preds.json")
        open(path, "w").write('{"a": [3.0, 1.0]}')
        with pytest.raises(InputError, match="sorted"):
            data.read_predictions(path)

    def test_non_list_rejected(self, tmp_path):
        path = str(tmp_path / "preds.json")
        open(path, "w").write('{"a": {"t": 1}}')
        with pytest.raises(InputError, match="list"):
            data.read_predictions(path)


class TestSampleUniform:
    def test_identity_when_lengths_match(self):
        seq = make_seq(t=100)
        out = data.sample_uniform(seq, 100)
        assert out.features is seq.features

    def test_stride_two(self):
        seq = make_seq(t=199)
        out = data.sample_uniform(seq, 100)
        np.testing.assert_array_equal(out.features, seq.features[0:199:2])
        np.testing.assert_array_equal(out.timestamps, seq.timestamps[0:199:2])

    def test_single_source_frame_replicates(self):
        seq = make_seq(t=1)
        out = data.sample_uniform(seq, 100)
        assert out.features.shape[0] == 100
        np.testing.assert_array_equal(out.features, np.tile(seq.features[0], (100, 1)))


class TestSyntheticGenerator:
    def test_noiseless_segments_and_exact_raters(self):
        spec = SyntheticSpec(seed=5, noise_sigma=0.0, jitter_sigma=0.0,
                             transition_frames=0)
        seq, annotation, boundaries = data.generate_video(spec, 0)
        segments = np.split(seq.features, boundaries)
        for segment in segments:
            np.testing.assert_array_equal(segment, np.tile(segment[0], (len(segment), 1)))
        expected = [float(b) / spec.fps for b in boundaries]
        for _, stamps in annotation.raters:
            assert stamps == expected

    def test_same_seed_byte_identical(self):
        a_seq, a_ann, _ = data.generate_video(SyntheticSpec(seed=9), 4)
        b_seq, b_ann, _ = data.generate_video(SyntheticSpec(seed=9), 4)
        assert a_seq.features.tobytes() == b_seq.features.tobytes()
        assert a_ann.raters == b_ann.raters

    def test_single_segment_no_boundaries(self):
        spec = SyntheticSpec(seed=1, segments_min=1, segments_max=1)
        _, annotation, boundaries = data.generate_video(spec, 0)
        assert len(boundaries) == 0
        for _, stamps in annotation.raters:
            assert stamps == []

    def test_transitions_blend_linearly(self):
        spec = SyntheticSpec(seed=2, noise_sigma=0.0, transition_frames=2)
        seq, _, boundaries = data.generate_video(spec, 0)
        b = int(boundaries[0])
        mid = seq.features[b]  # center of the blend: equal mix
        lo, hi = seq.features[b - 3], seq.features[b + 3]
        np.testing.assert_allclose(mid, 0.5 * (lo + hi), atol=1e-5)

    def test_latent_projection_dimension(self):
        spec = SyntheticSpec(seed=3, latent_dim=4, channels=32)
        seq, _, _ = data.generate_video(spec, 0)
        assert seq.features.shape == (100, 32)

    def test_expected_boundary_count(self):
        spec = SyntheticSpec(seed=7, num_videos=1000)
        total = 0
        for i in range(1000):
            _, _, boundaries = data.generate_video(spec, i)
            total += len(boundaries)
        mean = total / 1000.0
        expected = (spec.segments_min + spec.segments_max) / 2.0 - 1.0
        assert abs(mean - expected) / expected < 0.05

    def test_annotations_validate(self):
        _, annots = data.generate_dataset(SyntheticSpec(seed=11, num_videos=5))
        for a in annots.values():
            a.validate()

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(segments_min=4, segments_max=2).validate()
        with pytest.raises(ConfigError):
            SyntheticSpec(num_videos=0).validate()
        with pytest.raises(ConfigError):
            SyntheticSpec(length=20, segments_max=6, min_segment_frames=5).validate()
        with pytest.raises(ConfigError):
            SyntheticSpec(fps=0.0).validate()
        with pytest.raises(ConfigError):
            SyntheticSpec(noise_sigma=-0.1).validate()

    def test_spec_is_dataclass_with_defaults(self):
        spec = SyntheticSpec()
        assert dataclasses.asdict(spec)["length"] == 100
