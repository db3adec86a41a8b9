import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrfer.data import (
    EMOTIONS, FEA_COLLAPSED, DatasetBundle, ImageObservation, LabeledSample, SynthConfig, class_counts,
    compute_class_weights, fea_matrix, format_split_summary, generate_synthetic, label_index, label_name,
    labels_of, load_fea_dataset, load_image_observations, pair_multimodal, parse_image_record,
    save_fea_dataset, save_image_observations, split_summary, weights_from_counts,
)
from vrfer.errors import (
    DataError, DuplicateIdError, FeaLengthError, FeaRangeError, FeatureLengthError, MissingClassError,
    PairingError, RecordError, SimplexError, UnknownLabelError, UnknownSplitError,
)


def _record(sid="a", label="happiness", split="train", fea=None, **extra):
    rec = {"id": sid, "participant": "p01", "split": split, "label": label,
           "fea": [0.5] * 63 if fea is None else fea}
    rec.update(extra)
    return rec


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestLabels:
    def test_bijection(self):
        for i, name in enumerate(EMOTIONS):
            assert label_index(name) == i
            assert label_name(i) == name
        assert EMOTIONS[0] == "anger" and EMOTIONS[-1] == "surprise"


class TestLoadFea:
    def test_singleton(self, tmp_path):
        bundle = load_fea_dataset(_write(tmp_path / "d.jsonl", [_record()]))
        assert len(bundle) == 1
        assert bundle.counts()["train"].tolist() == [0, 0, 0, 1, 0, 0, 0]
        assert bundle.train[0].fea.shape == (63,)

    def test_short_vector(self, tmp_path):
        path = _write(tmp_path / "d.jsonl", [_record("a"), _record("b", fea=[0.1] * 62)])
        with pytest.raises(FeaLengthError, match="fea length 62 ≠ 63") as info:
            load_fea_dataset(path)
        assert info.value.line == 2
        assert info.value.field == "fea"
        assert ":2:" in str(info.value)

    @pytest.mark.parametrize("bad,error,field", [
        (_record(fea=[0.5] * 62 + [1.5]), FeaRangeError, "fea"),
        (_record(label="contempt"), UnknownLabelError, "label"),
        (_record(split="holdout"), UnknownSplitError, "split"),
        ({"id": "a", "split": "train", "label": "fear"}, RecordError, "fea"),
        (_record(fea=[0.5] * 62 + [float("nan")]), RecordError, "fea"),
    ])
    def test_errors_carry_line_and_field(self, tmp_path, bad, error, field):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(_record("ok")) + "\n" + json.dumps(bad) + "\n", encoding="utf-8")
        with pytest.raises(error) as info:
            load_fea_dataset(path)
        assert (info.value.line, info.value.field) == (2, field)
        assert f"field '{field}'" in str(info.value)

    def test_duplicate_id(self, tmp_path):
        path = _write(tmp_path / "d.jsonl", [_record("x"), _record("y"), _record("x")])
        with pytest.raises(DuplicateIdError, match="first on line 1") as info:
            load_fea_dataset(path)
        assert info.value.line == 3

    def test_bad_json(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(_record()) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(RecordError, match=":2:"):
            load_fea_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_fea_dataset(tmp_path / "absent.jsonl")

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("\n" + json.dumps(_record()) + "\n\n", encoding="utf-8")
        assert len(load_fea_dataset(path)) == 1

    def test_round_trip(self, tmp_path, small_easy):
        bundle, _, _ = small_easy
        first = tmp_path / "a.jsonl"
        save_fea_dataset(bundle, first)
        loaded = load_fea_dataset(first)
        assert [s.id for s in loaded.samples] == [s.id for s in bundle.samples]
        np.testing.assert_array_equal(fea_matrix(loaded.samples), fea_matrix(bundle.samples))
        second = tmp_path / "b.jsonl"
        save_fea_dataset(loaded, second)
        assert first.read_bytes() == second.read_bytes()


class TestClassWeights:
    def test_balanced_is_ones(self, small_easy):
        np.testing.assert_array_equal(compute_class_weights(small_easy[0].train), np.ones(7))

    def test_degenerate_uniform(self):
        np.testing.assert_array_equal(weights_from_counts([1] * 7), np.ones(7))

    def test_published_ratio(self, published_shaped):
        w = compute_class_weights(published_shaped[0].train)
        assert w[0] / w[4] == pytest.approx(197 / 66, rel=1e-12)
        assert round(w[0] / w[4], 4) == 2.9848

    def test_missing_class_named(self):
        samples = [LabeledSample(f"s{c}", "p", "train", c, np.zeros(63)) for c in range(6)]
        with pytest.raises(MissingClassError, match="surprise"):
            compute_class_weights(samples)

    @given(st.lists(st.integers(1, 10_000), min_size=7, max_size=7))
    def test_weighted_total_equals_n(self, counts):
        w = weights_from_counts(counts)
        assert float(np.dot(counts, w)) == pytest.approx(sum(counts), abs=1e-9)


class TestImageObservations:
    def test_one_hot_unchanged(self):
        obs = parse_image_record({"sample_id": "a", "view": "central", "probs": [1, 0, 0, 0, 0, 0, 0]})
        np.testing.assert_array_equal(obs.probs, np.eye(7)[0])

    def test_rejects_sum_point_nine(self):
        with pytest.raises(SimplexError, match="0.9"):
            parse_image_record({"sample_id": "a", "view": "side", "probs": [0.9] + [0.0] * 6})

    def test_renormalizes_within_tolerance(self):
        obs = parse_image_record({"sample_id": "a", "view": "side", "probs": [0.50004, 0.5] + [0.0] * 5})
        assert obs.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_zero_features_accepted(self):
        obs = parse_image_record({"sample_id": "a", "view": "central", "features": [0.0] * 1280})
        assert obs.probs is None
        assert obs.features.shape == (1280,)

    def test_feature_length(self):
        with pytest.raises(FeatureLengthError):
            parse_image_record({"sample_id": "a", "view": "central", "features": [0.0] * 1279})

    @pytest.mark.parametrize("rec", [
        {"sample_id": "a", "view": "central"},
        {"sample_id": "a", "view": "top", "probs": [1, 0, 0, 0, 0, 0, 0]},
        {"sample_id": "a", "view": "central", "probs": [-0.1, 1.1, 0, 0, 0, 0, 0]},
    ])
    def test_invalid(self, rec):
        with pytest.raises(RecordError):
            parse_image_record(rec)

    def test_duplicate_pair(self, tmp_path):
        rec = {"sample_id": "a", "view": "central", "probs": [1, 0, 0, 0, 0, 0, 0]}
        with pytest.raises(DuplicateIdError) as info:
            load_image_observations(_write(tmp_path / "o.jsonl", [rec, rec]))
        assert info.value.line == 2

    def test_round_trip(self, tmp_path, small_easy):
        _, obs, _ = small_easy
        path = tmp_path / "o.jsonl"
        save_image_observations(obs[:6], path)
        loaded = load_image_observations(path)
        for a, b in zip(obs[:6], loaded):
            assert (a.sample_id, a.view) == (b.sample_id, b.view)
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_allclose(a.probs, b.probs, rtol=0, atol=1e-15)


class TestPairing:
    def test_published_sizes(self, published_shaped):
        bundle, obs = published_shaped
        mm = pair_multimodal(bundle, obs)
        assert len(bundle) == 1727
        assert len(mm) == 3454
        assert len(mm.test) == 756
        for split in ("train", "val", "test"):
            np.testing.assert_array_equal(mm.counts()[split], 2 * bundle.counts()[split])

    def test_order_and_inheritance(self, small_easy):
        bundle, _, mm = small_easy
        assert [m.id for m in mm.samples[:4]] == [bundle.samples[0].id] * 2 + [bundle.samples[1].id] * 2
        assert [m.view for m in mm.samples[:2]] == ["central", "side"]
        assert all(m.label == m.sample.label and m.split == m.sample.split for m in mm.samples)

    def test_partial_pairing(self):
        sample = LabeledSample("a", "p", "test", 2, np.zeros(63))
        obs = [ImageObservation("a", "central", np.eye(7)[2])]
        assert len(pair_multimodal(DatasetBundle((sample,)), obs, require_both_views=False)) == 1
        with pytest.raises(PairingError, match="side"):
            pair_multimodal(DatasetBundle((sample,)), obs)

    def test_dangling_id(self):
        sample = LabeledSample("a", "p", "test", 2, np.zeros(63))
        with pytest.raises(PairingError, match="'zz'"):
            pair_multimodal(DatasetBundle((sample,)), [ImageObservation("zz", "central", np.eye(7)[0])],
                            require_both_views=False)


class TestSplitSummary:
    def test_empty(self):
        summary = split_summary(DatasetBundle(()))
        assert all(v == 0 for table in summary.values() for v in table.values())

    def test_published(self, published_shaped):
        summary = split_summary(published_shaped[0])
        assert (summary["train"]["total"], summary["val"]["total"], summary["test"]["total"]) == (964, 385, 378)
        assert summary["train"]["neutral"] == 197
        assert summary["train"]["anger"] == 66
        assert summary["all"]["total"] == 1727
        text = format_split_summary(summary)
        assert "neutral" in text and "1727" in text


class TestSynthetic:
    def test_zero_noise_equals_prototype(self):
        bundle, obs = generate_synthetic(SynthConfig(3, 2, 2, sigma=0.0, seed=4))
        x, y = fea_matrix(bundle.samples), labels_of(bundle.samples)
        for c in range(7):
            rows = x[y == c]
            np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
        assert np.all((x >= 0.2) & (x <= 0.8))
        assert len(obs) == 2 * len(bundle)

    def test_byte_identical(self, tmp_path):
        config = SynthConfig(4, 2, 2, sigma=0.1, mode="complementary", seed=11)
        for name in ("a", "b"):
            bundle, obs = generate_synthetic(config)
            save_fea_dataset(bundle, tmp_path / f"{name}.fea.jsonl")
            save_image_observations(obs, tmp_path / f"{name}.obs.jsonl")
        assert (tmp_path / "a.fea.jsonl").read_bytes() == (tmp_path / "b.fea.jsonl").read_bytes()
        assert (tmp_path / "a.obs.jsonl").read_bytes() == (tmp_path / "b.obs.jsonl").read_bytes()

    def test_seed_argument_overrides_config(self):
        a, _ = generate_synthetic(SynthConfig(2, 1, 1, seed=0), seed=5)
        b, _ = generate_synthetic(SynthConfig(2, 1, 1, seed=5))
        np.testing.assert_array_equal(fea_matrix(a.samples), fea_matrix(b.samples))

    def test_participants_do_not_span_splits(self, easy_data):
        bundle, _ = easy_data
        by_split = {s: {x.participant for x in bundle.split(s)} for s in ("train", "val", "test")}
        assert not (by_split["train"] & by_split["val"] or by_split["train"] & by_split["test"]
                    or by_split["val"] & by_split["test"])

    def test_complementary_fea_ceiling(self):
        bundle, _ = generate_synthetic(SynthConfig(2, 2, 3, sigma=0.0, mode="complementary", seed=2))
        x, y = fea_matrix(bundle.test), labels_of(bundle.test)
        groups, group_of = np.unique(x, axis=0, return_inverse=True)
        assert len(groups) == 5
        collapsed = {int(g) for g in group_of[np.isin(y, FEA_COLLAPSED)]}
        assert len(collapsed) == 1
        # every deterministic FEA-only classifier is a map from the 5 distinct inputs to labels
        best = max(np.mean(np.array(m)[group_of] == y) for m in itertools.product(range(7), repeat=5))
        assert best == pytest.approx(5 / 7, abs=1e-12)

    @pytest.mark.parametrize("kwargs", [{"sigma": -0.1}, {"per_class_train": 0}, {"mode": "hard"}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(DataError):
            SynthConfig(**kwargs)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(DataError, match="noise"):
            SynthConfig.from_dict({"noise": 0.1})

    def test_image_probs_are_simplex(self, small_easy):
        probs = np.stack([o.probs for o in small_easy[1]])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=40))
def test_class_counts_sum(labels):
    samples = [LabeledSample(f"s{i}", "p", "train", c, np.zeros(63)) for i, c in enumerate(labels)]
    counts = class_counts(samples)
    assert counts.sum() == len(labels)
    assert counts.tolist() == [labels.count(c) for c in range(7)]
