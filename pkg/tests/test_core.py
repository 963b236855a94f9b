import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocsod.core import (
    FREE_VIEWING_INSTRUCTION,
    BinaryMask,
    BoundingBox,
    Instruction,
    ObservationMode,
    SaliencyMap,
    Sample,
    SampleSet,
    clamp_box,
    dataset_stats,
    extract_subject,
    load_manifest,
    render_instruction,
    rle_decode,
    rle_encode,
    sample_to_json_line,
    save_manifest,
    validate_sample,
)
from ocsod.errors import DuplicateId, MaskInvalid, NegativeCount, ParseError, SumMismatch

from conftest import block_mask, make_sample, random_mask
from oracles import rle_encode_ref


class TestRle:
    def test_all_zero(self):
        assert rle_encode(BinaryMask.zeros(4, 4)) == [16]

    def test_all_one(self):
        assert rle_encode(BinaryMask.full(4, 4)) == [0, 16]

    def test_top_rows(self):
        mask = block_mask(4, 4, 0, 0, 4, 2)
        assert rle_encode(mask) == [0, 8, 8]

    def test_decode_examples(self):
        assert rle_decode([16], 4, 4) == BinaryMask.zeros(4, 4)
        assert rle_decode([0, 8, 8], 4, 4) == block_mask(4, 4, 0, 0, 4, 2)

    def test_sum_mismatch(self):
        with pytest.raises(SumMismatch):
            rle_decode([15], 4, 4)

    def test_negative_count(self):
        with pytest.raises(NegativeCount):
            rle_decode([-1, 17], 4, 4)

    @given(st.data())
    @settings(max_examples=150, deadline=None)
    def test_round_trip(self, data):
        w = data.draw(st.integers(1, 24))
        h = data.draw(st.integers(1, 24))
        bits = data.draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))
        mask = BinaryMask(np.asarray(bits, dtype=bool).reshape(h, w))
        counts = rle_encode(mask)
        assert sum(counts) == w * h
        assert all(c >= 0 for c in counts)
        # interior runs are nonzero and the encoding matches the scan oracle
        assert all(c > 0 for c in counts[1:])
        assert counts == rle_encode_ref(mask.bits.tolist())
        assert rle_decode(counts, w, h) == mask


class TestInstruction:
    def test_free_viewing_template_verbatim(self):
        instr = Instruction.build(ObservationMode.FREE_VIEWING)
        assert instr.rendered_text == (
            "Identify and segment the most salient regions according to "
            "visual context, color contrast, and semantic meaning."
        )
        assert instr.subject_text is None
        assert instr.violations() == []

    def test_preference_template(self):
        subject = "A foodie who loves freshly baked goods and flavorsome bread"
        instr = Instruction.build(ObservationMode.PREFERENCE, subject)
        assert instr.rendered_text == (
            "Here is the observer's portrait: {" + subject + "}. Identify and "
            "segment the most salient regions according to the observer's "
            "interest and preference."
        )
        assert extract_subject(ObservationMode.PREFERENCE, instr.rendered_text) == subject

    def test_intent_template(self):
        subject = "I want to check and reply to my email"
        instr = Instruction.build(ObservationMode.INTENT, subject)
        assert instr.rendered_text == (
            "Here is the observer's intent: {" + subject + "}. Identify and "
            "segment the most salient regions according to this intent."
        )
        assert extract_subject(ObservationMode.INTENT, instr.rendered_text) == subject

    def test_free_viewing_rejects_subject(self):
        with pytest.raises(ValueError):
            render_instruction(ObservationMode.FREE_VIEWING, "anything")

    def test_subject_required(self):
        with pytest.raises(ValueError):
            render_instruction(ObservationMode.INTENT, "")

    @given(st.text(min_size=1, max_size=80))
    @settings(max_examples=60, deadline=None)
    def test_subject_round_trip(self, subject):
        for mode in (ObservationMode.PREFERENCE, ObservationMode.INTENT):
            rendered = render_instruction(mode, subject)
            assert extract_subject(mode, rendered) == subject


class TestTypes:
    def test_mask_immutable(self):
        mask = BinaryMask.zeros(2, 2)
        with pytest.raises(ValueError):
            mask.bits[0, 0] = True

    def test_map_range_checked(self):
        with pytest.raises(ValueError):
            SaliencyMap(np.array([[1.2]]))

    def test_binarize_strict(self):
        m = SaliencyMap(np.array([[0.0, 0.5, 0.6, 1.0]]))
        assert m.binarize(0.5).bits.tolist() == [[False, False, True, True]]

    def test_box_invariants(self):
        with pytest.raises(ValueError):
            BoundingBox(2, 0, 2, 4)
        with pytest.raises(ValueError):
            BoundingBox(-1, 0, 2, 4)
        box = BoundingBox(1, 2, 3, 5)
        assert box.width == 2 and box.height == 3
        assert box.within(3, 5) and not box.within(2, 5)

    def test_clamp_box(self):
        assert clamp_box(-3, -1, 5, 4, 4, 4) == BoundingBox(0, 0, 4, 4)
        assert clamp_box(5, 5, 9, 9, 4, 4) is None  # degenerate after clamping

    def test_sample_set_rejects_duplicates(self):
        s = make_sample("dup")
        with pytest.raises(DuplicateId):
            SampleSet((s, s))


class TestValidate:
    def test_valid_sample_empty_report(self):
        report = validate_sample(make_sample(), image_dims=(16, 16))
        assert report.ok
        assert report.violations == ()
        assert report.area_ratio == pytest.approx(64 / 256)

    def test_empty_gt_flagged(self):
        sample = Sample(
            "s", "img.png", ObservationMode.FREE_VIEWING,
            Instruction.build(ObservationMode.FREE_VIEWING),
            BinaryMask.zeros(4, 4),
        )
        report = validate_sample(sample)
        assert "empty ground truth" in report.violations

    def test_free_viewing_with_subject_flagged(self):
        bad = Instruction(ObservationMode.FREE_VIEWING, "oops", FREE_VIEWING_INSTRUCTION)
        sample = Sample("s", "img.png", ObservationMode.FREE_VIEWING, bad, block_mask(4, 4, 0, 0, 2, 2))
        report = validate_sample(sample)
        assert any("mode/template mismatch" in v for v in report.violations)

    def test_dimension_mismatch_flagged(self):
        report = validate_sample(make_sample(), image_dims=(8, 8))
        assert any("does not match image" in v for v in report.violations)

    def test_dataset_stats(self):
        samples = [
            make_sample("a", image_ref="x.png"),
            make_sample("b", image_ref="x.png"),
            make_sample("c", image_ref="y.png"),
        ]
        stats = dataset_stats(samples)
        assert stats["pairs"] == 3
        assert stats["images"] == 2
        assert stats["pairs_per_image_max"] == 2
        assert stats["pairs_per_image_mean"] == pytest.approx(1.5)


class TestManifest:
    def _write(self, tmp_path, lines):
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def test_load_three_valid(self, tmp_path):
        lines = [sample_to_json_line(make_sample(f"s{i}")) for i in range(3)]
        loaded = load_manifest(self._write(tmp_path, lines))
        assert len(loaded) == 3
        assert [s.sample_id for s in loaded] == ["s0", "s1", "s2"]

    def test_mask_invalid_carries_line(self, tmp_path):
        good = sample_to_json_line(make_sample("s0"))
        bad = json.loads(sample_to_json_line(make_sample("s1")))
        bad["mask"]["counts"] = [7]  # sums to 7, not 256
        path = self._write(tmp_path, [good, json.dumps(bad)])
        with pytest.raises(MaskInvalid) as exc_info:
            load_manifest(path)
        assert exc_info.value.line == 2

    def test_duplicate_id(self, tmp_path):
        line = sample_to_json_line(make_sample("same"))
        with pytest.raises(DuplicateId):
            load_manifest(self._write(tmp_path, [line, line]))

    def test_parse_error_on_bad_json(self, tmp_path):
        with pytest.raises(ParseError) as exc_info:
            load_manifest(self._write(tmp_path, ["{not json"]))
        assert exc_info.value.line == 1

    def test_empty_gt_rejected_at_load(self, tmp_path):
        obj = json.loads(sample_to_json_line(make_sample("s0")))
        obj["mask"] = {"w": 4, "h": 4, "counts": [16]}
        with pytest.raises(MaskInvalid):
            load_manifest(self._write(tmp_path, [json.dumps(obj)]))

    def test_template_mismatch_rejected_at_load(self, tmp_path):
        obj = json.loads(sample_to_json_line(make_sample("s0")))
        obj["instruction"] = "do whatever"
        with pytest.raises(ParseError):
            load_manifest(self._write(tmp_path, [json.dumps(obj)]))

    def test_round_trip_idempotent(self, tmp_path, rng):
        samples = [
            make_sample(f"s{i}", mask=random_mask(rng, 6, 5), image_ref=f"im{i % 2}.png")
            for i in range(6)
        ]
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_manifest(samples, p1)
        loaded = load_manifest(p1)
        save_manifest(loaded.samples, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert load_manifest(p2).samples == loaded.samples

    def test_loaded_samples_satisfy_invariants(self, tmp_path, rng):
        samples = [make_sample(f"s{i}", mask=random_mask(rng, 7, 7)) for i in range(5)]
        path = tmp_path / "m.jsonl"
        save_manifest(samples, path)
        for s in load_manifest(path):
            assert validate_sample(s).ok
