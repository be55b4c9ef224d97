import json

import numpy as np
import pytest

from phenokey.dataset import (
    Dataset,
    KeypointSet,
    parse_coco,
    serialize_coco,
    validate,
)
from phenokey.errors import (
    DatasetValidationError,
    IntegrityError,
    ParseError,
    PhenokeyWarning,
    SchemaError,
)
from phenokey.schema import KEYPOINT_COUNT
from phenokey.synth import TEMPLATES, generate_population

from conftest import make_dataset, make_keypoints


def _load_fixture_doc(fixture_path):
    with open(fixture_path, encoding="utf-8") as fh:
        return json.load(fh)


def test_parse_fixture_two_records(fixture_path):
    ds = parse_coco(fixture_path)
    assert len(ds) == 2
    assert ds.role == "test"
    first, second = ds.records
    assert first.image_id == 1 and second.image_id == 2
    assert first.width == 1152 and first.height == 864
    assert first.keypoints.species == "grouper"
    assert second.keypoints.species == "mottled_naked_carp"
    assert first.keypoints.point(1) == (110.0, 430.0, 2)
    assert first.keypoints.point(15)[2] == 1
    assert second.keypoints.point(22) == (0.0, 0.0, 0)


def test_no_keypoints_dropped(fixture_path):
    ds = parse_coco(fixture_path)
    decoded = sum(rec.keypoints.xy.shape[0] for rec in ds)
    assert decoded == KEYPOINT_COUNT * len(ds)


def test_roundtrip_field_equality(fixture_path, tmp_path):
    ds = parse_coco(fixture_path)
    out = tmp_path / "roundtrip.json"
    serialize_coco(ds, out)
    again = parse_coco(out)
    assert again == ds
    for a, b in zip(ds, again):
        assert a.image_id == b.image_id
        assert a.width == b.width and a.height == b.height
        assert np.array_equal(a.keypoints.xy, b.keypoints.xy)
        assert np.array_equal(a.keypoints.v, b.keypoints.v)
        assert a.keypoints.species == b.keypoints.species


def test_double_roundtrip_byte_equal(fixture_path, tmp_path):
    ds = parse_coco(fixture_path)
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    serialize_coco(ds, first)
    serialize_coco(parse_coco(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_bad_triplet_count_names_annotation(fixture_path, tmp_path):
    doc = _load_fixture_doc(fixture_path)
    doc["annotations"][0]["keypoints"] = doc["annotations"][0]["keypoints"][:63]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="annotation 1"):
        parse_coco(path)


def test_empty_annotations_warns(fixture_path, tmp_path):
    doc = _load_fixture_doc(fixture_path)
    doc["annotations"] = []
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(doc))
    with pytest.warns(PhenokeyWarning, match="empty"):
        ds = parse_coco(path)
    assert len(ds) == 0


def test_two_annotations_for_one_image(fixture_path, tmp_path):
    doc = _load_fixture_doc(fixture_path)
    dup = dict(doc["annotations"][0])
    dup["id"] = 99
    doc["annotations"].append(dup)
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError, match="duplicate image id"):
        parse_coco(path)


def test_duplicate_id_in_images_array(fixture_path, tmp_path):
    doc = _load_fixture_doc(fixture_path)
    doc["images"][1]["id"] = doc["images"][0]["id"]
    path = tmp_path / "dupimg.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError):
        parse_coco(path)


def test_annotation_for_unknown_image(fixture_path, tmp_path):
    doc = _load_fixture_doc(fixture_path)
    doc["annotations"][0]["image_id"] = 777
    path = tmp_path / "orphan.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError, match="unknown image id"):
        parse_coco(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"images": [\n  {"id": 1,, }\n]}')
    with pytest.raises(ParseError, match="line"):
        parse_coco(path)


def test_missing_top_level_field(tmp_path):
    path = tmp_path / "nofield.json"
    path.write_text('{"images": []}')
    with pytest.raises(ParseError, match="annotations"):
        parse_coco(path)


def test_validate_clean_fixture(fixture_path):
    assert validate(parse_coco(fixture_path)) == []


def test_validate_negative_visible_coordinate():
    kp = make_keypoints(overrides={5: (-3.0, 10.0)})
    violations = validate(make_dataset([kp]))
    assert len(violations) == 1
    assert violations[0].rule == "visible_nonnegative"
    assert violations[0].keypoint_index == 5


def test_validate_hidden_keypoint_may_be_anywhere():
    v = np.full(KEYPOINT_COUNT, 2)
    v[4] = 0
    kp = make_keypoints(v=v, overrides={5: (-3.0, -99.0)})
    assert validate(make_dataset([kp])) == []


def test_validate_duplicate_ids():
    kp1 = make_keypoints(image_id=7)
    kp2 = make_keypoints(image_id=7)
    violations = validate(make_dataset([kp1, kp2]))
    assert len(violations) == 1
    assert violations[0].rule == "unique_image_id"


def test_validate_out_of_bounds():
    kp = make_keypoints(overrides={9: (2500.0, 100.0)})
    violations = validate(make_dataset([kp], width=2000.0, height=2000.0))
    assert [v.rule for v in violations] == ["visible_within_bounds"]


def test_validate_nonfinite_coordinate():
    kp = make_keypoints(overrides={3: (np.nan, 50.0)})
    violations = validate(make_dataset([kp]))
    assert [v.rule for v in violations] == ["visible_finite"]


def test_validate_bad_visibility_flag():
    v = np.full(KEYPOINT_COUNT, 2)
    v[0] = 5
    violations = validate(make_dataset([make_keypoints(v=v)]))
    assert [v_.rule for v_ in violations] == ["visibility_flag"]


def test_validate_bad_dimensions():
    kp = make_keypoints()
    ds = make_dataset([kp], width=0.0)
    rules = {v.rule for v in validate(ds)}
    assert "positive_dimensions" in rules


def test_serialize_invalid_fails_before_write(tmp_path):
    kp = make_keypoints(overrides={5: (-3.0, 10.0)})
    out = tmp_path / "never.json"
    with pytest.raises(DatasetValidationError):
        serialize_coco(make_dataset([kp]), out)
    assert not out.exists()


def test_serialize_empty_dataset(tmp_path):
    out = tmp_path / "empty.json"
    serialize_coco(Dataset(records=(), role="train"), out)
    with pytest.warns(PhenokeyWarning):
        again = parse_coco(out)
    assert len(again) == 0


def test_parse_serialize_identity_on_synthetic(tmp_path):
    for seed in (0, 1, 2):
        ds = generate_population(TEMPLATES["elongate"], 6, seed=seed, role="test")
        out = tmp_path / f"synth_{seed}.json"
        serialize_coco(ds, out)
        assert parse_coco(out) == ds


def test_records_kept_in_canonical_id_order():
    kp_b = make_keypoints(image_id=9)
    kp_a = make_keypoints(image_id=3)
    ds = make_dataset([kp_b, kp_a])
    assert [r.image_id for r in ds] == [3, 9]


def test_wrong_shape_construction_raises():
    with pytest.raises(ValueError, match="keypoints"):
        KeypointSet(xy=np.zeros((21, 2)), v=np.zeros(21, dtype=int), image_id=1)


def test_unknown_species_rejected_at_construction():
    with pytest.raises(ValueError, match="species"):
        make_keypoints(species="haddock")


def test_dataset_arrays_immutable():
    kp = make_keypoints()
    with pytest.raises(ValueError):
        kp.xy[0, 0] = 1.0
