import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbodyid.data import (DOMAINS, BoundingBox, DatasetManifest, ImageRecord, InvalidBoxError, ManifestError,
                          SyntheticConfig, assign_labels_by_face_overlap, generate_synthetic_dataset, iou,
                          load_manifest, save_manifest)
from xbodyid.data.images import load_image
from xbodyid.data.synth import render_subject


def B(*c):
    return BoundingBox(*c)


def test_iou_examples():
    assert iou(B(0, 0, 10, 10), B(0, 0, 10, 10)) == 1.0
    assert iou(B(0, 0, 10, 10), B(20, 20, 30, 30)) == 0.0
    # intersection 50, union 150
    assert iou(B(0, 0, 10, 10), B(5, 0, 15, 10)) == pytest.approx(1 / 3)


def test_degenerate_box_rejected():
    with pytest.raises(InvalidBoxError):
        B(0, 0, 0, 10)
    with pytest.raises(InvalidBoxError):
        B(5, 5, 1, 10)


boxes = st.tuples(
    st.integers(0, 50), st.integers(0, 50), st.integers(1, 40), st.integers(1, 40)
).map(lambda t: B(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a))
    assert (v == pytest.approx(1.0)) == (a == b)
    disjoint = a.x_max <= b.x_min or b.x_max <= a.x_min or a.y_max <= b.y_min or b.y_max <= a.y_min
    assert (v == 0.0) == disjoint


def test_labels_single_face():
    body = B(0, 0, 10, 10)
    face = B(0, 0, 10, 5)  # iou 0.5
    (out,) = assign_labels_by_face_overlap([body], [(face, "alice")])
    assert out == (body, "alice")


def test_labels_ambiguous_two_faces():
    body = B(0, 0, 10, 10)
    f1, f2 = B(0, 0, 10, 9), B(0, 1, 10, 10)  # both iou 0.9
    assert iou(body, f1) > 0.75 and iou(body, f2) > 0.75
    (out,) = assign_labels_by_face_overlap([body], [(f1, "a"), (f2, "b")])
    assert out[1] is None


def test_labels_no_overlap_and_empty():
    body = B(0, 0, 10, 10)
    assert assign_labels_by_face_overlap([body], [(B(50, 50, 60, 60), "a")])[0][1] is None
    assert assign_labels_by_face_overlap([body], [])[0][1] is None


def test_labels_max_overlap_wins():
    body = B(0, 0, 10, 10)
    faces = [(B(0, 0, 10, 3), "small"), (B(0, 0, 10, 6), "big")]
    assert assign_labels_by_face_overlap([body], faces)[0][1] == "big"


@settings(max_examples=60)
@given(st.lists(st.tuples(boxes, st.sampled_from("abcd")), max_size=5), st.lists(boxes, min_size=1, max_size=4),
       st.randoms(use_true_random=False))
def test_labels_order_invariant_and_never_ambiguous(faces, bodies, rnd):
    out = assign_labels_by_face_overlap(bodies, faces)
    shuffled = list(faces)
    rnd.shuffle(shuffled)
    assert out == assign_labels_by_face_overlap(bodies, shuffled)
    for body, label in out:
        if sum(iou(body, f) > 0.75 for f, _ in faces) >= 2:
            assert label is None


def test_threshold_validated():
    with pytest.raises(ValueError):
        assign_labels_by_face_overlap([], [], threshold=0.0)


def _record(i, **kw):
    base = dict(subject_id=f"s{i % 3}", domain=DOMAINS[i % 4], template_id=f"t{i}", media_id=f"m{i}",
                image_path=f"img/{i}.png", box=B(1, 2, 30, 40) if i % 2 else None,
                split="train" if i < 6 else "test")
    base.update(kw)
    return ImageRecord(**base)


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([_record(i) for i in range(10)])
    path = save_manifest(m, tmp_path / "m.jsonl")
    assert load_manifest(path) == m
    assert m.subject_index["s0"] == [0, 3, 6, 9]


def test_manifest_missing_field_names_line(tmp_path):
    p = tmp_path / "m.jsonl"
    good = _record(0).to_json()
    bad = dict(_record(1).to_json())
    del bad["domain"]
    p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(ManifestError, match=r"line 2: missing field 'domain'"):
        load_manifest(p)


def test_manifest_bad_domain_and_json(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(dict(_record(0).to_json(), domain="UV")) + "\n")
    with pytest.raises(ManifestError, match="line 1: field 'domain'"):
        load_manifest(p)
    p.write_text("{not json\n")
    with pytest.raises(ManifestError, match="line 1"):
        load_manifest(p)


def test_manifest_duplicate_media():
    with pytest.raises(ManifestError, match="duplicate media_id: m1"):
        DatasetManifest([_record(1), _record(2, media_id="m1")])


def test_synthetic_counts_and_domains(tmp_path):
    cfg = SyntheticConfig(n_subjects=20, images_per_subject_per_domain=4, image_height=64, image_width=32)
    m = generate_synthetic_dataset(cfg, tmp_path)
    assert len(m) == 20 * 4 * 4
    for s, doms in m.subject_domains().items():
        assert doms == set(DOMAINS)
    train = {r.subject_id for r in m.records if r.split == "train"}
    test = {r.subject_id for r in m.records if r.split == "test"}
    assert train and test and not train & test


def test_synthetic_deterministic(tmp_path):
    cfg = SyntheticConfig(n_subjects=3, images_per_subject_per_domain=2, image_height=64, image_width=32, seed=7)
    generate_synthetic_dataset(cfg, tmp_path / "a")
    generate_synthetic_dataset(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synthetic_default_size_patch_grid(tmp_path):
    cfg = SyntheticConfig(n_subjects=2, images_per_subject_per_domain=1)
    m = generate_synthetic_dataset(cfg, tmp_path)
    img = load_image(m, m.records[0], 384, 128)
    assert img.shape == (3, 384, 128)
    assert (img.shape[1] // 16, img.shape[2] // 16) == (24, 8)


def test_synthetic_config_invalid():
    with pytest.raises(ValueError):
        SyntheticConfig(n_subjects=1)
    with pytest.raises(ValueError):
        SyntheticConfig(image_height=100)


def test_inverted_domains_defeat_pixel_matching():
    """VIS and LWIR renders of the same subject are anti-correlated at pixel level."""
    cfg = SyntheticConfig(n_subjects=2, images_per_subject_per_domain=1, image_height=128, image_width=64)
    imgs = render_subject(cfg, 0)
    vis = imgs["VIS"][0].astype(float).mean(-1).ravel()
    lwir = imgs["LWIR"][0].astype(float).mean(-1).ravel()
    assert np.corrcoef(vis, lwir)[0, 1] < 0


def test_load_image_crops_box(tmp_path, small_dataset):
    m, _ = small_dataset
    rec = m.records[0]
    boxed = ImageRecord(**{**rec.__dict__, "box": B(0, 0, 16, 32), "media_id": "crop"})
    img = load_image(m, boxed, 64, 32)
    assert img.shape == (3, 64, 32)
    assert img.min() >= -1 and img.max() <= 1
