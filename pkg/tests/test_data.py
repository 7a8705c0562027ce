import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgrounding.data.augment import augment_sample, resize_bilinear
from stgrounding.data.dataset import collate, load_split
from stgrounding.data.media import (AnnotationRecord, FormatError, ValidationError, decode_frames,
                                    encode_frames, read_annotation, read_frames, write_annotation,
                                    write_frames)
from stgrounding.data.synthetic import (GenerationError, SceneParams, actor_boxes, generate_synthetic_dataset,
                                        make_sample, query_vocabulary, remap_interval, render, sample_scene,
                                        split_sizes, subsample_indices)


def test_frames_roundtrip_bitwise(rng, tmp_path):
    frames = rng.normal(size=(3, 3, 8, 8)).astype(np.float32)
    write_frames(tmp_path / "a.vtfr", frames)
    back = read_frames(tmp_path / "a.vtfr")
    assert back.dtype == np.float32 and back.tobytes() == frames.tobytes()
    raw = (tmp_path / "a.vtfr").read_bytes()
    assert raw[:4] == b"VTFR"
    assert np.frombuffer(raw[4:20], dtype="<u4").tolist() == [3, 3, 8, 8]


def test_truncated_and_bad_magic(rng):
    raw = encode_frames(rng.normal(size=(2, 1, 4, 4)).astype(np.float32))
    with pytest.raises(FormatError, match=f"expected {len(raw)} bytes.*got {len(raw) - 5}"):
        decode_frames(raw[:-5])
    with pytest.raises(FormatError, match="offset 0"):
        decode_frames(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="header"):
        decode_frames(raw[:10])


def _ann(**kw):
    base = dict(video_id="v", T=6, query="the red square moving right", t_s=1, t_e=3,
                boxes=np.full((3, 4), 0.25), seed=0)
    base.update(kw)
    return AnnotationRecord(**base)


def test_annotation_roundtrip(tmp_path):
    a = _ann(boxes=np.random.default_rng(0).uniform(0.1, 0.9, (3, 4)), renderer={"x": 1})
    write_annotation(tmp_path / "a.json", a)
    b = read_annotation(tmp_path / "a.json")
    assert b.to_json() == a.to_json() and b.boxes.tobytes() == a.boxes.tobytes()
    assert set(json.loads((tmp_path / "a.json").read_text())) == {
        "video_id", "T", "query", "t_s", "t_e", "boxes", "seed", "renderer"}


def test_annotation_validation(tmp_path):
    with pytest.raises(ValidationError):
        _ann(t_s=3, t_e=2, boxes=np.zeros((0, 4)))
    with pytest.raises(ValidationError, match="2 boxes"):
        _ann(boxes=np.full((2, 4), 0.25))
    with pytest.raises(ValidationError):
        _ann(boxes=np.full((3, 4), 1.5))
    obj = _ann().to_json()
    obj["t_e"], obj["t_s"] = 1, 3
    (tmp_path / "bad.json").write_text(json.dumps(obj))
    with pytest.raises(ValidationError):
        read_annotation(tmp_path / "bad.json")


def test_generation_deterministic(tmp_path):
    generate_synthetic_dataset(tmp_path / "a", 3, seed=5)
    generate_synthetic_dataset(tmp_path / "b", 3, seed=5)
    for sub in ("videos", "annotations"):
        for f in sorted((tmp_path / "a" / sub).iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()


def test_split_sizes(tmp_path):
    assert split_sizes(10) == (8, 2)
    idx = generate_synthetic_dataset(tmp_path, 10, seed=1)
    assert len(idx.train) == 8 and len(idx.val) == 2
    assert len(load_split(tmp_path, "val")) == 2


def test_moving_right_has_increasing_cx():
    params = SceneParams()
    found = 0
    for i in range(200):
        scene = sample_scene(0, i, params)
        if scene.target.motion == "right" and scene.target.t_end > scene.target.t_start:
            boxes = actor_boxes(scene, scene.target)
            assert np.all(np.diff(boxes[:, 0]) > 0)
            found += 1
    assert found > 0


def test_distractors_never_share_target_triple():
    params = SceneParams()
    for i in range(200):
        scene = sample_scene(3, i, params)
        t = scene.target.triple()
        assert sum(a.triple() == t for a in scene.actors) == 1
        assert 2 <= len(scene.actors) <= 4


def test_boxes_are_exact_mask_bounds():
    params = SceneParams()
    for i in range(30):
        frames, ann = make_sample(2, i, params)
        scene = sample_scene(2, i, params)
        only = type(scene)(**{**scene.__dict__, "actors": [scene.target], "target_index": 0})
        img = render(only)
        for k, t in enumerate(range(ann.t_s, ann.t_e + 1)):
            ys, xs = np.nonzero(img[t].any(axis=0))
            H, W = img.shape[-2:]
            ref = [(xs.min() + xs.max() + 1) / 2 / W, (ys.min() + ys.max() + 1) / 2 / H,
                   (xs.max() + 1 - xs.min()) / W, (ys.max() + 1 - ys.min()) / H]
            assert np.allclose(ann.boxes[k], ref, rtol=0, atol=1e-15)
        # outside its interval the target is invisible
        for t in range(ann.T):
            if not ann.t_s <= t <= ann.t_e:
                assert not img[t].any()


def test_queries_use_closed_vocabulary():
    vocab = query_vocabulary()
    for i in range(50):
        _, ann = make_sample(0, i, SceneParams())
        assert vocab.unk_id not in vocab.encode(ann.query)


def test_canvas_too_small():
    with pytest.raises(GenerationError):
        make_sample(0, 0, SceneParams(height=6, width=6))


def test_subsampling_rule():
    idx = subsample_indices(1000, 200)
    assert len(idx) == 200 and idx[0] == 0 and idx[-1] == 999
    assert np.all(np.diff(idx) > 0)
    assert np.array_equal(subsample_indices(50, 200), np.arange(50))
    params = SceneParams(T_max=20, min_length=3)
    frames, ann = make_sample(0, 0, params, T_raw=64)
    assert frames.shape[0] == 20 and ann.T == 20 and ann.t_s <= ann.t_e


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 500), st.data())
def test_remap_keeps_order(T_raw, data):
    T_max = data.draw(st.integers(2, 200))
    sel = subsample_indices(T_raw, T_max)
    s = data.draw(st.integers(0, T_raw - 1))
    e = data.draw(st.integers(s, T_raw - 1))
    ns, ne = remap_interval(sel, s, e)
    assert 0 <= ns <= ne < len(sel)
    assert ns == int(np.argmin(np.abs(sel - s)))


def test_augment_disabled_is_identity(rng):
    frames, ann = make_sample(0, 1, SceneParams())
    f2, a2 = augment_sample(frames, ann, rng, enabled=False)
    assert f2 is frames and a2 is ann


def test_augment_full_span_is_temporal_identity(rng):
    frames, ann = make_sample(0, 1, SceneParams())
    full = AnnotationRecord(ann.video_id, ann.T, ann.query, 0, ann.T - 1,
                            np.full((ann.T, 4), 0.3), ann.seed)
    f2, a2 = augment_sample(frames, full, rng, spatial=False)
    assert np.array_equal(f2, frames) and (a2.t_s, a2.t_e) == (0, ann.T - 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_augment_keeps_supervision_valid(index, seed):
    frames, ann = make_sample(7, index, SceneParams())
    r = np.random.default_rng(seed)
    f2, a2 = augment_sample(frames, ann, r)
    a2.validate()
    assert f2.shape[1:] == frames.shape[1:]
    assert a2.t_e - a2.t_s == ann.t_e - ann.t_s
    assert np.all((a2.boxes >= 0) & (a2.boxes <= 1))
    x0 = a2.boxes[:, 0] - a2.boxes[:, 2] / 2
    x1 = a2.boxes[:, 0] + a2.boxes[:, 2] / 2
    assert np.all(x0 >= -1e-12) and np.all(x1 <= 1 + 1e-12)


def test_augment_temporal_window_contains_segment(rng):
    frames, ann = make_sample(0, 3, SceneParams())
    for _ in range(50):
        f2, a2 = augment_sample(frames, ann, rng, spatial=False)
        start = ann.t_s - a2.t_s
        assert np.array_equal(f2, frames[start:start + a2.T])


def test_resize_identity_and_constant(rng):
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    assert np.array_equal(resize_bilinear(x, 8, 8), x)
    c = np.full((1, 1, 5, 7), 0.25)
    assert np.allclose(resize_bilinear(c, 9, 4), 0.25)


def test_collate_pads_queries(tmp_path):
    generate_synthetic_dataset(tmp_path, 5, seed=0)
    samples = load_split(tmp_path, "train")
    batch = collate(samples, query_vocabulary())
    assert batch.frames.shape[:2] == (4, 16)
    assert batch.token_ids.shape[0] == 4 and len(batch.tubes) == 4
