import numpy as np
import pytest

from stgrounding import tensor as tt
from stgrounding.backbones import (PatchEmbedding, TextEncoder, Vocabulary, encode_frames, patchify,
                                   sinusoid_2d, tokenize_and_encode_text)
from stgrounding.encoder import (Aggregation, EncoderConfig, SlowBranch, SlowOutput, VideoTextEncoder,
                                 aggregate_slow_fast, clip_count, fast_branch, replicate_clips,
                                 temporal_subsample)
from stgrounding.nn import ConfigError
from stgrounding.tensor import Tensor


def test_vocabulary_roundtrip_and_unk(tmp_path):
    v = Vocabulary(["the", "red", "square"])
    assert v.tokens[:2] == ["<pad>", "<unk>"]
    assert v.encode("The RED   square") == [2, 3, 4]
    assert v.encode("the purple square") == [2, 1, 4]
    with pytest.raises(ValueError):
        v.encode("   ")
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json").tokens == v.tokens
    import json
    assert set(json.loads((tmp_path / "v.json").read_text())) == {"tokens", "pad_id", "unk_id"}


def test_patchify_matches_loop(rng):
    video = rng.random((2, 3, 8, 12))
    patches, h, w = patchify(video, 4)
    assert (h, w) == (2, 3)
    for t in range(2):
        for i in range(h):
            for j in range(w):
                ref = video[t, :, 4 * i:4 * i + 4, 4 * j:4 * j + 4].reshape(-1)
                assert np.array_equal(patches[t, i * w + j], ref)


def test_encode_frames_examples(rng):
    bb = PatchEmbedding(3, 4, 8, rng)
    feats = encode_frames(bb, rng.random((1, 3, 8, 8)))
    assert feats.tokens.shape == (1, 4, 8) and (feats.H, feats.W) == (2, 2)
    bb.proj.bias.data[...] = 0.0
    zero = encode_frames(bb, np.zeros((1, 3, 8, 8)))
    assert np.array_equal(zero.tokens.data, np.zeros((1, 4, 8)))
    frame = rng.random((3, 8, 8))
    two = encode_frames(bb, np.stack([frame, frame]))
    assert np.array_equal(two.tokens.data[0], two.tokens.data[1])
    with pytest.raises(ValueError, match="P=4"):
        encode_frames(bb, np.zeros((1, 3, 6, 8)))


def test_sinusoid_2d_layout():
    pe = sinusoid_2d(2, 3, 8)
    assert pe.shape == (6, 8)
    row = tt.sinusoid_table(2, 4)
    col = tt.sinusoid_table(3, 4)
    for i in range(2):
        for j in range(3):
            assert np.array_equal(pe[i * 3 + j], np.concatenate([row[i], col[j]]))


def test_text_encoder_examples(rng):
    vocab = Vocabulary(["the", "red", "square"])
    enc = TextEncoder(len(vocab), 8, 8, 2, 16, rng, dropout=0.0).eval()
    a = tokenize_and_encode_text(enc, vocab, "the red square")
    assert a.L == 3
    b = tokenize_and_encode_text(enc, vocab, "the red square")
    assert np.array_equal(a.features.data, b.features.data)
    c = tokenize_and_encode_text(enc, vocab, "the blue square")
    assert c.L == 3 and c.token_ids[1] == vocab.unk_id


def test_temporal_subsample_examples():
    x = Tensor(np.arange(10, dtype=float).reshape(10, 1, 1))
    assert temporal_subsample(x, 5).data.ravel().tolist() == [0.0, 5.0]
    x7 = Tensor(np.arange(7, dtype=float).reshape(7, 1, 1))
    assert temporal_subsample(x7, 5).data.ravel().tolist() == [0.0, 5.0]
    assert clip_count(7, 5) == 2
    assert np.array_equal(temporal_subsample(x, 1).data, x.data)


def test_replicate_truncates():
    h = Tensor(np.array([10.0, 20.0]).reshape(2, 1, 1))
    assert replicate_clips(h, 5, 7).data.ravel().tolist() == [10.0] * 5 + [20.0] * 2


def _text(rng, B=1, L=3, d=8):
    from stgrounding.backbones import TextFeatures
    return TextFeatures(Tensor(rng.normal(size=(B, L, d))), np.full((B, L), 2))


def test_slow_branch_zero_depth_and_clip_independence(rng):
    cfg = EncoderConfig(k=2, num_layers=0, d=8, heads=2, ffn_dim=16, dropout=0.0)
    text = _text(rng)
    x = Tensor(rng.normal(size=(1, 1, 4, 8)))
    out = SlowBranch(cfg, rng)(x, text)
    assert np.array_equal(out.h.data[0, 0], np.concatenate([x.data[0, 0], text.features.data[0]]))

    cfg = EncoderConfig(k=2, num_layers=2, d=8, heads=2, ffn_dim=16, dropout=0.0)
    slow = SlowBranch(cfg, rng).eval()
    clip = rng.normal(size=(4, 8))
    same = slow(Tensor(np.stack([clip, clip])[None]), text)
    assert np.array_equal(same.h.data[0, 0], same.h.data[0, 1])
    base = rng.normal(size=(1, 2, 4, 8))
    pert = base.copy()
    pert[0, 0] += rng.normal(size=(4, 8))
    a, b = slow(Tensor(base), text), slow(Tensor(pert), text)
    assert np.array_equal(a.h.data[0, 1], b.h.data[0, 1])
    assert not np.array_equal(a.h.data[0, 0], b.h.data[0, 0])


def _frames(rng, T=7, B=1):
    from stgrounding.backbones import FrameFeatures
    return FrameFeatures(Tensor(rng.normal(size=(B, T, 4, 8))), sinusoid_2d(2, 2, 8), 2, 2)


def test_fast_branch_disabled_is_error(rng):
    enc = VideoTextEncoder(EncoderConfig(k=1, d=8, heads=2, ffn_dim=16), rng)
    with pytest.raises(ConfigError):
        fast_branch(enc, _frames(rng))
    enc = VideoTextEncoder(EncoderConfig(k=4, d=8, heads=2, ffn_dim=16, fast_enabled=False), rng)
    with pytest.raises(ConfigError):
        fast_branch(enc, _frames(rng))


def test_fast_branch_zero_weights(rng):
    enc = VideoTextEncoder(EncoderConfig(k=2, d=8, heads=2, ffn_dim=16), rng)
    for p in enc.fast.parameters():
        p.data[...] = 0.0
    assert np.array_equal(fast_branch(enc, _frames(rng)).data, np.zeros((1, 7, 4, 8)))


def test_fast_branch_spatial_pooled_permutation_invariant(rng):
    enc = VideoTextEncoder(EncoderConfig(k=2, d=8, heads=2, ffn_dim=16,
                                         aggregation_variant="spatial_pooled"), rng)
    feats = _frames(rng, T=2)
    feats.pos = np.zeros((4, 8))
    tokens = feats.tokens.data.copy()
    tokens[0, 1] = tokens[0, 0][[2, 0, 3, 1]]
    feats.tokens = Tensor(tokens)
    out = fast_branch(enc, feats).data
    assert np.allclose(out[0, 0], out[0, 1], rtol=0, atol=1e-15)


@pytest.mark.parametrize("variant", ["sum_linear", "gated_product", "fast_transformer", "spatial_pooled"])
def test_fast_branch_sends_no_gradient_to_backbone(variant, rng):
    from stgrounding.backbones import PatchEmbedding
    bb = PatchEmbedding(3, 4, 8, rng)
    enc = VideoTextEncoder(EncoderConfig(k=2, d=8, heads=2, ffn_dim=16, dropout=0.0,
                                         aggregation_variant=variant), rng)
    video = rng.random((1, 4, 3, 8, 8))
    with tt.Tape() as tape:
        f = fast_branch(enc, bb(video))
        loss = (f * f).sum()
    tt.backward(loss, tape)
    assert bb.proj.weight.grad is None or not bb.proj.weight.grad.any()
    assert enc.fast.proj.weight.grad.any()


def test_aggregation_examples(rng):
    cfg = EncoderConfig(k=5, d=8, heads=2, ffn_dim=16)
    h = Tensor(rng.normal(size=(1, 2, 6, 8)))
    slow = SlowOutput(h, 4)
    out = aggregate_slow_fast(slow, None, 7, 5, None)
    for t in range(7):
        assert np.array_equal(out.F.data[0, t], h.data[0, t // 5])
    g = Aggregation(cfg, rng)
    g.proj.bias.data[...] = 0.0
    zeros = Tensor(np.zeros((1, 7, 4, 8)))
    out = aggregate_slow_fast(slow, zeros, 7, 5, g)
    hv = replicate_clips(h, 5, 7).data[..., :4, :]
    expected = hv @ g.proj.weight.data.T + hv
    assert np.allclose(out.F_v.data, expected, rtol=1e-14, atol=1e-15)
    assert np.array_equal(out.h_s.data, replicate_clips(h, 5, 7).data[..., 4:, :])


def test_gated_product_formula(rng):
    cfg = EncoderConfig(k=2, d=8, heads=2, ffn_dim=16, aggregation_variant="gated_product")
    g = Aggregation(cfg, rng)
    hv, f = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    assert np.allclose(g(Tensor(hv), Tensor(f)).data, 1 / (1 + np.exp(-hv * f)), rtol=1e-14)


def test_unknown_variant_is_config_error():
    with pytest.raises(ConfigError):
        EncoderConfig(aggregation_variant="concat")


def test_k1_enabled_equals_disabled(rng):
    feats, text = _frames(rng, T=5), _text(rng)
    on = VideoTextEncoder(EncoderConfig(k=1, d=8, heads=2, ffn_dim=16, dropout=0.0, fast_enabled=True),
                          np.random.default_rng(0)).eval()
    off = VideoTextEncoder(EncoderConfig(k=1, d=8, heads=2, ffn_dim=16, dropout=0.0, fast_enabled=False),
                           np.random.default_rng(0)).eval()
    assert np.array_equal(on(feats, text).F.data, off(feats, text).F.data)
    slow = on.slow(feats.with_pos(), text)
    assert np.array_equal(on(feats, text).F.data, slow.h.data)


def test_replication_law(rng):
    enc = VideoTextEncoder(EncoderConfig(k=3, d=8, heads=2, ffn_dim=16, dropout=0.0,
                                         fast_enabled=False), rng).eval()
    F = enc(_frames(rng, T=7), _text(rng)).F.data
    for t in range(7):
        assert np.array_equal(F[0, t], F[0, (t // 3) * 3])


def test_batch_permutation(rng):
    enc = VideoTextEncoder(EncoderConfig(k=2, d=8, heads=2, ffn_dim=16, dropout=0.0), rng).eval()
    feats, text = _frames(rng, T=4, B=3), _text(rng, B=3)
    out = enc(feats, text).F.data
    perm = [2, 0, 1]
    feats.tokens = Tensor(feats.tokens.data[perm])
    text.features = Tensor(text.features.data[perm])
    out_p = enc(feats, text).F.data
    assert np.allclose(out_p, out[perm], rtol=0, atol=1e-13)
