import math

import numpy as np
import pytest

from stgrounding.decoder import (DecoderAblation, DecoderConfig, SpaceTimeDecoder,
                                 build_cross_attention_mask, build_time_queries, run_decoder)
from stgrounding.encoder import EncoderOutput
from stgrounding.nn import ConfigError
from stgrounding.tensor import Tensor


def _decoder(rng, ablation=DecoderAblation(), layers=2, mode="blocked"):
    cfg = DecoderConfig(num_layers=layers, d=8, heads=2, ffn_dim=16, dropout=0.0, cross_attention=mode)
    return SpaceTimeDecoder(cfg, ablation, rng).eval()


def test_time_query_examples(rng):
    obj = Tensor(np.zeros((1, 4)))
    q = build_time_queries(6, 4, obj)
    assert q.data[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    q2 = build_time_queries(2, 2, Tensor(np.zeros((1, 2))))
    assert q2.data[1, 0] == pytest.approx(0.84147, abs=1e-5)
    assert q2.data[1, 1] == pytest.approx(0.54030, abs=1e-5)
    assert q2.data[1].tolist() == [math.sin(1.0), math.cos(1.0)]
    obj = Tensor(rng.normal(size=(1, 4)))
    off = build_time_queries(6, 4, obj, DecoderAblation(use_time_encoding=False))
    assert np.array_equal(off.data[0], off.data[5])
    with pytest.raises(ConfigError):
        build_time_queries(3, 5, Tensor(np.zeros((1, 5))))


def test_time_encoding_is_injective():
    from stgrounding.tensor import sinusoid_table
    pe = sinusoid_table(10_000, 8)
    assert len(np.unique(np.round(pe, 12), axis=0)) == 10_000


def test_cross_mask_examples():
    m = build_cross_attention_mask(2, 2, 1)
    assert m.astype(int).tolist() == [[1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1]]
    assert build_cross_attention_mask(1, 3, 2).all()
    m = build_cross_attention_mask(5, 4, 3)
    assert m.sum() == 5 * 7 and (m.sum(axis=1) == 7).all()


def test_zero_layers_returns_queries(rng):
    dec = _decoder(rng, layers=0)
    q = Tensor(rng.normal(size=(1, 3, 8)))
    out = run_decoder(dec, q, Tensor(rng.normal(size=(1, 3, 5, 8))))
    assert out.Q == [] and out.final is q


def test_self_attention_rows_normalized(rng):
    dec = _decoder(rng)
    out = run_decoder(dec, Tensor(rng.normal(size=(2, 5, 8))), Tensor(rng.normal(size=(2, 5, 6, 8))))
    assert len(out.A) == 2
    for A in out.A:
        assert A.shape == (2, 2, 5, 5)
        assert np.all(np.abs(A.data.sum(-1) - 1.0) <= 1e-9)


def test_blocked_and_dense_agree(rng):
    F = Tensor(rng.normal(size=(2, 4, 5, 8)))
    q = Tensor(rng.normal(size=(2, 4, 8)))
    key_mask = np.ones((2, 5), dtype=bool)
    key_mask[1, 4] = False
    a = run_decoder(_decoder(np.random.default_rng(7)), q, F, key_mask)
    b = run_decoder(_decoder(np.random.default_rng(7), mode="dense"), q, F, key_mask)
    for la in range(2):
        assert np.allclose(a.Q[la].data, b.Q[la].data, rtol=1e-12, atol=1e-12)
        assert np.allclose(a.dense_cross(la), b.dense_cross(la), rtol=1e-12, atol=1e-14)
    assert np.all(b.dense_cross(0)[1, :, :, 4::5] == 0.0)


@pytest.mark.parametrize("mode", ["blocked", "dense"])
def test_cross_weights_zero_off_block(mode, rng):
    T, S = 4, 5
    out = run_decoder(_decoder(rng, mode=mode), Tensor(rng.normal(size=(1, T, 8))),
                      Tensor(rng.normal(size=(1, T, S, 8))))
    off = ~build_cross_attention_mask(T, S - 2, 2)
    for layer in range(2):
        w = out.dense_cross(layer)
        assert np.all(w[..., off] == 0.0)
        assert np.all(np.abs(w.sum(-1) - 1.0) <= 1e-9)


def test_frame_independence_blocked(rng):
    abl = DecoderAblation(False, False)
    dec = _decoder(rng, abl)
    T, S = 4, 5
    F = rng.normal(size=(1, T, S, 8))
    base = dec(EncoderOutput(Tensor(F), 3)).final.data
    F2 = F.copy()
    F2[0, 2] += rng.normal(size=(S, 8))
    pert = dec(EncoderOutput(Tensor(F2), 3)).final.data
    for t in range(T):
        if t != 2:
            assert np.array_equal(base[0, t], pert[0, t])
    assert not np.array_equal(base[0, 2], pert[0, 2])


def test_shape_mismatch(rng):
    from stgrounding.tensor import ShapeError
    with pytest.raises(ShapeError):
        run_decoder(_decoder(rng), Tensor(np.zeros((1, 3, 8))), Tensor(np.zeros((1, 4, 5, 8))))


def test_self_attention_ablation_records_nothing(rng):
    dec = _decoder(rng, DecoderAblation(True, False))
    out = run_decoder(dec, Tensor(rng.normal(size=(1, 3, 8))), Tensor(rng.normal(size=(1, 3, 5, 8))))
    assert out.A == [] and len(out.Q) == 2
    assert not any(n.startswith("blocks.0.self_attn") for n, _ in dec.named_parameters())
