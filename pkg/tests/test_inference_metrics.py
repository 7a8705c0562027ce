import json
from fractions import Fraction

import numpy as np
import pytest

from stgrounding.attention_maps import (attention_maps, export_attention_maps, read_csv, read_pgm,
                                        renormalize_rows)
from stgrounding.complexity import complexity_report
from stgrounding.decoder import DecoderAblation, DecoderConfig, SpaceTimeDecoder, run_decoder
from stgrounding.heads import TubePrediction
from stgrounding.inference import DecodedTube, best_pair, decode_tube
from stgrounding.losses import GroundTruthTube
from stgrounding.metrics import aggregate, evaluate_tubes, siou, tiou, viou
from stgrounding.tensor import Tensor


def pair_oracle(ps, pe):
    best, arg = -1.0, None
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            if ps[i] * pe[j] > best:
                best, arg = ps[i] * pe[j], (i, j)
    return arg


def _pred(ps, pe, boxes=None):
    T = len(ps)
    boxes = np.full((T, 4), 0.5) if boxes is None else boxes
    return TubePrediction(Tensor(boxes), Tensor(np.zeros(T)), Tensor(np.zeros(T)),
                          Tensor(np.asarray(ps, float)), Tensor(np.asarray(pe, float)))


def test_decode_examples():
    assert best_pair([0.1, 0.6, 0.3], [0.5, 0.2, 0.3]) == (1, 2)
    assert pair_oracle([0.1, 0.6, 0.3], [0.5, 0.2, 0.3]) == (1, 2)
    T = 6
    ps, pe = np.full(T, 0.01), np.full(T, 0.01)
    ps[0], pe[-1] = 0.95, 0.95
    assert best_pair(ps, pe) == (0, T - 1)
    assert best_pair(np.full(T, 1 / T), np.full(T, 1 / T)) == (0, 1)
    with pytest.raises(ValueError):
        best_pair([1.0], [1.0])


def test_decode_slices_boxes(rng):
    boxes = rng.random((5, 4))
    tube = decode_tube(_pred([0.1, 0.7, 0.1, 0.05, 0.05], [0.0, 0.0, 0.1, 0.8, 0.1], boxes))
    assert (tube.t_s, tube.t_e) == (1, 3)
    assert np.array_equal(tube.boxes, boxes[1:4])


def test_decode_ties_prefer_smallest_indices():
    ps = [0.25, 0.25, 0.25, 0.25]
    pe = [0.0, 0.5, 0.0, 0.5]
    assert best_pair(ps, pe) == pair_oracle(ps, pe) == (0, 1)


def test_decode_matches_oracle_random(rng):
    for _ in range(50):
        T = int(rng.integers(2, 30))
        ps = rng.dirichlet(np.ones(T))
        pe = rng.dirichlet(np.ones(T))
        if rng.random() < 0.3:
            ps = np.round(ps, 1)
            pe = np.round(pe, 1)
        assert best_pair(ps, pe) == pair_oracle(ps, pe)


def test_viou_examples():
    b = np.array([[0.5, 0.5, 0.2, 0.2]] * 4)
    gt = GroundTruthTube(2, 5, b, 10)
    assert viou(DecodedTube(2, 5, b), gt) == 1.0
    assert viou(DecodedTube(7, 8, b[:2]), gt) == 0.0
    # IoU 0.5 on frames 4 and 5: a box of half the width sharing the left edge... built explicitly
    half = np.array([0.45, 0.5, 0.1, 0.2])
    pred = DecodedTube(4, 7, np.array([half, half, half, half]))
    assert viou(pred, gt) == pytest.approx(1.0 / 6, rel=1e-12)


def test_tiou_siou_examples():
    b = np.array([[0.5, 0.5, 0.2, 0.2]] * 4)
    gt = GroundTruthTube(2, 5, b, 10)
    assert tiou(DecodedTube(2, 5, b), gt) == 1.0
    assert tiou(DecodedTube(4, 7, b), gt) == pytest.approx(1 / 3)
    full = np.full((10, 4), 0.1)
    full[2:6] = b
    assert siou(full, gt) == 1.0
    assert viou(DecodedTube(7, 9, full[7:10]), gt) == 0.0


def test_viou_bounded_by_tiou(rng):
    for _ in range(100):
        T = 12
        s, e = sorted(rng.integers(0, T, 2))
        ps, pe = sorted(rng.integers(0, T, 2))
        if pe == ps:
            pe = min(T - 1, ps + 1)
            ps = pe - 1
        gt = GroundTruthTube(int(s), int(e), rng.random((e - s + 1, 4)) * 0.5 + 0.1, T)
        d = DecodedTube(int(ps), int(pe), rng.random((pe - ps + 1, 4)) * 0.5 + 0.1)
        assert 0.0 <= viou(d, gt) <= tiou(d, gt) + 1e-15


def test_aggregate_thresholds_strict():
    r = aggregate([0.3, 0.5, 0.9, 0.0], [1, 1, 1, 1], [1, 1, 1, 1])
    assert r.viou_at == {"0.3": 0.5, "0.5": 0.25}
    assert r.m_viou == pytest.approx(0.425)
    assert set(r.to_json()) == {"m_viou", "viou_at", "m_tiou", "m_siou", "n_samples"}
    assert r.viou_at["0.5"] <= r.viou_at["0.3"]
    with pytest.raises(ValueError):
        aggregate([], [], [])


def test_evaluate_tubes_perfect():
    b = np.array([[0.5, 0.5, 0.2, 0.2]] * 3)
    gt = GroundTruthTube(1, 3, b, 5)
    full = np.full((5, 4), 0.5)
    full[1:4] = b
    r = evaluate_tubes([DecodedTube(1, 3, b)], [gt], [full])
    assert (r.m_viou, r.m_tiou, r.m_siou) == (1.0, 1.0, 1.0)


def test_complexity_examples():
    assert complexity_report(200, 64, 8, 1, 2, 64, 4).encoder_ratio == 1.0
    r = complexity_report(200, 64, 8, 5, 2, 64, 4)
    assert r.encoder_ratio == 0.2 and r.encoder_ratio_exact == Fraction(40, 200)
    r2 = complexity_report(200, 128, 8, 5, 2, 64, 4)
    assert r2.decoder_self_entries == r.decoder_self_entries
    assert r2.encoder_slow_entries / r.encoder_slow_entries == pytest.approx((136 / 72) ** 2)
    with pytest.raises(ValueError):
        complexity_report(0, 1, 1, 1, 1, 1, 1)


def test_complexity_doubling_tokens_quadruples_encoder():
    a = complexity_report(10, 32, 4, 2, 1, 8, 1)
    b = complexity_report(10, 64, 8, 2, 1, 8, 1)
    assert b.encoder_slow_entries == 4 * a.encoder_slow_entries
    assert b.encoder_dense_entries == 4 * a.encoder_dense_entries
    assert b.decoder_self_entries == a.decoder_self_entries


def _decoder_out(rng, T=3, HW=4, L=2):
    dec = SpaceTimeDecoder(DecoderConfig(num_layers=2, d=8, heads=2, ffn_dim=16, dropout=0.0),
                           DecoderAblation(), rng).eval()
    return run_decoder(dec, Tensor(rng.normal(size=(1, T, 8))), Tensor(rng.normal(size=(1, T, HW + L, 8))))


def test_attention_maps_renormalized(rng, tmp_path):
    out = _decoder_out(rng)
    maps = attention_maps(out, 4, 2, 2, 2)
    assert maps.spatial.shape == (3, 2, 2)
    assert np.all(maps.spatial.reshape(3, -1).max(-1) == 1.0)
    assert np.all(maps.text.max(-1) == 1.0)
    assert np.all(maps.temporal.max(0) == 1.0)
    files = export_attention_maps(out, 4, 2, 2, 2, tmp_path)
    assert len(files) == 2 * (2 + 3)
    spatial0 = read_csv(tmp_path / "spatial_cross_attention_t000.csv")
    assert np.array_equal(spatial0, maps.spatial[0])
    img = read_pgm(tmp_path / "spatial_cross_attention_t000.pgm")
    assert img.shape == (2, 2) and img.max() == 255
    assert (tmp_path / "temporal_self_attention.pgm").read_bytes().startswith(b"P5\n3 3\n255\n")


def test_uniform_attention_gives_all_ones():
    assert np.array_equal(renormalize_rows(np.full((3, 4), 0.25)), np.ones((3, 4)))


def test_attention_maps_missing_recordings(rng):
    out = _decoder_out(rng)
    out.A = []
    with pytest.raises(ValueError):
        attention_maps(out, 4, 2, 2, 2)
