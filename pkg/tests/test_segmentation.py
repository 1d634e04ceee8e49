"""Confusion counting, the seven metrics (with a dual-implementation oracle),
and the zero-shot evaluation protocol."""
import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from adanet.data import Domain, ImageTile, SegMask
from adanet.segmentation import (
    ConfusionCounts,
    ReferenceUNet,
    SegmenterHandle,
    SegmenterTrainConfig,
    confusion,
    f_score,
    metrics,
    train_reference_segmenter,
    zero_shot_evaluate,
)


def test_confusion_all_ones():
    m = SegMask(np.ones((4, 4), dtype=np.uint8))
    c = confusion(m, SegMask(np.ones((4, 4), dtype=np.uint8)))
    assert (c.tp, c.tn, c.fp, c.fn) == (16, 0, 0, 0)


def test_confusion_complement():
    truth = SegMask((np.arange(16).reshape(4, 4) % 2).astype(np.uint8))
    pred = SegMask(1 - truth.labels)
    c = confusion(pred, truth)
    assert c.tp == 0 and c.tn == 0 and c.fp + c.fn == 16


def test_confusion_matches_pixel_loop():
    rng = np.random.default_rng(0)
    pred = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    truth = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    c = confusion(pred, truth)
    tp = tn = fp = fn = 0
    for i in range(16):
        for j in range(16):
            if pred[i, j] and truth[i, j]:
                tp += 1
            elif pred[i, j] and not truth[i, j]:
                fp += 1
            elif not pred[i, j] and truth[i, j]:
                fn += 1
            else:
                tn += 1
    assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        confusion(np.zeros((4, 4)), np.zeros((4, 5)))


def test_metrics_worked_example():
    report = metrics(ConfusionCounts(tp=2, fp=1, fn=1, tn=12))
    assert report.dice == pytest.approx(2 / 3)
    assert report.iou == pytest.approx(0.5)
    assert report.precision == pytest.approx(2 / 3)
    assert report.sensitivity == pytest.approx(2 / 3)
    assert report.f2 == pytest.approx(2 / 3)
    assert report.accuracy == pytest.approx(14 / 16)
    assert report.specificity == pytest.approx(12 / 13)


def test_metrics_perfect_prediction():
    report = metrics(ConfusionCounts(tp=10, tn=20, fp=0, fn=0))
    for name in ("dice", "f2", "iou", "accuracy", "precision", "specificity", "sensitivity"):
        assert getattr(report, name) == 1.0


def metrics_independent(tp, tn, fp, fn):
    """Second implementation straight from the printed formulas."""
    out = {}
    out["dice"] = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 1.0
    out["iou"] = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    out["accuracy"] = (tp + tn) / (tp + tn + fp + fn) if tp + tn + fp + fn else 1.0
    out["precision"] = tp / (tp + fp) if tp + fp else (1.0 if tp + fn == 0 else 0.0)
    out["sensitivity"] = tp / (tp + fn) if tp + fn else (1.0 if tp + fp == 0 else 0.0)
    out["specificity"] = tn / (tn + fp) if tn + fp else 1.0
    a2 = 4.0
    den = a2 * out["precision"] + out["sensitivity"]
    if den:
        out["f2"] = (1 + a2) * out["precision"] * out["sensitivity"] / den
    else:
        out["f2"] = 1.0 if tp + fp + fn == 0 else 0.0
    return out


def test_metrics_dual_implementation_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 50, size=4))
        report = metrics(ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn))
        expected = metrics_independent(tp, tn, fp, fn)
        for name, value in expected.items():
            assert abs(getattr(report, name) - value) < 1e-12, (name, tp, tn, fp, fn)


@settings(max_examples=200, deadline=None)
@given(
    tp=st.integers(0, 10_000),
    tn=st.integers(0, 10_000),
    fp=st.integers(0, 10_000),
    fn=st.integers(0, 10_000),
)
def test_dice_iou_identity_property(tp, tn, fp, fn):
    report = metrics(ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn))
    assert 0.0 <= report.dice <= 1.0 and 0.0 <= report.iou <= 1.0
    assert abs(report.dice - 2 * report.iou / (1 + report.iou)) < 1e-9


def test_f1_equals_dice():
    rng = np.random.default_rng(2)
    for _ in range(200):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 30, size=4))
        report = metrics(ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn))
        f1 = f_score(report.precision, report.sensitivity, a=1.0,
                     empty_value=1.0 if tp + fp + fn == 0 else 0.0)
        assert f1 == pytest.approx(report.dice, abs=1e-12)


def test_degenerate_conventions():
    empty = metrics(ConfusionCounts(tp=0, tn=16, fp=0, fn=0))
    assert empty.dice == empty.iou == empty.precision == empty.sensitivity == 1.0
    missed = metrics(ConfusionCounts(tp=0, tn=10, fp=0, fn=6))
    assert missed.dice == 0.0 and missed.precision == 0.0
    hallucinated = metrics(ConfusionCounts(tp=0, tn=10, fp=6, fn=0))
    assert hallucinated.dice == 0.0 and hallucinated.sensitivity == 0.0


# -- zero-shot protocol --------------------------------------------------------


def _dataset(n=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        tile = ImageTile(rng.uniform(-1, 1, (16, 16, 4)).astype(np.float32))
        mask = SegMask((rng.random((16, 16)) > 0.7).astype(np.uint8))
        out.append((tile, mask))
    return out


def _oracle_segmenter(dataset):
    answers = {id(tile): mask for tile, mask in dataset}
    lookup = {}
    for tile, mask in dataset:
        lookup[tile.pixels.tobytes()] = mask.labels

    def predict(pixels):
        key = pixels.tobytes()
        if key in lookup:
            return lookup[key].astype(np.float64)
        return np.zeros(pixels.shape[:2])

    return SegmenterHandle(predict=predict, trained_on=Domain.TARGET.value)


def test_oracle_segmenter_scores_all_ones():
    data = _dataset()
    report = zero_shot_evaluate(None, _oracle_segmenter(data), data)
    assert report.dice == report.iou == report.accuracy == 1.0


def test_identity_adaptor_equals_no_adaptor():
    data = _dataset(seed=1)
    seg = _oracle_segmenter(data)
    base = zero_shot_evaluate(None, seg, data)
    adapted = zero_shot_evaluate(lambda px: px, seg, data)
    assert base.to_dict() == adapted.to_dict()


def test_micro_aggregation_equals_summed_counts():
    data = _dataset(5, seed=2)
    rng = np.random.default_rng(3)
    noisy = SegmenterHandle(
        predict=lambda px: (rng.random(px.shape[:2])), trained_on=Domain.TARGET.value
    )
    # aggregate by hand with per-tile confusion, then compare
    rng2 = np.random.default_rng(3)
    totals = ConfusionCounts()
    for tile, mask in data:
        pred = (rng2.random(tile.pixels.shape[:2]) >= 0.5).astype(np.uint8)
        totals = totals + confusion(pred, mask)
    report = zero_shot_evaluate(None, noisy, data)
    assert (report.counts.tp, report.counts.tn, report.counts.fp, report.counts.fn) == (
        totals.tp, totals.tn, totals.fp, totals.fn,
    )


def test_zero_shot_rejects_wrong_provenance():
    data = _dataset()
    seg = _oracle_segmenter(data)
    seg.trained_on = Domain.SOURCE.value
    with pytest.raises(ValueError, match="target domain"):
        zero_shot_evaluate(None, seg, data)


def test_zero_shot_requires_masks():
    data = [(d[0], None) for d in _dataset()]
    with pytest.raises(ValueError, match="mask"):
        zero_shot_evaluate(None, _oracle_segmenter(_dataset()), data)


def test_segmenter_handle_validates_output():
    bad_shape = SegmenterHandle(predict=lambda px: np.zeros((2, 2)))
    with pytest.raises(ValueError, match="does not match"):
        bad_shape.segment(np.zeros((8, 8, 4), dtype=np.float32))
    bad_range = SegmenterHandle(predict=lambda px: np.full(px.shape[:2], 2.0))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        bad_range.segment(np.zeros((8, 8, 4), dtype=np.float32))


# -- reference segmenter ---------------------------------------------------------


def test_reference_unet_output_shape():
    net = ReferenceUNet(in_channels=4, base=4)
    out = net(torch.randn(2, 4, 32, 32))
    assert out.shape == (2, 1, 32, 32)


def _blob_dataset(n=8, seed=0):
    """Bright square on dark background: trivially learnable."""
    rng = np.random.default_rng(seed)
    tiles, masks = [], []
    for _ in range(n):
        img = rng.uniform(-1.0, -0.6, size=(32, 32, 4)).astype(np.float32)
        mask = np.zeros((32, 32), dtype=np.uint8)
        r, c = rng.integers(4, 20, size=2)
        img[r : r + 8, c : c + 8] = rng.uniform(0.6, 1.0, size=(8, 8, 4))
        mask[r : r + 8, c : c + 8] = 1
        tiles.append(ImageTile(img, domain=Domain.TARGET))
        masks.append(SegMask(mask))
    return tiles, masks


def test_reference_segmenter_learns_easy_blobs():
    tiles, masks = _blob_dataset()
    cfg = SegmenterTrainConfig(epochs=30, batch_size=4, base_width=8, seed=0)
    handle = train_reference_segmenter(tiles, masks, cfg)
    report = zero_shot_evaluate(None, handle, list(zip(tiles, masks)))
    assert report.dice >= 0.85


def test_reference_segmenter_deterministic():
    tiles, masks = _blob_dataset(4, seed=1)
    cfg = SegmenterTrainConfig(epochs=2, batch_size=2, base_width=4, seed=5)
    a = train_reference_segmenter(tiles, masks, cfg)
    b = train_reference_segmenter(tiles, masks, cfg)
    probe = tiles[0].pixels
    np.testing.assert_array_equal(a.predict(probe), b.predict(probe))


def test_reference_segmenter_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        train_reference_segmenter([], [], SegmenterTrainConfig(epochs=1))
